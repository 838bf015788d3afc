use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_inputs, check_params, project};
use super::*;

fn rand_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

#[test]
fn linear_identity() {
    let mut store = ParamStore::new();
    let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
    let w = store.add("w", eye).unwrap();
    let b = store.add("b", Tensor::zeros(&[3])).unwrap();
    let mut tape = Tape::new(&store);
    let xt = Tensor::new(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
    let x = tape.input(xt.clone());
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y), &xt);
}

#[test]
fn linear_weight_gradient_is_column_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "fc", 3, 4, &mut rng).unwrap();
    let xt = rand_tensor(&[5, 3], &mut rng);
    let mut tape = Tape::new(&store);
    let x = tape.input(xt.clone());
    let y = lin.forward(&mut tape, x).unwrap();
    let loss = tape.sum(y);
    let g = tape.backward(loss).unwrap();
    let gw = g.param(lin.w).unwrap();
    for i in 0..3 {
        let col_sum: f64 = (0..5).map(|r| xt.data()[r * 3 + i]).sum();
        for o in 0..4 {
            assert!((gw[i * 4 + o] - col_sum).abs() < 1e-12);
        }
    }
    assert!(g.param(lin.b).unwrap().iter().all(|&v| (v - 5.0).abs() < 1e-12));
}

#[test]
fn linear_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let lin = Linear::new(&mut store, "fc", 3, 4, &mut rng).unwrap();
    let xt = rand_tensor(&[2, 3], &mut rng);
    let f = |t: &mut Tape, v: &[Var]| {
        let y = lin.forward(t, v[0])?;
        project(t, y, 7)
    };
    assert!(check_inputs(&store, &[xt.clone()], f, 1e-6).unwrap() < 1e-6);
    assert!(check_params(&store, &[xt], f, 1e-6, 64).unwrap() < 1e-6);
}

#[test]
fn shared_mlp_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(&mut store, "mlp", &[3, 8, 8], true, &mut rng).unwrap();
    let pts = rand_tensor(&[1, 4, 3], &mut rng);

    // K=1 reduces to a plain MLP on a single row
    let mut tape = Tape::new(&store);
    let one = tape.input(Tensor::new(&[1, 1, 3], pts.data()[..3].to_vec()).unwrap());
    let flat = tape.input(Tensor::new(&[1, 3], pts.data()[..3].to_vec()).unwrap());
    let a = mlp.forward(&mut tape, one).unwrap();
    let b = mlp.forward(&mut tape, flat).unwrap();
    assert_eq!(tape.value(a).data(), tape.value(b).data());

    // permuting points permutes outputs
    let perm = [2usize, 0, 3, 1];
    let permuted: Vec<f64> = perm.iter().flat_map(|&i| pts.data()[i * 3..i * 3 + 3].to_vec()).collect();
    let x = tape.input(pts.clone());
    let xp = tape.input(Tensor::new(&[1, 4, 3], permuted).unwrap());
    let y = mlp.forward(&mut tape, x).unwrap();
    let yp = mlp.forward(&mut tape, xp).unwrap();
    for (j, &i) in perm.iter().enumerate() {
        assert_eq!(
            &tape.value(yp).data()[j * 8..j * 8 + 8],
            &tape.value(y).data()[i * 8..i * 8 + 8]
        );
    }

    let f = |t: &mut Tape, v: &[Var]| {
        let y = mlp.forward(t, v[0])?;
        project(t, y, 3)
    };
    assert!(check_inputs(&store, &[pts.clone()], f, 1e-6).unwrap() < 1e-6);
    assert!(check_params(&store, &[pts], f, 1e-6, 64).unwrap() < 1e-6);
}

#[test]
fn point_max_pool() {
    let store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xt = rand_tensor(&[2, 1, 5], &mut rng);
    let mut tape = Tape::new(&store);
    let x = tape.input(xt.clone());
    let y = tape.max_pool_points(x).unwrap();
    assert_eq!(tape.value(y).data(), xt.data());

    let xt = rand_tensor(&[1, 6, 3], &mut rng);
    let rev: Vec<f64> = (0..6).rev().flat_map(|i| xt.data()[i * 3..i * 3 + 3].to_vec()).collect();
    let x = tape.input_with_grad(xt.clone());
    let xr = tape.input(Tensor::new(&[1, 6, 3], rev).unwrap());
    let y = tape.max_pool_points(x).unwrap();
    let yr = tape.max_pool_points(xr).unwrap();
    assert_eq!(tape.value(y).data(), tape.value(yr).data());
    let loss = tape.sum(y);
    let g = tape.backward(loss).unwrap();
    let gx = g.wrt(x).unwrap();
    for ch in 0..3 {
        let col: Vec<f64> = (0..6).map(|k| gx[k * 3 + ch]).collect();
        assert_eq!(col.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(col.iter().filter(|&&v| v == 0.0).count(), 5);
    }
    let f = |t: &mut Tape, v: &[Var]| {
        let y = t.max_pool_points(v[0])?;
        project(t, y, 5)
    };
    assert!(check_inputs(&store, &[xt], f, 1e-6).unwrap() < 1e-6);
}

#[test]
fn max_ties_route_to_first_index() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.input_with_grad(Tensor::new(&[1, 3, 1], vec![2.0, 2.0, 1.0]).unwrap());
    let y = tape.max_pool_points(x).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[1.0, 0.0, 0.0]);
}

#[test]
fn view_pool_properties() {
    let store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let xt = rand_tensor(&[1, 4, 5], &mut rng);
    let mut tape = Tape::new(&store);
    let single = tape.input(Tensor::new(&[1, 1, 5], xt.data()[..5].to_vec()).unwrap());
    let s = tape.view_pool(single).unwrap();
    assert_eq!(tape.value(s).data(), &xt.data()[..5]);
    let swapped: Vec<f64> = [3usize, 1, 0, 2].iter().flat_map(|&v| xt.data()[v * 5..v * 5 + 5].to_vec()).collect();
    let a = tape.input(xt.clone());
    let b = tape.input(Tensor::new(&[1, 4, 5], swapped).unwrap());
    let ya = tape.view_pool(a).unwrap();
    let yb = tape.view_pool(b).unwrap();
    assert_eq!(tape.value(ya).data(), tape.value(yb).data());
    let f = |t: &mut Tape, v: &[Var]| {
        let y = t.view_pool(v[0])?;
        project(t, y, 9)
    };
    assert!(check_inputs(&store, &[xt], f, 1e-6).unwrap() < 1e-6);
}

/// Direct six-loop cross-correlation used as the conv2d oracle.
fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let (bn, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; bn * o * oh * ow];
    for n in 0..bn {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[oc];
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                                    continue;
                                }
                                acc += x.data()[((n * c + ic) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((oc * c + ic) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((n * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_naive_loops_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let conv = Conv2d::new(&mut store, "conv", 2, 3, 3, 1, 1, &mut rng).unwrap();
    store.get_mut(conv.b).value = rand_tensor(&[3], &mut rng);
    let xt = rand_tensor(&[1, 2, 5, 5], &mut rng);
    for (stride, pad) in [(1, 1), (2, 0), (2, 1)] {
        let conv = Conv2d { stride, pad, ..conv.clone() };
        let mut tape = Tape::new(&store);
        let x = tape.input(xt.clone());
        let y = conv.forward(&mut tape, x).unwrap();
        let expect = naive_conv(&xt, &store.get(conv.w).value, store.get(conv.b).value.data(), stride, pad);
        let got = tape.value(y).data();
        assert_eq!(got.len(), expect.len());
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let f = |t: &mut Tape, v: &[Var]| {
            let y = conv.forward(t, v[0])?;
            project(t, y, 11)
        };
        assert!(check_inputs(&store, &[xt.clone()], f, 1e-6).unwrap() < 1e-5);
        assert!(check_params(&store, &[xt.clone()], f, 1e-6, 64).unwrap() < 1e-5);
    }
}

#[test]
fn conv2d_simple_kernels() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::new(&[1, 1, 1, 1], vec![2.5]).unwrap()).unwrap();
    let b = store.add("b", Tensor::new(&[1], vec![1.0]).unwrap()).unwrap();
    let avg = store.add("avg", Tensor::from_fn(&[1, 1, 3, 3], |_| 1.0 / 9.0)).unwrap();
    let zb = store.add("zb", Tensor::zeros(&[1])).unwrap();
    let mut tape = Tape::new(&store);
    let x = tape.input(Tensor::from_fn(&[1, 1, 4, 4], |i| i as f64));
    let (wv, bv) = (tape.param(w), tape.param(b));
    let y = tape.conv2d(x, wv, bv, 1, 0).unwrap();
    for (i, v) in tape.value(y).data().iter().enumerate() {
        assert_eq!(*v, 2.5 * i as f64 + 1.0);
    }
    let c = tape.input(Tensor::from_fn(&[1, 1, 6, 6], |_| 0.7));
    let (av, zv) = (tape.param(avg), tape.param(zb));
    let y = tape.conv2d(c, av, zv, 1, 1).unwrap();
    let out = tape.value(y).data();
    for r in 1..5 {
        for col in 1..5 {
            assert!((out[r * 6 + col] - 0.7).abs() < 1e-12);
        }
    }
    let bad = tape.input(Tensor::zeros(&[1, 2, 4, 4]));
    assert!(tape.conv2d(bad, av, zv, 1, 1).is_err());
}

#[test]
fn max_pool2d_properties() {
    let store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let xt = rand_tensor(&[1, 2, 4, 6], &mut rng);
    let mut tape = Tape::new(&store);
    let x = tape.input(xt.clone());
    let y = tape.max_pool2d(x, 1, 1).unwrap();
    assert_eq!(tape.value(y), &xt);
    let c = tape.input(Tensor::from_fn(&[1, 1, 4, 4], |_| 3.0));
    let y = tape.max_pool2d(c, 2, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0; 4]);
    let f = |t: &mut Tape, v: &[Var]| {
        let y = t.max_pool2d(v[0], 2, 2)?;
        project(t, y, 13)
    };
    assert!(check_inputs(&store, &[xt], f, 1e-6).unwrap() < 1e-6);
}

#[test]
fn power_normalize_gradient() {
    let store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let xt = rand_tensor(&[4, 6], &mut rng);
    let f = |t: &mut Tape, v: &[Var]| {
        let y = t.power_normalize(v[0], 0.5)?;
        project(t, y, 15)
    };
    assert!(check_inputs(&store, &[xt], f, 1e-6).unwrap() < 1e-6);
}

#[test]
fn ignored_input_gets_zero_gradient() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let a = tape.input_with_grad(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let b = tape.input_with_grad(Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
    let _unused = tape.relu(b);
    let loss = tape.sum(a);
    let g = tape.backward(loss).unwrap();
    assert!(g.wrt(b).unwrap_or(&[0.0, 0.0]).iter().all(|&v| v == 0.0));
    assert_eq!(g.wrt(a).unwrap(), &[1.0, 1.0]);
}

#[test]
fn non_finite_values_are_reported() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    tape.set_check_finite(true);
    let a = tape.input_with_grad(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    let b = tape.scale(a, f64::INFINITY);
    let loss = tape.sum(b);
    assert!(matches!(tape.backward(loss), Err(crate::Error::NonFinite(_))));
}

#[test]
fn concat_and_broadcast_gradients() {
    let store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let a = rand_tensor(&[3, 2], &mut rng);
    let g = rand_tensor(&[1, 4], &mut rng);
    let f = |t: &mut Tape, v: &[Var]| {
        let gb = t.broadcast_rows(v[1], 3)?;
        let y = t.concat_cols(v[0], gb)?;
        let y = t.tanh(y);
        project(t, y, 17)
    };
    assert!(check_inputs(&store, &[a, g], f, 1e-6).unwrap() < 1e-6);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[3, 16, 1], false, &mut rng).unwrap();
        let xt = rand_tensor(&[8, 3], &mut rng);
        let adam = Adam::new(1e-2);
        for _ in 0..20 {
            let grads = {
                let mut tape = Tape::new(&store);
                let x = tape.input(xt.clone());
                let y = mlp.forward(&mut tape, x).unwrap();
                let y = tape.relu(y);
                let loss = tape.mean(y);
                tape.backward(loss).unwrap()
            };
            store.accumulate(&grads);
            adam.step(&mut store);
        }
        store.iter().flat_map(|(_, p)| p.value.data().to_vec()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn probes_across_a_kink_are_skipped() {
    use super::gradcheck::check_inputs_report;
    let store = ParamStore::new();
    let x = Tensor::new(&[3], vec![1e-7, 0.5, -0.5]).unwrap();
    let f = |t: &mut Tape, v: &[Var]| {
        let y = t.relu(v[0]);
        Ok(t.sum(y))
    };
    let r = check_inputs_report(&store, &[x], f, 1e-5).unwrap();
    assert_eq!((r.probes, r.skipped), (3, 1));
    assert!(r.worst < 1e-9);
}
