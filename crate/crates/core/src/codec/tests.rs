use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::gradcheck::{check_params_report, project};

fn tiny_cfg(d_prime: usize) -> CodecConfig {
    CodecConfig {
        points: 32,
        patches: 8,
        d: 4,
        d_prime,
        views: 2,
        image: 16,
        splat_sigma: 1.0,
        cnn_features: 8,
        range: (0.0, 63.0),
    }
}

fn random_cloud(n: usize, rng: &mut impl Rng) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| [rng.random_range(10.0..53.0), rng.random_range(10.0..53.0), rng.random_range(10.0..53.0)])
            .collect(),
    )
    .unwrap()
}

/// Zero biases put ReLU kinks exactly on the inputs that are all zero
/// (a group centre relative to itself, empty image background), where
/// central differences are meaningless.
fn jitter_biases(model: &mut Model, rng: &mut impl Rng) {
    for p in model.store.iter_mut() {
        if p.name.ends_with(".b") {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
    }
}

#[test]
fn default_config_is_valid() {
    let cfg = CodecConfig::default();
    cfg.validate().unwrap();
    assert_eq!(cfg.k().unwrap(), 128);
    let bad = CodecConfig { patches: 24, ..cfg.clone() };
    assert!(bad.validate().is_err());
    let odd = CodecConfig { points: 48, patches: 16, ..cfg };
    assert_eq!(patch_size(48, 16).unwrap(), 6);
    assert!(odd.validate().is_err());
}

#[test]
fn reconstruction_has_n_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for dp in [0, 2] {
        let model = Model::new(tiny_cfg(dp), 3).unwrap();
        let sample = model.sample(random_cloud(32, &mut rng)).unwrap();
        let r = model.reconstruct(&sample, ChannelMode::Identity).unwrap();
        assert_eq!(r.len(), 32);
        let noise = vec![0.1; model.noise_len(true)];
        assert_eq!(model.reconstruct(&sample, ChannelMode::Coded(Some(&noise))).unwrap().len(), 32);
        let short = vec![0.1; 3];
        assert!(model.reconstruct(&sample, ChannelMode::Coded(Some(&short))).is_err());
    }
}

#[test]
fn uncoded_without_noise_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Model::new(tiny_cfg(2), 4).unwrap();
    let sample = model.sample(random_cloud(32, &mut rng)).unwrap();
    let a = model.reconstruct(&sample, ChannelMode::Identity).unwrap();
    let b = model.reconstruct(&sample, ChannelMode::Uncoded(None)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn no_dead_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = Model::new(tiny_cfg(2), 6).unwrap();
    let sample = model.sample(random_cloud(32, &mut rng)).unwrap();
    let noise: Vec<f64> = (0..model.noise_len(true)).map(|_| rng.random_range(-0.3..0.3)).collect();
    for mode in [ChannelMode::Identity, ChannelMode::Coded(Some(&noise))] {
        let mut tape = Tape::new(&model.store);
        let y = model.forward(&mut tape, &sample, mode).unwrap();
        let loss = chamfer(&mut tape, y, sample.cloud.points()).unwrap();
        let g = tape.backward(loss).unwrap();
        for (id, p) in model.store.iter() {
            if matches!(mode, ChannelMode::Identity) && p.name.starts_with("chan_") {
                assert!(g.param(id).is_none(), "{}", p.name);
                continue;
            }
            let grad = g.param(id).unwrap_or_else(|| panic!("no gradient for {}", p.name));
            assert!(grad.iter().any(|&v| v != 0.0), "zero gradient for {}", p.name);
        }
    }
}

#[test]
fn composed_model_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..3 {
        let mut model = Model::new(tiny_cfg(2), 10 + trial).unwrap();
        jitter_biases(&mut model, &mut rng);
        let sample = model.sample(random_cloud(32, &mut rng)).unwrap();
        let noise: Vec<f64> = (0..model.noise_len(true)).map(|_| rng.random_range(-0.3..0.3)).collect();
        // offsets only, so the loss is not dominated by the constant centroids
        let unshift: Vec<f64> = sample
            .patches
            .centroids
            .iter()
            .flat_map(|c| std::iter::repeat_n(c, 4).flatten().map(|v| -v))
            .collect();
        let f = |t: &mut Tape, _: &[Var]| {
            let y = model.forward(t, &sample, ChannelMode::Coded(Some(&noise)))?;
            let y = t.add_const(y, &unshift)?;
            project(t, y, 3)
        };
        // the loss is O(10) while some entries of the gradient are O(1e-5),
        // so a smaller step loses them to roundoff
        let r = check_params_report(&model.store, &[], f, 1e-4, 3).unwrap();
        assert!(r.worst < 1e-4, "{r:?}");
        assert!(r.skipped * 10 <= r.probes, "{r:?}");
    }
}

#[test]
fn frozen_encoders() {
    let mut model = Model::new(tiny_cfg(2), 1).unwrap();
    let n = model.freeze_encoders(true);
    let expected = model
        .store
        .iter()
        .filter(|(_, p)| ENCODER_PREFIXES.iter().any(|pre| p.name.starts_with(pre)))
        .count();
    assert_eq!(n, expected);
    assert!(model.store.iter().any(|(_, p)| !p.frozen));
}

#[test]
fn identical_renders_give_identical_global() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = Model::new(tiny_cfg(2), 2).unwrap();
    let g = model.global.as_ref().unwrap();
    let a = random_cloud(32, &mut rng);
    let views = render(a.points(), &[Camera { azimuth: 0.3, elevation: 0.1, distance: 40.0 }; 2], &g.render).unwrap();
    let mut tape = Tape::new(&model.store);
    let v1 = tape.input(views.clone());
    let v2 = tape.input(views);
    let g1 = g.encoder.forward(&mut tape, v1).unwrap();
    let g2 = g.encoder.forward(&mut tape, v2).unwrap();
    assert_eq!(tape.value(g1), tape.value(g2));
}


