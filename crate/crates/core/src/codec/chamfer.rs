//! Chamfer distance with the prefactor `1/|P|` on both terms.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::geometry::{NeighborGrid, Point};
use crate::nn::{CustomOp, Tape, Tensor, Var};

struct Matches {
    value: f64,
    /// Nearest `P'` index of every `p`.
    fwd: Vec<usize>,
    /// Nearest `P` index of every `p'`.
    back: Vec<usize>,
}

fn matches(p: &[Point], q: &[Point]) -> Result<Matches> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::invalid("chamfer distance of an empty cloud"));
    }
    let qg = NeighborGrid::new(q);
    let pg = NeighborGrid::new(p);
    let mut sum = 0.0;
    let mut fwd = Vec::with_capacity(p.len());
    for a in p {
        let (j, d) = qg.nearest(a);
        sum += d;
        fwd.push(j);
    }
    let mut back = Vec::with_capacity(q.len());
    for b in q {
        let (i, d) = pg.nearest(b);
        sum += d;
        back.push(i);
    }
    Ok(Matches {
        value: sum / p.len() as f64,
        fwd,
        back,
    })
}

pub fn chamfer_distance(p: &[Point], p_prime: &[Point]) -> Result<f64> {
    Ok(matches(p, p_prime)?.value)
}

struct ChamferOp {
    target: Vec<Point>,
    m: Matches,
}

impl CustomOp for ChamferOp {
    fn name(&self) -> &'static str {
        "chamfer"
    }

    fn branch_key(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.m.fwd.hash(&mut h);
        self.m.back.hash(&mut h);
        h.finish()
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>> {
        let q = inputs[0].data();
        let k = 2.0 * grad_out[0] / self.target.len() as f64;
        let mut g = vec![0.0; q.len()];
        for (a, &j) in self.target.iter().zip(&self.m.fwd) {
            for c in 0..3 {
                g[3 * j + c] += k * (q[3 * j + c] - a[c]);
            }
        }
        for (j, &i) in self.m.back.iter().enumerate() {
            for c in 0..3 {
                g[3 * j + c] += k * (q[3 * j + c] - self.target[i][c]);
            }
        }
        vec![g]
    }
}

/// Chamfer loss between the fixed cloud `target` and the `[M, 3]`
/// reconstruction `recon`. Correspondences are frozen at the forward pass.
pub fn chamfer(tape: &mut Tape, recon: Var, target: &[Point]) -> Result<Var> {
    let rv = tape.value(recon);
    if rv.shape().len() != 2 || rv.shape()[1] != 3 {
        return Err(Error::shape(format!("chamfer expects [M, 3], got {:?}", rv.shape())));
    }
    let q: Vec<Point> = rv.data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let m = matches(target, &q)?;
    let out = Tensor::scalar(m.value);
    let op = ChamferOp {
        target: target.to_vec(),
        m,
    };
    Ok(tape.custom(&[recon], out, Box::new(op)))
}
