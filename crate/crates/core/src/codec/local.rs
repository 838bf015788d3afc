//! Patch-wise local semantic encoder: FPS + kNN grouping, an inner PointNet
//! per group, and an outer PointNet per patch.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{fps, knn, PatchSet, Point};
use crate::nn::{Mlp, ParamStore, Tape, Tensor, Var};

/// Fixed grouping of every patch, computed once per cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalGrouping {
    pub s: usize,
    /// `K/2` group centres per patch.
    pub centers: usize,
    /// `K/4` neighbours per centre.
    pub neighbors: usize,
    /// `[S * K/2, 3]` centre coordinates, scaled.
    pub center_xyz: Vec<f64>,
    /// `[S * K/2 * K/4, 3]` neighbour coordinates relative to their centre,
    /// scaled.
    pub rel_xyz: Vec<f64>,
}

/// Lowest-norm point, which makes the FPS start independent of point order.
fn origin_index(pts: &[Point]) -> usize {
    let mut best = 0;
    let mut best_n = f64::INFINITY;
    for (i, p) in pts.iter().enumerate() {
        let n = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        if n < best_n {
            best_n = n;
            best = i;
        }
    }
    best
}

pub fn group_patches(patches: &PatchSet, scale: f64) -> Result<LocalGrouping> {
    let k = patches.k;
    if k % 4 != 0 || k == 0 {
        return Err(Error::invalid(format!("patch size K={k} must be a positive multiple of 4")));
    }
    let (centers, neighbors) = (k / 2, k / 4);
    let mut center_xyz = Vec::with_capacity(patches.s * centers * 3);
    let mut rel_xyz = Vec::with_capacity(patches.s * centers * neighbors * 3);
    for i in 0..patches.s {
        let pts = patches.patch(i);
        for c in fps(pts, centers, origin_index(pts))? {
            let cp = pts[c];
            center_xyz.extend(cp.iter().map(|v| v / scale));
            for j in knn(pts, &cp, neighbors)? {
                let q = pts[j];
                rel_xyz.extend((0..3).map(|a| (q[a] - cp[a]) / scale));
            }
        }
    }
    Ok(LocalGrouping {
        s: patches.s,
        centers,
        neighbors,
        center_xyz,
        rel_xyz,
    })
}

#[derive(Debug, Clone)]
pub struct LocalEncoder {
    pub inner: Mlp,
    pub outer: Mlp,
    pub d: usize,
}

pub const INNER_WIDTHS: [usize; 4] = [3, 32, 64, 128];
pub const OUTER_HIDDEN: [usize; 2] = [128, 128];

impl LocalEncoder {
    pub fn new(store: &mut ParamStore, d: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::with_widths(store, &INNER_WIDTHS, &OUTER_HIDDEN, d, rng)
    }

    /// The outer network sees the inner feature plus the group centre.
    pub fn with_widths(
        store: &mut ParamStore,
        inner: &[usize],
        outer_hidden: &[usize],
        d: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if inner.first() != Some(&3) || d == 0 {
            return Err(Error::invalid("local encoder needs 3 input channels and d >= 1"));
        }
        let feat = *inner.last().unwrap();
        let inner = Mlp::new(store, "local.inner", inner, true, rng)?;
        let mut widths = vec![feat + 3];
        widths.extend_from_slice(outer_hidden);
        widths.push(d);
        let outer = Mlp::new(store, "local.outer", &widths, false, rng)?;
        Ok(Self { inner, outer, d })
    }

    /// `[S, d]` local semantics.
    pub fn forward(&self, tape: &mut Tape, g: &LocalGrouping) -> Result<Var> {
        let groups = g.s * g.centers;
        let rel = tape.input(Tensor::new(&[groups * g.neighbors, 3], g.rel_xyz.clone())?);
        let h = self.inner.forward(tape, rel)?;
        let h = tape.segment_max(h, groups, g.neighbors)?;
        let c = tape.input(Tensor::new(&[groups, 3], g.center_xyz.clone())?);
        let h = tape.concat_cols(h, c)?;
        let h = self.outer.forward(tape, h)?;
        tape.segment_max(h, g.s, g.centers)
    }
}
