//! Point-to-point (D1) and point-to-plane (D2) geometry PSNR.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{bbox_diagonal, estimate_normals, NeighborGrid, NormalField, Point, PointCloud};

/// Cap applied when an infinite PSNR has to be written as a number.
pub const PSNR_DISPLAY_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityReport {
    pub d1_psnr_db: f64,
    pub d2_psnr_db: f64,
    pub e_c2c: f64,
    pub e_c2p: f64,
    /// Worst of both directions (A->B and B->A), same peak.
    pub d1_psnr_symmetric_db: f64,
    pub d2_psnr_symmetric_db: f64,
    pub peak: f64,
    pub n_a: usize,
    pub n_b: usize,
}

impl QualityReport {
    pub fn d1_is_infinite(&self) -> bool {
        self.d1_psnr_db.is_infinite()
    }

    pub fn d2_is_infinite(&self) -> bool {
        self.d2_psnr_db.is_infinite()
    }
}

/// Clamps the infinite sentinel for tabular output.
pub fn display_psnr(db: f64) -> f64 {
    db.min(PSNR_DISPLAY_CAP_DB)
}

fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Per-point squared residuals from every `a` to its nearest `b`:
/// `(|E|^2, (E.n)^2)`, the second only when normals are given.
fn residuals(a: &[Point], b: &[Point], normals: Option<&[Point]>) -> Vec<(f64, f64)> {
    let grid = NeighborGrid::new(b);
    a.par_iter()
        .enumerate()
        .map(|(j, p)| {
            let (i, d2) = grid.nearest(p);
            let proj = normals.map_or(0.0, |n| {
                let e = sub(&b[i], p);
                dot(&e, &n[j]).powi(2)
            });
            (d2, proj)
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

/// Mean squared distance from each point of `a` to its nearest neighbour
/// in `b`.
pub fn d1_error(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("D1 needs two non-empty clouds"));
    }
    let r = residuals(a.points(), b.points(), None);
    Ok(mean(r.iter().map(|x| x.0), r.len()))
}

/// Mean squared normal component of the residual from each point of `a`
/// to its nearest neighbour in `b`.
pub fn d2_error(a: &PointCloud, b: &PointCloud, normals_of_a: &NormalField) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("D2 needs two non-empty clouds"));
    }
    if normals_of_a.normals.len() != a.len() {
        return Err(Error::shape(format!(
            "{} normals for a cloud of {} points",
            normals_of_a.normals.len(),
            a.len()
        )));
    }
    let r = residuals(a.points(), b.points(), Some(&normals_of_a.normals));
    Ok(mean(r.iter().map(|x| x.1), r.len()))
}

/// `10 log10(peak^2 / e)`; `e = 0` gives `+inf`.
pub fn psnr(e: f64, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid(format!("PSNR peak must be positive, got {peak}")));
    }
    if !(e >= 0.0) {
        return Err(Error::invalid(format!("PSNR error must be non-negative, got {e}")));
    }
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / e).log10())
}

/// Full comparison of a reconstruction `b` against the original `a`.
/// Normals and peak both come from `a`. The reverse direction projects
/// onto the normal of the nearest `a` point.
pub fn evaluate(a: &PointCloud, b: &PointCloud, normal_k: usize) -> Result<QualityReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("evaluation needs two non-empty clouds"));
    }
    let normals = estimate_normals(a, normal_k)?;
    let peak = bbox_diagonal(a);

    let fwd = residuals(a.points(), b.points(), Some(&normals.normals));
    let e_c2c = mean(fwd.iter().map(|x| x.0), fwd.len());
    let e_c2p = mean(fwd.iter().map(|x| x.1), fwd.len());

    let grid = NeighborGrid::new(a.points());
    let back: Vec<(f64, f64)> = b
        .points()
        .par_iter()
        .map(|q| {
            let (i, d2) = grid.nearest(q);
            let e = sub(q, &a.points()[i]);
            (d2, dot(&e, &normals.normals[i]).powi(2))
        })
        .collect();
    let r_c2c = mean(back.iter().map(|x| x.0), back.len());
    let r_c2p = mean(back.iter().map(|x| x.1), back.len());

    Ok(QualityReport {
        d1_psnr_db: psnr(e_c2c, peak)?,
        d2_psnr_db: psnr(e_c2p, peak)?,
        e_c2c,
        e_c2p,
        d1_psnr_symmetric_db: psnr(e_c2c.max(r_c2c), peak)?,
        d2_psnr_symmetric_db: psnr(e_c2p.max(r_c2p), peak)?,
        peak,
        n_a: a.len(),
        n_b: b.len(),
    })
}
