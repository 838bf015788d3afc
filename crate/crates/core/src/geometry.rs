//! Point-set kernels: farthest point sampling, k-nearest neighbours, patch
//! extraction and reassembly, bounding boxes, and normal estimation.
//!
//! Every kernel is deterministic. Distance ties are always resolved in favour
//! of the lowest point index.

use std::cmp::Ordering;

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type Point = [f64; 3];

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn cmp_dist_idx(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// An unordered set of 3D coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud must contain at least one point"));
        }
        if points.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("point cloud contains non-finite coordinates"));
        }
        Ok(Self { points })
    }

    /// Builds a cloud from a flat `x0 y0 z0 x1 ...` buffer.
    pub fn from_flat(xyz: &[f64]) -> Result<Self> {
        if xyz.len() % 3 != 0 {
            return Err(Error::shape(format!(
                "flat coordinate buffer length {} is not a multiple of 3",
                xyz.len()
            )));
        }
        Self::new(xyz.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> (Point, Point) {
        bounds(&self.points)
    }

    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
        }
    }

    pub fn fps(&self, m: usize, seed_index: usize) -> Result<Vec<usize>> {
        fps(&self.points, m, seed_index)
    }

    pub fn knn(&self, query: &Point, k: usize) -> Result<Vec<usize>> {
        knn(&self.points, query, k)
    }
}

pub(crate) fn bounds(points: &[Point]) -> (Point, Point) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// Farthest point sampling. The first index is `seed_index`; each further
/// index is the unselected point with the largest distance to the selected
/// set.
pub fn fps(points: &[Point], m: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::invalid(format!(
            "fps: sample count {m} must be in 1..={n}"
        )));
    }
    if seed_index >= n {
        return Err(Error::invalid(format!(
            "fps: seed index {seed_index} out of range for {n} points"
        )));
    }
    let mut selected = vec![false; n];
    let mut min_d = vec![f64::INFINITY; n];
    let mut out = Vec::with_capacity(m);
    let mut current = seed_index;
    loop {
        selected[current] = true;
        out.push(current);
        if out.len() == m {
            break;
        }
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if selected[i] {
                continue;
            }
            let d = dist2(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(out)
}

/// Indices of the `k` points nearest to `query`, sorted by ascending
/// squared distance.
pub fn knn(points: &[Point], query: &Point, k: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("knn: k={k} must be in 1..={n}")));
    }
    let mut d: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (dist2(p, query), i))
        .collect();
    if k < n {
        d.select_nth_unstable_by(k - 1, cmp_dist_idx);
        d.truncate(k);
    }
    d.sort_unstable_by(cmp_dist_idx);
    Ok(d.into_iter().map(|(_, i)| i).collect())
}

/// S re-centred patches of K points each plus the S patch centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    /// `S*K` offsets, patch-major.
    pub patches: Vec<Point>,
    pub centroids: Vec<Point>,
    /// Source cloud index of every stored patch point.
    pub source_indices: Vec<usize>,
    pub s: usize,
    pub k: usize,
}

impl PatchSet {
    pub fn patch(&self, i: usize) -> &[Point] {
        &self.patches[i * self.k..(i + 1) * self.k]
    }
}

/// Patch size `K = 2N/S` for a cloud of `n` points split into `s` patches.
pub fn patch_size(n: usize, s: usize) -> Result<usize> {
    if s == 0 || (2 * n) % s != 0 {
        return Err(Error::invalid(format!(
            "patch count {s} must divide 2N = {}",
            2 * n
        )));
    }
    let k = 2 * n / s;
    if k > n || s > n {
        return Err(Error::invalid(format!(
            "patch count {s} gives K={k}; need K <= N={n} and S <= N"
        )));
    }
    Ok(k)
}

/// FPS picks `s` centroids; each patch is the kNN neighbourhood of its
/// centroid, shifted so the centroid sits at the origin.
pub fn extract_patches(cloud: &PointCloud, s: usize) -> Result<PatchSet> {
    let pts = cloud.points();
    let k = patch_size(pts.len(), s)?;
    let centre_idx = fps(pts, s, 0)?;
    let centroids: Vec<Point> = centre_idx.iter().map(|&i| pts[i]).collect();
    let groups: Vec<Vec<usize>> = centroids
        .par_iter()
        .map(|c| knn(pts, c, k))
        .collect::<Result<_>>()?;
    let mut patches = Vec::with_capacity(s * k);
    let mut source_indices = Vec::with_capacity(s * k);
    for (c, g) in centroids.iter().zip(&groups) {
        for &i in g {
            let p = pts[i];
            patches.push([p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
            source_indices.push(i);
        }
    }
    Ok(PatchSet {
        patches,
        centroids,
        source_indices,
        s,
        k,
    })
}

/// Shifts each patch of `points_per_patch` offsets back by its centroid and
/// concatenates the result.
pub fn reassemble(
    offsets: &[Point],
    centroids: &[Point],
    points_per_patch: usize,
) -> Result<PointCloud> {
    if centroids.is_empty() || points_per_patch == 0 {
        return Err(Error::shape("reassemble: empty patch set"));
    }
    if offsets.len() != centroids.len() * points_per_patch {
        return Err(Error::shape(format!(
            "reassemble: {} offsets for {} patches of {}",
            offsets.len(),
            centroids.len(),
            points_per_patch
        )));
    }
    let points = offsets
        .chunks_exact(points_per_patch)
        .zip(centroids)
        .flat_map(|(patch, c)| {
            patch
                .iter()
                .map(move |o| [o[0] + c[0], o[1] + c[1], o[2] + c[2]])
        })
        .collect();
    PointCloud::new(points)
}

pub fn bbox_diagonal(cloud: &PointCloud) -> f64 {
    let (lo, hi) = cloud.bounds();
    dist2(&lo, &hi).sqrt()
}

/// Unit normals aligned with a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    pub normals: Vec<Point>,
}

pub const DEFAULT_NORMAL_K: usize = 12;

/// PCA normals: smallest-eigenvalue eigenvector of each point's k-neighbour
/// covariance, flipped so its largest-magnitude component is positive.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalField> {
    if k < 3 {
        return Err(Error::invalid(format!("normal estimation needs k >= 3, got {k}")));
    }
    let pts = cloud.points();
    if k > pts.len() {
        return Err(Error::invalid(format!(
            "normal estimation k={k} exceeds cloud size {}",
            pts.len()
        )));
    }
    let normals = pts
        .par_iter()
        .map(|p| {
            let nb = knn(pts, p, k)?;
            Ok(plane_normal(nb.iter().map(|&i| &pts[i])))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NormalField { normals })
}

fn plane_normal<'a>(neighbours: impl Iterator<Item = &'a Point> + Clone) -> Point {
    let mut mean = [0.0; 3];
    let mut count = 0.0;
    for p in neighbours.clone() {
        for a in 0..3 {
            mean[a] += p[a];
        }
        count += 1.0;
    }
    for m in &mut mean {
        *m /= count;
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in neighbours {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for r in 0..3 {
            for c in 0..3 {
                cov[(r, c)] += d[r] * d[c];
            }
        }
    }
    let eig = SymmetricEigen::new(cov);
    let mut best = 0;
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[best] {
            best = i;
        }
    }
    let v = eig.eigenvectors.column(best);
    let norm = v.norm();
    let mut n = [v[0] / norm, v[1] / norm, v[2] / norm];
    let mut major = 0;
    for a in 1..3 {
        if n[a].abs() > n[major].abs() {
            major = a;
        }
    }
    if n[major] < 0.0 {
        for c in &mut n {
            *c = -*c;
        }
    }
    n
}

/// Uniform grid for exact nearest-neighbour queries with lowest-index tie
/// breaking.
pub struct NeighborGrid<'a> {
    points: &'a [Point],
    origin: Point,
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<usize>,
    entries: Vec<usize>,
}

impl<'a> NeighborGrid<'a> {
    pub fn new(points: &'a [Point]) -> Self {
        let (lo, hi) = bounds(points);
        let extent = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
        let max_extent = extent.iter().cloned().fold(0.0, f64::max);
        let target_cells = (points.len() / 2).max(1) as f64;
        let mut cell = if max_extent > 0.0 {
            let vol: f64 = extent.iter().map(|e| e.max(max_extent * 1e-3)).product();
            (vol / target_cells).cbrt()
        } else {
            1.0
        };
        if !(cell > 0.0) || !cell.is_finite() {
            cell = 1.0;
        }
        let dims = [0, 1, 2].map(|a| (((extent[a] / cell).floor() as usize) + 1).min(1024));
        let ncells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncells + 1];
        let cell_of: Vec<usize> = points
            .iter()
            .map(|p| {
                let c = Self::coords_of(&lo, cell, &dims, p);
                (c[2] * dims[1] + c[1]) * dims[0] + c[0]
            })
            .collect();
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut entries = vec![0; points.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            entries[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            points,
            origin: lo,
            cell,
            dims,
            cell_start: counts,
            entries,
        }
    }

    fn coords_of(origin: &Point, cell: f64, dims: &[usize; 3], p: &Point) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let f = ((p[a] - origin[a]) / cell).floor();
            if f <= 0.0 {
                0
            } else {
                (f as usize).min(dims[a] - 1)
            }
        })
    }

    /// Index and squared distance of the point nearest to `q`.
    pub fn nearest(&self, q: &Point) -> (usize, f64) {
        let c0 = Self::coords_of(&self.origin, self.cell, &self.dims, q);
        let mut best = (f64::INFINITY, usize::MAX);
        let max_ring = *self.dims.iter().max().unwrap();
        for r in 0..=max_ring {
            self.visit_ring(c0, r, |i| {
                let cand = (dist2(&self.points[i], q), i);
                if cmp_dist_idx(&cand, &best) == Ordering::Less {
                    best = cand;
                }
            });
            let reach = r as f64 * self.cell * (1.0 - 1e-9);
            if best.0 < reach * reach {
                break;
            }
        }
        (best.1, best.0)
    }

    fn visit_ring(&self, c0: [usize; 3], r: usize, mut f: impl FnMut(usize)) {
        let r = r as isize;
        let range = |a: usize| {
            let lo = (c0[a] as isize - r).max(0);
            let hi = (c0[a] as isize + r).min(self.dims[a] as isize - 1);
            lo..=hi
        };
        for z in range(2) {
            for y in range(1) {
                for x in range(0) {
                    let ring = (x - c0[0] as isize)
                        .abs()
                        .max((y - c0[1] as isize).abs())
                        .max((z - c0[2] as isize).abs());
                    if ring != r {
                        continue;
                    }
                    let cell = (z as usize * self.dims[1] + y as usize) * self.dims[0] + x as usize;
                    for &i in &self.entries[self.cell_start[cell]..self.cell_start[cell + 1]] {
                        f(i);
                    }
                }
            }
        }
    }
}
