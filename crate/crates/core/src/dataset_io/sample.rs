use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RawModel;
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn triangle_area(a: &Point, b: &Point, c: &Point) -> f64 {
    let n = cross(&sub(b, a), &sub(c, a));
    0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
}

/// Area-weighted uniform surface sampling. Faceless models fall back to their
/// vertices: returned verbatim when the count matches, otherwise a seeded
/// subset.
pub fn mesh_to_cloud(model: &RawModel, n_surface: usize, seed: u64) -> Result<PointCloud> {
    if n_surface == 0 {
        return Err(Error::invalid("surface sample count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if model.faces.is_empty() {
        let nv = model.vertices.len();
        if nv < n_surface {
            return Err(Error::Degenerate(format!(
                "faceless model has {nv} vertices, {n_surface} requested"
            )));
        }
        if nv == n_surface {
            return PointCloud::new(model.vertices.clone());
        }
        let mut pick = index::sample(&mut rng, nv, n_surface).into_vec();
        pick.sort_unstable();
        return PointCloud::new(pick.into_iter().map(|i| model.vertices[i]).collect());
    }
    let v = &model.vertices;
    let mut cdf = Vec::with_capacity(model.faces.len());
    let mut total = 0.0;
    for f in &model.faces {
        total += triangle_area(&v[f[0]], &v[f[1]], &v[f[2]]);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Degenerate("mesh has zero surface area".into()));
    }
    let points = (0..n_surface)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let t = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
            let [a, b, c] = model.faces[t].map(|i| v[i]);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
            [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
        })
        .collect();
    PointCloud::new(points)
}

/// Uniformly scales and centres the cloud so its longest bounding-box axis
/// spans exactly `[lo, hi]`.
pub fn normalize_cloud(cloud: &PointCloud, lo: f64, hi: f64) -> Result<PointCloud> {
    if !(hi > lo) {
        return Err(Error::invalid(format!("normalization range [{lo}, {hi}] is empty")));
    }
    let (bmin, bmax) = cloud.bounds();
    let extent = (0..3).map(|a| bmax[a] - bmin[a]).fold(0.0, f64::max);
    if !(extent > 0.0) {
        return Err(Error::Degenerate("cloud has zero extent".into()));
    }
    let scale = (hi - lo) / extent;
    let centre = [0, 1, 2].map(|a| 0.5 * (bmin[a] + bmax[a]));
    let mid = 0.5 * (lo + hi);
    let points = cloud
        .points()
        .iter()
        .map(|p| [0, 1, 2].map(|a| ((p[a] - centre[a]) * scale + mid).clamp(lo, hi)))
        .collect();
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri() -> RawModel {
        RawModel {
            vertices: vec![[0.0, 0.0, 1.0], [2.0, 0.0, 0.0], [0.0, 3.0, 0.5]],
            faces: vec![[0, 1, 2]],
        }
    }

    #[test]
    fn samples_lie_on_triangle_plane() {
        let m = tri();
        let c = mesh_to_cloud(&m, 100, 1).unwrap();
        assert_eq!(c.len(), 100);
        let v = &m.vertices;
        let n = cross(&sub(&v[1], &v[0]), &sub(&v[2], &v[0]));
        let d = n[0] * v[0][0] + n[1] * v[0][1] + n[2] * v[0][2];
        for p in c.points() {
            assert!((n[0] * p[0] + n[1] * p[1] + n[2] * p[2] - d).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_area_mesh_fails() {
        let m = RawModel {
            vertices: vec![[0.0; 3], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0]],
            faces: vec![[0, 1, 2]],
        };
        assert!(mesh_to_cloud(&m, 10, 0).is_err());
    }

    #[test]
    fn area_weights_are_respected() {
        // unit square cut into three triangles of areas 1/8, 3/8 and 1/2
        let m = RawModel {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.25, 0.0, 0.0]],
            faces: vec![[0, 4, 3], [4, 1, 2], [4, 2, 3]],
        };
        let n = 100_000;
        let c = mesh_to_cloud(&m, n, 7).unwrap();
        let areas = [0.125, 0.375, 0.5];
        let mut counts = [0usize; 3];
        for p in c.points() {
            let (x, y) = (p[0], p[1]);
            let idx = if x <= 0.25 * (1.0 - y) {
                0
            } else if y <= (x - 0.25) / 0.75 {
                1
            } else {
                2
            };
            counts[idx] += 1;
        }
        for (cnt, a) in counts.iter().zip(areas) {
            let mean = n as f64 * a;
            let sd = (n as f64 * a * (1.0 - a)).sqrt();
            assert!((*cnt as f64 - mean).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn faceless_models() {
        let m = RawModel {
            vertices: vec![[0.0; 3], [1.0; 3], [2.0; 3]],
            faces: vec![],
        };
        assert_eq!(mesh_to_cloud(&m, 3, 0).unwrap().points(), m.vertices.as_slice());
        assert_eq!(mesh_to_cloud(&m, 2, 0).unwrap().len(), 2);
        assert!(mesh_to_cloud(&m, 4, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = mesh_to_cloud(&tri(), 500, 9).unwrap();
        let b = mesh_to_cloud(&tri(), 500, 9).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
    }

    #[test]
    fn normalization_examples() {
        let unit: Vec<Point> = (0..8).map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, (i >> 2) as f64]).collect();
        let c = normalize_cloud(&PointCloud::new(unit.clone()).unwrap(), 0.0, 63.0).unwrap();
        for (p, q) in c.points().iter().zip(&unit) {
            for a in 0..3 {
                assert!((p[a] - 63.0 * q[a]).abs() < 1e-12);
            }
        }
        let again = normalize_cloud(&c, 0.0, 63.0).unwrap();
        for (p, q) in again.points().iter().zip(c.points()) {
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() < 1e-9);
            }
        }
        // [0,2] x [0,1]^2: scale 31.5, short axes centred on [15.75, 47.25]
        let long = PointCloud::new(vec![[0.0, 0.0, 0.0], [2.0, 1.0, 1.0], [1.0, 0.5, 0.25]]).unwrap();
        let n = normalize_cloud(&long, 0.0, 63.0).unwrap();
        assert_eq!(n.points()[0], [0.0, 15.75, 15.75]);
        assert_eq!(n.points()[1], [63.0, 47.25, 47.25]);
        assert_eq!(n.points()[2], [31.5, 31.5, 23.625]);
        assert!(normalize_cloud(&PointCloud::new(vec![[1.0; 3]; 4]).unwrap(), 0.0, 63.0).is_err());
        assert!(normalize_cloud(&long, 1.0, 1.0).is_err());
    }
}
