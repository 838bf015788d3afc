//! Procedural toy shapes: sphere, torus, box, cylinder, cone, capsule,
//! L-bracket and helix, each as a triangle mesh.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RawModel;
use crate::geometry::Point;

pub const SHAPES: [&str; 8] = [
    "sphere", "torus", "box", "cylinder", "cone", "capsule", "l_bracket", "helix",
];

/// Triangulated `(nu + 1) x (nv + 1)` parametric grid over `[0,1]^2`.
fn grid_surface(nu: usize, nv: usize, f: impl Fn(f64, f64) -> Point) -> RawModel {
    let mut vertices = Vec::with_capacity((nu + 1) * (nv + 1));
    for i in 0..=nu {
        for j in 0..=nv {
            vertices.push(f(i as f64 / nu as f64, j as f64 / nv as f64));
        }
    }
    let at = |i: usize, j: usize| i * (nv + 1) + j;
    let mut faces = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    RawModel { vertices, faces }
}

/// Surface of revolution of a `(radius, z)` polyline about the z axis.
fn revolve(profile: &[(f64, f64)], segments: usize) -> RawModel {
    let n = profile.len() - 1;
    grid_surface(n, segments, |u, v| {
        let t = u * n as f64;
        let i = (t.floor() as usize).min(n - 1);
        let f = t - i as f64;
        let r = profile[i].0 * (1.0 - f) + profile[i + 1].0 * f;
        let z = profile[i].1 * (1.0 - f) + profile[i + 1].1 * f;
        let phi = 2.0 * PI * v;
        [r * phi.cos(), r * phi.sin(), z]
    })
}

fn arc(cx: f64, cz: f64, radius: f64, from: f64, to: f64, steps: usize) -> Vec<(f64, f64)> {
    (0..=steps)
        .map(|k| {
            let a = from + (to - from) * k as f64 / steps as f64;
            ((cx + radius * a.cos()).max(0.0), cz + radius * a.sin())
        })
        .collect()
}

fn cuboid(lo: Point, hi: Point) -> RawModel {
    let vertices: Vec<Point> = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { lo[0] } else { hi[0] },
                if i & 2 == 0 { lo[1] } else { hi[1] },
                if i & 4 == 0 { lo[2] } else { hi[2] },
            ]
        })
        .collect();
    let quads = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    let faces = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    RawModel { vertices, faces }
}

fn merge(parts: Vec<RawModel>) -> RawModel {
    let mut out = RawModel {
        vertices: Vec::new(),
        faces: Vec::new(),
    };
    for p in parts {
        let base = out.vertices.len();
        out.vertices.extend(p.vertices);
        out.faces
            .extend(p.faces.into_iter().map(|f| f.map(|i| i + base)));
    }
    out
}

/// Canonical mesh of a named shape with mild random proportions.
pub fn shape_mesh(name: &str, rng: &mut impl Rng) -> Option<RawModel> {
    let mut j = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mesh = match name {
        "sphere" => revolve(&arc(0.0, 0.0, 1.0, -PI / 2.0, PI / 2.0, 24), 32),
        "torus" => {
            let (big, small) = (1.0, j(0.25, 0.45));
            revolve(&arc(big, 0.0, small, -PI, PI, 24), 40)
        }
        "box" => {
            let (a, b, c) = (j(0.6, 1.0), j(0.4, 0.8), j(0.2, 0.6));
            cuboid([-a, -b, -c], [a, b, c])
        }
        "cylinder" => {
            let (r, h) = (j(0.3, 0.6), j(0.8, 1.2));
            revolve(&[(0.0, -h), (r, -h), (r, h), (0.0, h)], 32)
        }
        "cone" => {
            let (r, h) = (j(0.5, 0.9), j(0.8, 1.2));
            revolve(&[(0.0, -h), (r, -h), (0.0, h)], 32)
        }
        "capsule" => {
            let (r, h) = (j(0.3, 0.5), j(0.4, 0.8));
            let mut profile = arc(0.0, -h, r, -PI / 2.0, 0.0, 8);
            profile.extend(arc(0.0, h, r, 0.0, PI / 2.0, 8));
            revolve(&profile, 32)
        }
        "l_bracket" => {
            let (len, t, w) = (j(0.8, 1.2), j(0.15, 0.3), j(0.3, 0.6));
            merge(vec![
                cuboid([-len, -w, -t], [len, w, t]),
                cuboid([len - 2.0 * t, -w, t], [len, w, len]),
            ])
        }
        "helix" => {
            let (turns, pitch, tube) = (j(2.0, 3.0), j(0.12, 0.2), j(0.12, 0.2));
            grid_surface(160, 12, |u, v| {
                let t = u * turns * 2.0 * PI;
                let a = v * 2.0 * PI;
                let centre = [t.cos(), t.sin(), pitch * t];
                let normal = [-t.cos(), -t.sin(), 0.0];
                let bi = [0.0, 0.0, 1.0];
                [0, 1, 2].map(|k| centre[k] + tube * (a.cos() * normal[k] + a.sin() * bi[k]))
            })
        }
        _ => return None,
    };
    Some(mesh)
}

/// Random rotation (uniform axis, uniform angle) and per-axis stretch.
pub fn random_pose(model: &mut RawModel, rng: &mut impl Rng) {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    let axis = [s * phi.cos(), s * phi.sin(), z];
    let angle: f64 = rng.random_range(0.0..2.0 * PI);
    let stretch: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(0.85..1.15));
    let (c, sn) = (angle.cos(), angle.sin());
    let [x, y, zz] = axis;
    let rot = [
        [c + x * x * (1.0 - c), x * y * (1.0 - c) - zz * sn, x * zz * (1.0 - c) + y * sn],
        [y * x * (1.0 - c) + zz * sn, c + y * y * (1.0 - c), y * zz * (1.0 - c) - x * sn],
        [zz * x * (1.0 - c) - y * sn, zz * y * (1.0 - c) + x * sn, c + zz * zz * (1.0 - c)],
    ];
    for v in &mut model.vertices {
        let p = [v[0] * stretch[0], v[1] * stretch[1], v[2] * stretch[2]];
        *v = [0, 1, 2].map(|r| rot[r][0] * p[0] + rot[r][1] * p[1] + rot[r][2] * p[2]);
    }
}

/// `variants` posed copies of every toy shape, ordered shape-major.
pub fn toy_meshes(variants: usize, seed: u64) -> Vec<(String, RawModel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(SHAPES.len() * variants);
    for name in SHAPES {
        for v in 0..variants {
            let mut m = shape_mesh(name, &mut rng).expect("known shape");
            random_pose(&mut m, &mut rng);
            out.push((format!("{name}_{v}"), m));
        }
    }
    out
}
