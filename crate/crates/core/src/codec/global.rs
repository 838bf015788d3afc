//! Projection-based global semantic encoder: a camera predictor, the
//! splat renderer, a shared per-view CNN, view pooling and an MLP.

use std::f64::consts::PI;

use rand::Rng;

use super::render::{render_views, RenderSettings};
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::nn::{Conv2d, Linear, Mlp, ParamStore, Tape, Tensor, Var};

pub const MAX_ELEVATION: f64 = PI / 3.0;

/// Predicts `(azimuth, elevation, distance)` for each of `views` cameras
/// from the whole cloud.
#[derive(Debug, Clone)]
pub struct CameraPredictor {
    pub point: Mlp,
    pub head: Mlp,
    pub out: Linear,
    pub views: usize,
}

impl CameraPredictor {
    pub fn new(store: &mut ParamStore, views: usize, rng: &mut impl Rng) -> Result<Self> {
        if views == 0 {
            return Err(Error::invalid("camera predictor needs at least one view"));
        }
        let point = Mlp::new(store, "camera.point", &[3, 32, 64], true, rng)?;
        let head = Mlp::new(store, "camera.head", &[64, 32], true, rng)?;
        let out = Linear::new(store, "camera.out", 32, 3 * views, rng)?;
        // start close to the canonical ring of views
        for id in [out.w, out.b] {
            for v in store.get_mut(id).value.data_mut() {
                *v *= 0.01;
            }
        }
        Ok(Self { point, head, out, views })
    }

    /// `centred` holds the cloud minus the render target, divided by
    /// `radius`. Returns `[1, 3V]`.
    pub fn forward(&self, tape: &mut Tape, centred: Var, radius: f64) -> Result<Var> {
        let n = tape.shape(centred)[0];
        let h = self.point.forward(tape, centred)?;
        let h = tape.segment_max(h, 1, n)?;
        let h = self.head.forward(tape, h)?;
        let raw = self.out.forward(tape, h)?;
        let t = tape.tanh(raw);
        let (scale, offset) = squash_constants(self.views, radius);
        let t = tape.mul_const(t, &scale)?;
        tape.add_const(t, &offset)
    }
}

/// Azimuth `2 pi v / V + pi tanh`, elevation `(pi/3) tanh`, distance
/// `R (2 + tanh)`.
fn squash_constants(views: usize, radius: f64) -> (Vec<f64>, Vec<f64>) {
    let mut scale = Vec::with_capacity(3 * views);
    let mut offset = Vec::with_capacity(3 * views);
    for v in 0..views {
        scale.extend([PI, MAX_ELEVATION, radius]);
        offset.extend([2.0 * PI * v as f64 / views as f64, 0.0, 2.0 * radius]);
    }
    (scale, offset)
}

/// Bounding-sphere radius of `points` about `target`, floored to stay
/// positive for degenerate clouds.
pub fn bounding_radius(points: &[Point], target: &Point) -> f64 {
    let r2 = points
        .iter()
        .map(|p| (0..3).map(|a| (p[a] - target[a]).powi(2)).sum::<f64>())
        .fold(0.0, f64::max);
    r2.sqrt().max(1e-6)
}

pub const CNN_CHANNELS: [usize; 4] = [1, 16, 32, 64];

/// Shared CNN over each view followed by view pooling and a three-layer
/// MLP down to `D'`.
#[derive(Debug, Clone)]
pub struct GlobalEncoder {
    pub convs: Vec<Conv2d>,
    pub fc: Linear,
    pub mlp: Mlp,
    pub image: (usize, usize),
    pub d_prime: usize,
}

impl GlobalEncoder {
    pub fn new(
        store: &mut ParamStore,
        image: (usize, usize),
        features: usize,
        d_prime: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if d_prime == 0 {
            return Err(Error::invalid("global encoder needs D' >= 1"));
        }
        let mut convs = Vec::new();
        let (mut h, mut w) = image;
        for (i, c) in CNN_CHANNELS.windows(2).enumerate() {
            convs.push(Conv2d::new(store, &format!("global.conv{i}"), c[0], c[1], 3, 1, 1, rng)?);
            h /= 2;
            w /= 2;
        }
        if h == 0 || w == 0 {
            return Err(Error::invalid(format!("image {image:?} too small for the CNN")));
        }
        let flat = CNN_CHANNELS[3] * h * w;
        let fc = Linear::new(store, "global.fc", flat, features, rng)?;
        let mlp = Mlp::new(store, "global.mlp", &[features, 64, 32, d_prime], false, rng)?;
        Ok(Self {
            convs,
            fc,
            mlp,
            image,
            d_prime,
        })
    }

    /// `[V, 1, H, W]` views to `[1, D']`.
    pub fn forward(&self, tape: &mut Tape, views: Var) -> Result<Var> {
        let s = tape.shape(views).to_vec();
        if s.len() != 4 || s[1] != 1 || (s[2], s[3]) != self.image {
            return Err(Error::shape(format!(
                "global encoder expects [V, 1, {}, {}], got {s:?}",
                self.image.0, self.image.1
            )));
        }
        let v = s[0];
        let mut x = views;
        for conv in &self.convs {
            x = conv.forward(tape, x)?;
            x = tape.relu(x);
            x = tape.max_pool2d(x, 2, 2)?;
        }
        let flat = tape.value(x).len() / v;
        let x = tape.reshape(x, &[v, flat])?;
        let f = self.fc.forward(tape, x)?;
        let f = tape.relu(f);
        let f = tape.reshape(f, &[1, v, self.fc.out_dim])?;
        let f = tape.view_pool(f)?;
        self.mlp.forward(tape, f)
    }
}

/// Camera predictor, renderer and global encoder.
#[derive(Debug, Clone)]
pub struct GlobalBranch {
    pub camera: CameraPredictor,
    pub encoder: GlobalEncoder,
    pub render: RenderSettings,
}

/// Intermediate products of the global branch.
#[derive(Debug, Clone, Copy)]
pub struct GlobalOutput {
    pub cameras: Var,
    pub views: Var,
    pub global: Var,
}

impl GlobalBranch {
    pub fn forward(&self, tape: &mut Tape, points: &[Point], centred: &Tensor, radius: f64) -> Result<GlobalOutput> {
        let c = tape.input(centred.clone());
        let cameras = self.camera.forward(tape, c, radius)?;
        let views = render_views(tape, cameras, points, &self.render)?;
        let global = self.encoder.forward(tape, views)?;
        Ok(GlobalOutput { cameras, views, global })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::render::cameras_from_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_input(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(&[n, 3], |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_head_gives_canonical_views() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let cam = CameraPredictor::new(&mut store, 4, &mut rng).unwrap();
        for id in [cam.out.w, cam.out.b] {
            store.get_mut(id).value.data_mut().fill(0.0);
        }
        let mut tape = Tape::new(&store);
        let x = tape.input(random_input(50, &mut rng));
        let c = cam.forward(&mut tape, x, 10.0).unwrap();
        let cams = cameras_from_tensor(tape.value(c));
        assert_eq!(cams.len(), 4);
        for (v, c) in cams.iter().enumerate() {
            assert!((c.azimuth - v as f64 * PI / 2.0).abs() < 1e-15);
            assert_eq!(c.elevation, 0.0);
            assert_eq!(c.distance, 20.0);
        }
    }

    #[test]
    fn camera_ranges_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let cam = CameraPredictor::new(&mut store, 4, &mut rng).unwrap();
        // large head weights push tanh towards saturation
        for v in store.get_mut(cam.out.w).value.data_mut() {
            *v *= 1000.0;
        }
        for _ in 0..10_000 {
            let n = rng.random_range(1..8);
            let mut tape = Tape::new(&store);
            let x = tape.input(Tensor::from_fn(&[n, 3], |_| rng.random_range(-50.0..50.0)));
            let r = rng.random_range(0.5..40.0);
            let c = cam.forward(&mut tape, x, r).unwrap();
            for (v, c) in cameras_from_tensor(tape.value(c)).iter().enumerate() {
                let base = v as f64 * PI / 2.0;
                assert!(c.azimuth >= base - PI && c.azimuth <= base + PI);
                assert!(c.elevation.abs() <= MAX_ELEVATION);
                assert!(c.distance >= r && c.distance <= 3.0 * r && c.distance > 0.0);
            }
        }
    }

    #[test]
    fn view_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let enc = GlobalEncoder::new(&mut store, (16, 16), 32, 4, &mut rng).unwrap();
        let views = Tensor::from_fn(&[3, 1, 16, 16], |_| rng.random_range(0.0..1.0));
        let mut swapped = views.clone();
        let plane = 256;
        let (a, b) = swapped.data_mut().split_at_mut(2 * plane);
        a[..plane].swap_with_slice(&mut b[..plane]);
        let mut tape = Tape::new(&store);
        let x = tape.input(views);
        let y = tape.input(swapped);
        let g1 = enc.forward(&mut tape, x).unwrap();
        let g2 = enc.forward(&mut tape, y).unwrap();
        assert_eq!(tape.shape(g1), &[1, 4]);
        assert_eq!(tape.value(g1), tape.value(g2));
        let bad = tape.input(Tensor::zeros(&[3, 1, 8, 16]));
        assert!(enc.forward(&mut tape, bad).is_err());
    }
}
