//! Differentiable multi-view projection by soft Gaussian splatting.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::nn::{CustomOp, Tape, Tensor, Var};

/// Splats are cut off beyond this many standard deviations.
const SPLAT_RADIUS_SIGMAS: f64 = 4.0;

/// Fraction of the image half-width filled by a cloud of radius `R` seen
/// from distance `2R`.
const FILL: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

impl Camera {
    /// Image-plane axes: `u` maps to +x (right), `w` to -y (up).
    fn basis(&self) -> (Point, Point) {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        ([ca, sa, 0.0], [sa * se, -ca * se, ce])
    }
}

/// Cameras packed as `[1, 3V]` rows of `(azimuth, elevation, distance)`.
pub fn cameras_from_tensor(t: &Tensor) -> Vec<Camera> {
    t.data()
        .chunks_exact(3)
        .map(|c| Camera {
            azimuth: c[0],
            elevation: c[1],
            distance: c[2],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub height: usize,
    pub width: usize,
    /// Splat standard deviation in pixels.
    pub sigma: f64,
    /// Fixed look-at point.
    pub target: Point,
}

impl RenderSettings {
    fn zoom(&self, distance: f64) -> f64 {
        FILL * self.height.min(self.width) as f64 / distance
    }

    fn centre(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 16 {
            return Err(Error::invalid(format!(
                "render size {}x{} is below 16x16",
                self.height, self.width
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::invalid("splat sigma must be positive"));
        }
        Ok(())
    }
}

/// Pixel position of `p` under `cam`.
pub fn project(p: &Point, cam: &Camera, s: &RenderSettings) -> (f64, f64) {
    let (u, w) = cam.basis();
    let q = [p[0] - s.target[0], p[1] - s.target[1], p[2] - s.target[2]];
    let zoom = s.zoom(cam.distance);
    let (cx, cy) = s.centre();
    (cx + zoom * dot(&q, &u), cy - zoom * dot(&q, &w))
}

fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Visits every pixel within the splat disc of `(px, py)` with the kernel
/// value and its slope factor.
///
/// The Gaussian is shifted and tilted so that value and first derivative
/// both reach zero at the cut-off radius; the image is then C1 in the
/// camera parameters.
fn for_splat(px: f64, py: f64, s: &RenderSettings, mut f: impl FnMut(usize, f64, f64, f64, f64)) {
    let r = SPLAT_RADIUS_SIGMAS * s.sigma;
    let inv = 1.0 / (2.0 * s.sigma * s.sigma);
    let a_r = r * r * inv;
    let e_r = (-a_r).exp();
    let x0 = (px - r).ceil().max(0.0);
    let x1 = (px + r).floor().min(s.width as f64 - 1.0);
    let y0 = (py - r).ceil().max(0.0);
    let y1 = (py + r).floor().min(s.height as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return;
    }
    for y in y0 as usize..=y1 as usize {
        let dy = y as f64 - py;
        for x in x0 as usize..=x1 as usize {
            let dx = x as f64 - px;
            let a = (dx * dx + dy * dy) * inv;
            if a >= a_r {
                continue;
            }
            let e = (-a).exp();
            f(y * s.width + x, e - e_r * (1.0 + a_r - a), e - e_r, dx, dy);
        }
    }
}

/// Unclamped splat sums, one `H*W` plane per camera.
fn splat_sums(points: &[Point], cams: &[Camera], s: &RenderSettings) -> Vec<f64> {
    let plane = s.height * s.width;
    let mut sums = vec![0.0; cams.len() * plane];
    for (v, cam) in cams.iter().enumerate() {
        let img = &mut sums[v * plane..(v + 1) * plane];
        for p in points {
            let (px, py) = project(p, cam, s);
            for_splat(px, py, s, |i, g, _, _, _| img[i] += g);
        }
    }
    sums
}

/// `[V, 1, H, W]` occupancy images: background 0, `min(1, sum of splats)`.
pub fn render(points: &[Point], cams: &[Camera], s: &RenderSettings) -> Result<Tensor> {
    s.validate()?;
    let data = splat_sums(points, cams, s).into_iter().map(|v| v.min(1.0)).collect();
    Tensor::new(&[cams.len(), 1, s.height, s.width], data)
}

struct RenderOp {
    points: Vec<Point>,
    settings: RenderSettings,
    sums: Vec<f64>,
}

impl CustomOp for RenderOp {
    fn name(&self) -> &'static str {
        "render"
    }

    fn branch_key(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for v in &self.sums {
            (*v < 1.0).hash(&mut h);
        }
        h.finish()
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>> {
        let s = &self.settings;
        let cams = cameras_from_tensor(inputs[0]);
        let plane = s.height * s.width;
        let inv_s2 = 1.0 / (s.sigma * s.sigma);
        let mut grad = vec![0.0; cams.len() * 3];
        for (v, cam) in cams.iter().enumerate() {
            let go = &grad_out[v * plane..(v + 1) * plane];
            let sums = &self.sums[v * plane..(v + 1) * plane];
            let (u, w) = cam.basis();
            let (sa, ca) = cam.azimuth.sin_cos();
            let (se, ce) = cam.elevation.sin_cos();
            let du_da = [-sa, ca, 0.0];
            let dw_da = [ca * se, sa * se, 0.0];
            let dw_de = [sa * ce, -ca * ce, -se];
            let zoom = s.zoom(cam.distance);
            let (mut ga, mut ge, mut gd) = (0.0, 0.0, 0.0);
            for p in &self.points {
                let (px, py) = project(p, cam, s);
                // dL/dpx and dL/dpy for this point's splat
                let (mut gx, mut gy) = (0.0, 0.0);
                for_splat(px, py, s, |i, _, slope, dx, dy| {
                    if sums[i] < 1.0 && go[i] != 0.0 {
                        let k = go[i] * slope * inv_s2;
                        gx += k * dx;
                        gy += k * dy;
                    }
                });
                if gx == 0.0 && gy == 0.0 {
                    continue;
                }
                let q = [p[0] - s.target[0], p[1] - s.target[1], p[2] - s.target[2]];
                let (qu, qw) = (dot(&q, &u), dot(&q, &w));
                ga += gx * zoom * dot(&q, &du_da) - gy * zoom * dot(&q, &dw_da);
                ge += -gy * zoom * dot(&q, &dw_de);
                gd += -gx * zoom / cam.distance * qu + gy * zoom / cam.distance * qw;
            }
            grad[3 * v] = ga;
            grad[3 * v + 1] = ge;
            grad[3 * v + 2] = gd;
        }
        vec![grad]
    }
}

/// Records a render on the tape, differentiable in the `[1, 3V]` camera
/// parameters.
pub fn render_views(tape: &mut Tape, cams: Var, points: &[Point], settings: &RenderSettings) -> Result<Var> {
    settings.validate()?;
    let ct = tape.value(cams);
    if ct.len() % 3 != 0 || ct.is_empty() {
        return Err(Error::shape(format!("camera tensor {:?} is not a list of triples", ct.shape())));
    }
    let cam_list = cameras_from_tensor(ct);
    let sums = splat_sums(points, &cam_list, settings);
    let out = Tensor::new(
        &[cam_list.len(), 1, settings.height, settings.width],
        sums.iter().map(|v| v.min(1.0)).collect(),
    )?;
    let op = RenderOp {
        points: points.to_vec(),
        settings: *settings,
        sums,
    };
    Ok(tape.custom(&[cams], out, Box::new(op)))
}

/// Writes one view as a binary PGM with 255 = occupied.
pub fn write_pgm(path: impl AsRef<Path>, views: &Tensor, view: usize) -> Result<()> {
    let path = path.as_ref();
    let s = views.shape();
    if s.len() != 4 || view >= s[0] {
        return Err(Error::shape(format!("no view {view} in {s:?}")));
    }
    let (h, w) = (s[2], s[3]);
    let px = &views.data()[view * h * w..(view + 1) * h * w];
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(px.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
