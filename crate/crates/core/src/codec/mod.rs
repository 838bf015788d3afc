//! Learned semantic codec: local and global encoders, the channel link and
//! the semantic decoder assembled into one model.

pub mod chamfer;
pub mod decoder;
pub mod global;
pub mod local;
pub mod render;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use chamfer::{chamfer, chamfer_distance};
pub use decoder::SemanticDecoder;
pub use global::{bounding_radius, CameraPredictor, GlobalBranch, GlobalEncoder, GlobalOutput};
pub use local::{group_patches, LocalEncoder, LocalGrouping};
pub use render::{cameras_from_tensor, render, render_views, write_pgm, Camera, RenderSettings};

use crate::channel::{ChannelCodec, UNIT_SYMBOL_MEAN_SQ};
use crate::error::{Error, Result};
use crate::geometry::{extract_patches, patch_size, PatchSet, Point, PointCloud};
use crate::nn::{ParamStore, Tape, Tensor, Var};

/// Parameter name prefixes of the semantic encoders.
pub const ENCODER_PREFIXES: [&str; 3] = ["local.", "camera.", "global."];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecConfig {
    /// Points per cloud `N`.
    pub points: usize,
    /// Patches per cloud `S`.
    pub patches: usize,
    /// Local semantic width.
    pub d: usize,
    /// Global semantic width; 0 disables the global branch.
    pub d_prime: usize,
    pub views: usize,
    /// Square render size in pixels.
    pub image: usize,
    pub splat_sigma: f64,
    pub cnn_features: usize,
    /// Coordinate range of normalized clouds.
    pub range: (f64, f64),
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            points: 1024,
            patches: 16,
            d: 8,
            d_prime: 4,
            views: 4,
            image: 64,
            splat_sigma: 1.0,
            cnn_features: 128,
            range: (0.0, 63.0),
        }
    }
}

impl CodecConfig {
    /// Patch size `K = 2N/S`, required to be a multiple of 4.
    pub fn k(&self) -> Result<usize> {
        let k = patch_size(self.points, self.patches)?;
        if k % 4 != 0 {
            return Err(Error::Config(format!(
                "N={} and S={} give K={k}, which is not divisible by 4",
                self.points, self.patches
            )));
        }
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        self.k()?;
        if self.d == 0 {
            return Err(Error::Config("d must be at least 1".into()));
        }
        if self.d_prime > 0 && self.views == 0 {
            return Err(Error::Config("the global branch needs at least one view".into()));
        }
        if !(self.range.1 > self.range.0) {
            return Err(Error::Config(format!("empty coordinate range {:?}", self.range)));
        }
        if self.d_prime > 0 {
            self.render_settings().validate()?;
        }
        Ok(())
    }

    /// Length unit for encoder inputs and decoder offsets.
    pub fn coord_scale(&self) -> f64 {
        (self.range.1 - self.range.0) / 8.0
    }

    pub fn target(&self) -> Point {
        [(self.range.0 + self.range.1) / 2.0; 3]
    }

    pub fn render_settings(&self) -> RenderSettings {
        RenderSettings {
            height: self.image,
            width: self.image,
            sigma: self.splat_sigma,
            target: self.target(),
        }
    }
}

/// Everything about one cloud that does not depend on parameters.
#[derive(Debug, Clone)]
pub struct Sample {
    pub cloud: PointCloud,
    pub patches: PatchSet,
    pub grouping: LocalGrouping,
    /// Cloud relative to the render target in units of `radius`.
    pub centred: Tensor,
    pub radius: f64,
}

impl Sample {
    pub fn new(cfg: &CodecConfig, cloud: PointCloud) -> Result<Self> {
        if cloud.len() != cfg.points {
            return Err(Error::shape(format!(
                "cloud has {} points, model expects {}",
                cloud.len(),
                cfg.points
            )));
        }
        cfg.k()?;
        let patches = extract_patches(&cloud, cfg.patches)?;
        let grouping = group_patches(&patches, cfg.coord_scale())?;
        let target = cfg.target();
        let radius = bounding_radius(cloud.points(), &target);
        let centred = Tensor::new(
            &[cloud.len(), 3],
            cloud
                .points()
                .iter()
                .flat_map(|p| (0..3).map(move |a| (p[a] - target[a]) / radius))
                .collect(),
        )?;
        Ok(Self {
            cloud,
            patches,
            grouping,
            centred,
            radius,
        })
    }
}

/// How local semantics reach the decoder.
#[derive(Debug, Clone, Copy)]
pub enum ChannelMode<'a> {
    /// Straight through, as in noise-free training.
    Identity,
    /// Learned channel codec with optional interleaved noise of length
    /// `S * 2d`.
    Coded(Option<&'a [f64]>),
    /// Power-normalized semantics sent directly, noise of length `S * d`,
    /// then rescaled.
    Uncoded(Option<&'a [f64]>),
}

#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub local: Var,
    pub global: Option<GlobalOutput>,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: CodecConfig,
    pub store: ParamStore,
    pub local: LocalEncoder,
    pub global: Option<GlobalBranch>,
    pub channel: ChannelCodec,
    pub decoder: SemanticDecoder,
}

impl Model {
    pub fn new(cfg: CodecConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.k()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let local = LocalEncoder::new(&mut store, cfg.d, &mut rng)?;
        let global = if cfg.d_prime > 0 {
            let camera = CameraPredictor::new(&mut store, cfg.views, &mut rng)?;
            let encoder = GlobalEncoder::new(
                &mut store,
                (cfg.image, cfg.image),
                cfg.cnn_features,
                cfg.d_prime,
                &mut rng,
            )?;
            Some(GlobalBranch {
                camera,
                encoder,
                render: cfg.render_settings(),
            })
        } else {
            None
        };
        let channel = ChannelCodec::new(&mut store, cfg.d, &mut rng)?;
        let decoder = SemanticDecoder::new(&mut store, cfg.d, cfg.d_prime, k / 2, cfg.coord_scale(), &mut rng)?;
        Ok(Self {
            cfg,
            store,
            local,
            global,
            channel,
            decoder,
        })
    }

    pub fn sample(&self, cloud: PointCloud) -> Result<Sample> {
        Sample::new(&self.cfg, cloud)
    }

    pub fn freeze_encoders(&mut self, frozen: bool) -> usize {
        ENCODER_PREFIXES
            .iter()
            .map(|p| self.store.set_frozen(p, frozen))
            .sum()
    }

    /// Interleaved noise length the channel mode expects.
    pub fn noise_len(&self, coded: bool) -> usize {
        let n = self.cfg.patches * self.cfg.d;
        if coded {
            2 * n
        } else {
            n
        }
    }

    pub fn encode(&self, tape: &mut Tape, sample: &Sample) -> Result<Encoded> {
        let local = self.local.forward(tape, &sample.grouping)?;
        let global = match &self.global {
            Some(g) => Some(g.forward(tape, sample.cloud.points(), &sample.centred, sample.radius)?),
            None => None,
        };
        Ok(Encoded { local, global })
    }

    pub fn transmit(&self, tape: &mut Tape, local: Var, mode: ChannelMode) -> Result<Var> {
        match mode {
            ChannelMode::Identity => Ok(local),
            ChannelMode::Coded(noise) => {
                if let Some(n) = noise {
                    self.check_noise(n, true)?;
                }
                self.channel.transmit(tape, local, noise)
            }
            ChannelMode::Uncoded(noise) => {
                let Some(n) = noise else { return Ok(local) };
                self.check_noise(n, false)?;
                let v = tape.value(local).data();
                let sum_sq: f64 = v.iter().map(|x| x * x).sum();
                let scale = (UNIT_SYMBOL_MEAN_SQ * v.len() as f64 / sum_sq).sqrt();
                let x = tape.power_normalize(local, UNIT_SYMBOL_MEAN_SQ)?;
                let x = tape.add_const(x, n)?;
                Ok(tape.scale(x, 1.0 / scale))
            }
        }
    }

    fn check_noise(&self, n: &[f64], coded: bool) -> Result<()> {
        let want = self.noise_len(coded);
        if n.len() != want {
            return Err(Error::shape(format!("noise of length {} where {want} expected", n.len())));
        }
        Ok(())
    }

    pub fn decode(&self, tape: &mut Tape, local_hat: Var, global: Option<Var>, sample: &Sample) -> Result<Var> {
        self.decoder.forward(tape, local_hat, global, &sample.patches.centroids)
    }

    /// Full chain to the `[N, 3]` reconstruction.
    pub fn forward(&self, tape: &mut Tape, sample: &Sample, mode: ChannelMode) -> Result<Var> {
        let e = self.encode(tape, sample)?;
        let y = self.transmit(tape, e.local, mode)?;
        self.decode(tape, y, e.global.map(|g| g.global), sample)
    }

    pub fn reconstruct(&self, sample: &Sample, mode: ChannelMode) -> Result<PointCloud> {
        let mut tape = Tape::new(&self.store);
        let y = self.forward(&mut tape, sample, mode)?;
        tape.check()?;
        PointCloud::from_flat(tape.value(y).data())
    }

    /// Encoder outputs as constants, for training with frozen encoders.
    pub fn encode_values(&self, sample: &Sample) -> Result<(Tensor, Option<Tensor>)> {
        let mut tape = Tape::new(&self.store);
        let e = self.encode(&mut tape, sample)?;
        tape.check()?;
        Ok((
            tape.value(e.local).clone(),
            e.global.map(|g| tape.value(g.global).clone()),
        ))
    }
}

#[cfg(test)]
mod tests;
