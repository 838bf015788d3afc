//! Semantic decoder: per-patch upsampler from `[L_hat | G]` to `K/2`
//! offsets around each centroid.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::nn::{Linear, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct SemanticDecoder {
    pub hidden: Linear,
    pub out: Linear,
    pub d: usize,
    pub d_prime: usize,
    pub points_per_patch: usize,
    /// Offsets are produced in units of this length.
    pub scale: f64,
}

pub const DECODER_HIDDEN: usize = 256;

impl SemanticDecoder {
    pub fn new(
        store: &mut ParamStore,
        d: usize,
        d_prime: usize,
        points_per_patch: usize,
        scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let hidden = Linear::new(store, "decoder.0", d + d_prime, DECODER_HIDDEN, rng)?;
        let out = Linear::new(store, "decoder.1", DECODER_HIDDEN, points_per_patch * 3, rng)?;
        Ok(Self {
            hidden,
            out,
            d,
            d_prime,
            points_per_patch,
            scale,
        })
    }

    /// `[S, d]` local semantics and optional `[1, D']` global semantics to
    /// the `[S * K/2, 3]` reconstruction.
    pub fn forward(&self, tape: &mut Tape, local: Var, global: Option<Var>, centroids: &[Point]) -> Result<Var> {
        let s = centroids.len();
        if tape.shape(local) != [s, self.d] {
            return Err(Error::shape(format!(
                "decoder expects local [{s}, {}], got {:?}",
                self.d,
                tape.shape(local)
            )));
        }
        let x = match (global, self.d_prime) {
            (None, 0) => local,
            (Some(g), dp) if dp > 0 && tape.shape(g) == [1, dp] => {
                let gb = tape.broadcast_rows(g, s)?;
                tape.concat_cols(local, gb)?
            }
            _ => return Err(Error::shape(format!("decoder configured for D'={}", self.d_prime))),
        };
        let h = self.hidden.forward(tape, x)?;
        let h = tape.relu(h);
        let o = self.out.forward(tape, h)?;
        let o = tape.scale(o, self.scale);
        let o = tape.reshape(o, &[s * self.points_per_patch, 3])?;
        let shift: Vec<f64> = centroids
            .iter()
            .flat_map(|c| std::iter::repeat_n(c, self.points_per_patch).flatten().copied())
            .collect();
        tape.add_const(o, &shift)
    }
}
