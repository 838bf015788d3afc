use rand::Rng;

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Uniform He initialisation: `U(-sqrt(6/fan_in), sqrt(6/fan_in))`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

/// Fully connected layer `y = x W + b` applied over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w = store.add(format!("{name}.w"), kaiming_uniform(&[in_dim, out_dim], in_dim, rng))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    /// All-zero weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let w = store.add(format!("{name}.w"), Tensor::zeros(&[in_dim, out_dim]))?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_dim]))?;
        Ok(Self {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.linear(x, self.w, self.b)
    }
}

/// Chain of linear layers with ReLU between them. Because every layer acts on
/// the last axis only, a `[B, K, C]` input is the shared per-point MLP.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_last: bool,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        relu_last: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers, relu_last })
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        let n = self.layers.len();
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(tape, x)?;
            if i + 1 < n || self.relu_last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }
}

/// Square-kernel 2D convolution.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let w = store.add(
            format!("{name}.w"),
            kaiming_uniform(&[out_ch, in_ch, kernel, kernel], fan_in, rng),
        )?;
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[out_ch]))?;
        Ok(Self { w, b, stride, pad })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        tape.conv2d(x, w, b, self.stride, self.pad)
    }
}
