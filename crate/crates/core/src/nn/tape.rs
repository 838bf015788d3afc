//! Dynamic reverse-mode tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Nodes are appended in
//! execution order, which is already a topological order, so backward simply
//! walks the node list in reverse once.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Backward rule for an operation defined outside this module.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the upstream gradient of
    /// the output. Return an empty vector for inputs that take no gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &[f64]) -> Vec<Vec<f64>>;

    /// Hash of every discrete choice the forward pass made (clamps,
    /// nearest-neighbour matches). Ops without such choices keep the
    /// default.
    fn branch_key(&self) -> u64 {
        0
    }
}

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    AddConst(Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Reshape(Var),
    ConcatCols(Var, Var),
    BroadcastRows(Var),
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<usize>,
    },
    PowerNormalize {
        x: Var,
        scale: f64,
        sum_sq: f64,
    },
    Sum(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::AddConst(..) => "add_const",
            Op::MulConst(..) => "mul_const",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Reshape(..) => "reshape",
            Op::ConcatCols(..) => "concat_cols",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::SegmentMax { .. } => "segment_max",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::PowerNormalize { .. } => "power_normalize",
            Op::Sum(..) => "sum",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Tape::input_with_grad`] or
    /// [`Tape::param`].
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients in ascending parameter order.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }
}

/// Computation record for one forward pass over a borrowed parameter store.
pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    check_finite: bool,
    non_finite: Option<&'static str>,
}

/// `c (+)= op(a) * op(b)` for row-major buffers, with `op(a)` of shape m x k
/// and `op(b)` of shape k x n.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover exactly the strided extents described above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
            non_finite: None,
        }
    }

    /// Enables or disables the per-op finiteness scan (on by default in
    /// debug builds).
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => &self.store.get(*id).value,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.check_finite && self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(op.name());
        }
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Hash of every branch taken so far: ReLU signs, max-pool winners and
    /// custom-op choices. Two passes with equal patterns lie in the same
    /// smooth piece of the computed function.
    pub fn branch_pattern(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.value(*x).data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::SegmentMax { argmax, .. } | Op::MaxPool2d { argmax, .. } => argmax.hash(&mut h),
                Op::Custom { op, .. } => op.branch_key().hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// First op that produced a non-finite value, if any was detected.
    pub fn check(&self) -> Result<()> {
        match self.non_finite {
            Some(name) => Err(Error::NonFinite(name.to_string())),
            None => Ok(()),
        }
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let needs = !self.store.get(id).frozen;
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: needs,
        });
        Var(self.nodes.len() - 1)
    }

    /// `[.., k] x [k, n] -> [.., n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if bv.shape().len() != 2 || av.last_dim() != bv.shape()[0] {
            return Err(Error::shape(format!(
                "matmul {:?} x {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let k = av.last_dim();
        let n = bv.shape()[1];
        let m = av.len() / k;
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul(a, b), needs))
    }

    /// Adds a length-n vector to every row of `[.., n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = xv.last_dim();
        if bv.len() != n {
            return Err(Error::shape(format!(
                "add_bias {:?} + {:?}",
                xv.shape(),
                bv.shape()
            )));
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            row.iter_mut().zip(bv.data()).for_each(|(o, b)| *o += b);
        }
        let shape = xv.shape().to_vec();
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddBias(x, b), needs))
    }

    /// Affine map `x W + b` over the last axis.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let wv = self.param(w);
        let bv = self.param(b);
        let y = self.matmul(x, wv)?;
        self.add_bias(y, bv)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(format!("add {:?} + {:?}", av.shape(), bv.shape())));
        }
        let out: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let shape = av.shape().to_vec();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Add(a, b), needs))
    }

    /// Adds a constant buffer of the same length.
    pub fn add_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if c.len() != xv.len() {
            return Err(Error::shape(format!(
                "add_const {:?} + {} values",
                xv.shape(),
                c.len()
            )));
        }
        let out: Vec<f64> = xv.data().iter().zip(c).map(|(a, b)| a + b).collect();
        let shape = xv.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::AddConst(x), needs))
    }

    /// Element-wise product with a constant buffer of the same length.
    pub fn mul_const(&mut self, x: Var, c: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if c.len() != xv.len() {
            return Err(Error::shape(format!(
                "mul_const {:?} * {} values",
                xv.shape(),
                c.len()
            )));
        }
        let out: Vec<f64> = xv.data().iter().zip(c).map(|(a, b)| a * b).collect();
        let shape = xv.shape().to_vec();
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MulConst(x, c.to_vec()), needs))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|v| v * s).collect()).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::Scale(x, s), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|v| v.max(0.0)).collect()).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::Relu(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|v| v.tanh()).collect()).unwrap();
        let needs = self.needs(x);
        self.push(out, Op::Tanh(x), needs)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let needs = self.needs(x);
        Ok(self.push(t, Op::Reshape(x), needs))
    }

    /// `[m, p] ++ [m, q] -> [m, p + q]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.shape()[0] != bv.shape()[0] {
            return Err(Error::shape(format!(
                "concat_cols {:?} ++ {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, p, q) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = Vec::with_capacity(m * (p + q));
        for r in 0..m {
            out.extend_from_slice(&av.data()[r * p..(r + 1) * p]);
            out.extend_from_slice(&bv.data()[r * q..(r + 1) * q]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, p + q], out)?, Op::ConcatCols(a, b), needs))
    }

    /// Repeats a `[1, q]` row `m` times.
    pub fn broadcast_rows(&mut self, x: Var, m: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape().len() != 2 || xv.shape()[0] != 1 {
            return Err(Error::shape(format!("broadcast_rows of {:?}", xv.shape())));
        }
        let q = xv.shape()[1];
        let out = xv.data().repeat(m);
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&[m, q], out)?, Op::BroadcastRows(x), needs))
    }

    /// Treats `x` as `[groups, len, c]` and takes the channel-wise max over
    /// the middle axis. Ties go to the first index.
    pub fn segment_max(&mut self, x: Var, groups: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if groups == 0 || len == 0 || xv.len() % (groups * len) != 0 {
            return Err(Error::shape(format!(
                "segment_max over {groups}x{len} of {:?}",
                xv.shape()
            )));
        }
        let c = xv.len() / (groups * len);
        let d = xv.data();
        let mut out = vec![0.0; groups * c];
        let mut argmax = vec![0usize; groups * c];
        for g in 0..groups {
            let base = g * len * c;
            let o = &mut out[g * c..(g + 1) * c];
            let am = &mut argmax[g * c..(g + 1) * c];
            o.copy_from_slice(&d[base..base + c]);
            for (ch, a) in am.iter_mut().enumerate() {
                *a = base + ch;
            }
            for i in 1..len {
                let row = &d[base + i * c..base + (i + 1) * c];
                for ch in 0..c {
                    if row[ch] > o[ch] {
                        o[ch] = row[ch];
                        am[ch] = base + i * c + ch;
                    }
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&[groups, c], out)?, Op::SegmentMax { x, argmax }, needs))
    }

    /// Channel-wise max over the point axis of `[b, k, c]`.
    pub fn max_pool_points(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape(format!("max_pool_points expects [B,K,C], got {s:?}")));
        }
        self.segment_max(x, s[0], s[1])
    }

    /// Element-wise max across the view axis of `[b, v, f]`.
    pub fn view_pool(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::shape(format!("view_pool expects [B,V,F], got {s:?}")));
        }
        self.segment_max(x, s[0], s[1])
    }

    /// Cross-correlation of `[b, c, h, w]` with `[o, c, kh, kw]` weights and
    /// `[o]` bias.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || bv.len() != ws[0] || stride == 0 {
            return Err(Error::shape(format!(
                "conv2d input {xs:?} weight {ws:?} bias {:?}",
                bv.shape()
            )));
        }
        let (batch, in_ch, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (out_ch, kh, kw) = (ws[0], ws[2], ws[3]);
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} does not fit padded {h}x{wd}"
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            batch,
            in_ch,
            h,
            w: wd,
            out_ch,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        };
        let ckk = in_ch * kh * kw;
        let npix = oh * ow;
        let mut cols = vec![0.0; batch * ckk * npix];
        for bi in 0..batch {
            im2col(
                &xv.data()[bi * in_ch * h * wd..(bi + 1) * in_ch * h * wd],
                &geom,
                &mut cols[bi * ckk * npix..(bi + 1) * ckk * npix],
            );
        }
        let mut out = vec![0.0; batch * out_ch * npix];
        for bi in 0..batch {
            let o = &mut out[bi * out_ch * npix..(bi + 1) * out_ch * npix];
            for (oc, row) in o.chunks_exact_mut(npix).enumerate() {
                row.fill(bv.data()[oc]);
            }
            gemm(
                out_ch,
                ckk,
                npix,
                wv.data(),
                false,
                &cols[bi * ckk * npix..(bi + 1) * ckk * npix],
                false,
                o,
                true,
            );
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let t = Tensor::new(&[batch, out_ch, oh, ow], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, geom, cols }, needs))
    }

    /// Max pooling over `window x window` blocks of `[b, c, h, w]`.
    pub fn max_pool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 4 || window == 0 || stride == 0 || s[2] < window || s[3] < window {
            return Err(Error::shape(format!(
                "max_pool2d window {window} stride {stride} on {s:?}"
            )));
        }
        let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;
        let d = xv.data();
        let mut out = vec![0.0; bc * oh * ow];
        let mut argmax = vec![0usize; bc * oh * ow];
        for plane in 0..bc {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = usize::MAX;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + (oy * stride + dy) * w + ox * stride + dx;
                            if arg == usize::MAX || d[idx] > best {
                                best = d[idx];
                                arg = idx;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out[o] = best;
                    argmax[o] = arg;
                }
            }
        }
        let shape = [s[0], s[1], oh, ow];
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MaxPool2d { x, argmax }, needs))
    }

    /// Uniform rescale to mean square `target` per entry.
    pub fn power_normalize(&mut self, x: Var, target_mean_sq: f64) -> Result<Var> {
        let xv = self.value(x);
        let sum_sq: f64 = xv.data().iter().map(|v| v * v).sum();
        if !(sum_sq > 0.0) {
            return Err(Error::invalid("power normalization of an all-zero signal"));
        }
        let scale = (target_mean_sq * xv.len() as f64 / sum_sq).sqrt();
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|v| v * scale).collect())?;
        let needs = self.needs(x);
        Ok(self.push(out, Op::PowerNormalize { x, scale, sum_sq }, needs))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Records an externally computed op with its own backward rule.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Var {
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            needs,
        )
    }

    /// Back-propagates from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check()?;
        if self.value(loss).len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let leaf = matches!(node.op, Op::Input | Op::Param(_));
            if leaf {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(i, &g, &mut grads);
        }
        let mut params: Vec<(ParamId, Vec<f64>)> = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(id) = node.op {
                if let Some(g) = &grads[i] {
                    match params.iter_mut().find(|(p, _)| *p == id) {
                        Some((_, acc)) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                        None => params.push((id, g.clone())),
                    }
                }
            }
        }
        params.sort_by_key(|(id, _)| *id);
        Ok(Gradients {
            nodes: grads,
            params,
        })
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[i].value.as_ref().unwrap();
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = av.last_dim();
                let n = bv.shape()[1];
                let m = av.len() / k;
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, bv.data(), true, &mut da, false);
                    add_into(&mut grads[a.0], &da);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, g, false, &mut db, false);
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::AddBias(x, b) => {
                if self.needs(*x) {
                    add_into(&mut grads[x.0], g);
                }
                if self.needs(*b) {
                    let n = self.value(*b).len();
                    let mut db = vec![0.0; n];
                    for row in g.chunks_exact(n) {
                        db.iter_mut().zip(row).for_each(|(d, r)| *d += r);
                    }
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.needs(*v) {
                        add_into(&mut grads[v.0], g);
                    }
                }
            }
            Op::AddConst(x) | Op::Reshape(x) => add_into(&mut grads[x.0], g),
            Op::MulConst(x, c) => {
                let d: Vec<f64> = g.iter().zip(c).map(|(a, b)| a * b).collect();
                add_into(&mut grads[x.0], &d);
            }
            Op::Scale(x, s) => {
                let d: Vec<f64> = g.iter().map(|a| a * s).collect();
                add_into(&mut grads[x.0], &d);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let d: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .map(|(a, v)| if *v > 0.0 { *a } else { 0.0 })
                    .collect();
                add_into(&mut grads[x.0], &d);
            }
            Op::Tanh(x) => {
                let d: Vec<f64> = g
                    .iter()
                    .zip(out.data())
                    .map(|(a, y)| a * (1.0 - y * y))
                    .collect();
                add_into(&mut grads[x.0], &d);
            }
            Op::ConcatCols(a, b) => {
                let p = self.value(*a).shape()[1];
                let q = self.value(*b).shape()[1];
                if self.needs(*a) {
                    let d: Vec<f64> = g.chunks_exact(p + q).flat_map(|r| r[..p].to_vec()).collect();
                    add_into(&mut grads[a.0], &d);
                }
                if self.needs(*b) {
                    let d: Vec<f64> = g.chunks_exact(p + q).flat_map(|r| r[p..].to_vec()).collect();
                    add_into(&mut grads[b.0], &d);
                }
            }
            Op::BroadcastRows(x) => {
                let q = self.value(*x).len();
                let mut d = vec![0.0; q];
                for row in g.chunks_exact(q) {
                    d.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                }
                add_into(&mut grads[x.0], &d);
            }
            Op::SegmentMax { x, argmax } | Op::MaxPool2d { x, argmax } => {
                let mut d = vec![0.0; self.value(*x).len()];
                for (gi, &src) in g.iter().zip(argmax) {
                    d[src] += gi;
                }
                add_into(&mut grads[x.0], &d);
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let ckk = geom.in_ch * geom.kh * geom.kw;
                let npix = geom.oh * geom.ow;
                let per_out = geom.out_ch * npix;
                if self.needs(*b) {
                    let mut db = vec![0.0; geom.out_ch];
                    for gb in g.chunks_exact(per_out) {
                        for (oc, row) in gb.chunks_exact(npix).enumerate() {
                            db[oc] += row.iter().sum::<f64>();
                        }
                    }
                    add_into(&mut grads[b.0], &db);
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; geom.out_ch * ckk];
                    for bi in 0..geom.batch {
                        gemm(
                            geom.out_ch,
                            npix,
                            ckk,
                            &g[bi * per_out..(bi + 1) * per_out],
                            false,
                            &cols[bi * ckk * npix..(bi + 1) * ckk * npix],
                            true,
                            &mut dw,
                            true,
                        );
                    }
                    add_into(&mut grads[w.0], &dw);
                }
                if self.needs(*x) {
                    let wv = self.value(*w).data();
                    let plane = geom.in_ch * geom.h * geom.w;
                    let mut dx = vec![0.0; geom.batch * plane];
                    let mut dcols = vec![0.0; ckk * npix];
                    for bi in 0..geom.batch {
                        gemm(
                            ckk,
                            geom.out_ch,
                            npix,
                            wv,
                            true,
                            &g[bi * per_out..(bi + 1) * per_out],
                            false,
                            &mut dcols,
                            false,
                        );
                        col2im(&dcols, geom, &mut dx[bi * plane..(bi + 1) * plane]);
                    }
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::PowerNormalize { x, scale, sum_sq } => {
                // y = c x / |x|: dy/dx = (c/|x|) (I - x x^T / |x|^2)
                let xv = self.value(*x).data();
                let dot: f64 = g.iter().zip(xv).map(|(a, b)| a * b).sum();
                let d: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .map(|(gi, xi)| scale * (gi - xi * dot / sum_sq))
                    .collect();
                add_into(&mut grads[x.0], &d);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                add_into(&mut grads[x.0], &vec![g[0]; n]);
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let ds = op.backward(&ins, out, g);
                for (v, d) in inputs.iter().zip(ds) {
                    if self.needs(*v) && !d.is_empty() {
                        add_into(&mut grads[v.0], &d);
                    }
                }
            }
        }
    }
}

fn im2col(x: &[f64], g: &ConvGeom, cols: &mut [f64]) {
    let npix = g.oh * g.ow;
    for c in 0..g.in_ch {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * npix..(row + 1) * npix];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        dst[oy * g.ow + ox] = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                            x[(c * g.h + iy as usize) * g.w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let npix = g.oh * g.ow;
    for c in 0..g.in_ch {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * npix..(row + 1) * npix];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            dx[(c * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}
