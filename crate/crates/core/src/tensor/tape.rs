use super::attention::{causal_attention, causal_attention_backward, stream_attention, stream_attention_backward};
use super::conv::{conv_backward, conv_forward, ConvGeom, KernelDepth};
use super::kernels::{self, axis_split, axis_taps, gemm, sigmoid, Tap};
use super::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

const GROUP_CHANNELS: usize = 4;
const GROUP_EPS: f64 = 1e-5;
const RMS_EPS: f64 = 1e-6;
const DICE_EPS: f64 = 1e-6;

/// Parameterised op selector for [`Tape::forward_op`].
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    /// `x [n, in]`, `w [out, in]`, `b [out]` → `[n, out]`.
    Linear,
    /// `x [N, C, X, Y, Z]`, `w [O, C, 3, 3, 3]`, `b [O]`, same padding.
    Conv3d,
    /// Like `Conv3d` but only the central through-plane kernel slice.
    Conv2dSlicewise,
    /// Per-voxel fully-connected map over channels: `w [O, C]`, `b [O]`.
    ChannelLinear,
    Softmax { axis: usize },
    Silu,
    Sigmoid,
    /// Groups of four channels, no affine parameters.
    GroupNorm,
    /// `x [n, d]`, `w [d]`.
    RmsNorm,
    MaxPool { factors: [usize; 3] },
    /// Output voxel `i` samples input coordinate `(i + 0.5)·ratio − 0.5`.
    TrilinearResize { out: [usize; 3], ratio: [f64; 3] },
    GlobalMax,
    Concat { axis: usize },
    Narrow { axis: usize, start: usize, len: usize },
    /// Row lookup into a `[rows, d]` table.
    Embedding { ids: Vec<usize> },
    BroadcastSpatial { spatial: [usize; 3] },
    Add,
    Mul,
    Scale { factor: f64 },
    Sum,
    /// `q, k, v [S, b, X, Y, Z]`: softmax over streams per voxel, scale `b^-1/2`.
    StreamAttention,
    CausalAttention { heads: usize },
    /// Mean over positions whose target is `Some`.
    CrossEntropy { targets: Vec<Option<usize>> },
    SoftDice { target: Vec<f64> },
}

impl OpKind {
    pub const NAMES: [&'static str; 24] = [
        "linear",
        "conv3d",
        "conv2d_slicewise",
        "channel_linear",
        "softmax",
        "silu",
        "sigmoid",
        "group_norm",
        "rms_norm",
        "max_pool",
        "trilinear_upsample",
        "global_max",
        "concat",
        "narrow",
        "embedding_lookup",
        "broadcast_spatial",
        "add",
        "mul",
        "scale",
        "sum",
        "stream_attention",
        "causal_attention",
        "cross_entropy",
        "soft_dice",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Linear => "linear",
            OpKind::Conv3d => "conv3d",
            OpKind::Conv2dSlicewise => "conv2d_slicewise",
            OpKind::ChannelLinear => "channel_linear",
            OpKind::Softmax { .. } => "softmax",
            OpKind::Silu => "silu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::GroupNorm => "group_norm",
            OpKind::RmsNorm => "rms_norm",
            OpKind::MaxPool { .. } => "max_pool",
            OpKind::TrilinearResize { .. } => "trilinear_upsample",
            OpKind::GlobalMax => "global_max",
            OpKind::Concat { .. } => "concat",
            OpKind::Narrow { .. } => "narrow",
            OpKind::Embedding { .. } => "embedding_lookup",
            OpKind::BroadcastSpatial { .. } => "broadcast_spatial",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale { .. } => "scale",
            OpKind::Sum => "sum",
            OpKind::StreamAttention => "stream_attention",
            OpKind::CausalAttention { .. } => "causal_attention",
            OpKind::CrossEntropy { .. } => "cross_entropy",
            OpKind::SoftDice { .. } => "soft_dice",
        }
    }

    /// Kinds without data-dependent parameters, by name. Parameterised
    /// kinds get a default (`softmax` over axis 0, ×2 pooling, ...).
    pub fn from_name(name: &str) -> Result<OpKind> {
        Ok(match name {
            "linear" => OpKind::Linear,
            "conv3d" => OpKind::Conv3d,
            "conv2d_slicewise" => OpKind::Conv2dSlicewise,
            "channel_linear" => OpKind::ChannelLinear,
            "softmax" => OpKind::Softmax { axis: 0 },
            "silu" => OpKind::Silu,
            "sigmoid" => OpKind::Sigmoid,
            "group_norm" => OpKind::GroupNorm,
            "rms_norm" => OpKind::RmsNorm,
            "max_pool" => OpKind::MaxPool { factors: [2, 2, 2] },
            "global_max" => OpKind::GlobalMax,
            "concat" => OpKind::Concat { axis: 0 },
            "add" => OpKind::Add,
            "mul" => OpKind::Mul,
            "sum" => OpKind::Sum,
            "stream_attention" => OpKind::StreamAttention,
            "causal_attention" => OpKind::CausalAttention { heads: 1 },
            other => return Err(TensorError::UnknownKind(other.to_string())),
        })
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Conv { x: Var, w: Var, b: Var, depth: KernelDepth },
    ChannelLinear { x: Var, w: Var, b: Option<Var> },
    Softmax { x: Var, axis: usize },
    Silu(Var),
    Sigmoid(Var),
    GroupNorm { x: Var, rstd: Vec<f64> },
    RmsNorm { x: Var, w: Var, rinv: Vec<f64> },
    MaxPool { x: Var, arg: Vec<usize> },
    Resize { x: Var, taps: Box<[Vec<Tap>; 3]> },
    GlobalMax { x: Var, arg: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Rows { table: Var, ids: Vec<usize> },
    BroadcastSpatial { x: Var },
    StreamAttention { q: Var, k: Var, v: Var, probs: Vec<f64> },
    CausalAttention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, probs: Vec<f64>, count: usize },
    SoftDice { pred: Var, target: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Scale(x, _) | Op::Sum(x) | Op::Silu(x) | Op::Sigmoid(x) => vec![*x],
            Op::Linear { x, w, b } | Op::ChannelLinear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Conv { x, w, b, .. } => vec![*x, *w, *b],
            Op::RmsNorm { x, w, .. } => vec![*x, *w],
            Op::Softmax { x, .. }
            | Op::GroupNorm { x, .. }
            | Op::MaxPool { x, .. }
            | Op::Resize { x, .. }
            | Op::GlobalMax { x, .. }
            | Op::Narrow { x, .. }
            | Op::BroadcastSpatial { x } => vec![*x],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Rows { table, .. } => vec![*table],
            Op::StreamAttention { q, k, v, .. } | Op::CausalAttention { q, k, v, .. } => vec![*q, *k, *v],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::SoftDice { pred, .. } => vec![*pred],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar root with respect to every leaf that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// Append-only record of forward values and the ops that produced them.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(TensorError::Shape(msg))
}

fn spatial3(shape: &[usize], what: &str) -> Result<[usize; 3]> {
    if shape.len() != 5 {
        return shape_err(format!("{what} expects [N, C, X, Y, Z], got {shape:?}"));
    }
    Ok([shape[2], shape[3], shape[4]])
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node recorded after `mark` (a previous [`Tape::len`]).
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn new_value(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    /// Apply an op selected at run time.
    pub fn forward_op(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(TensorError::Arity { kind: kind.name(), expected: n, got: inputs.len() })
            }
        };
        match kind {
            OpKind::Linear => {
                if inputs.len() == 2 {
                    self.linear(inputs[0], inputs[1], None)
                } else {
                    arity(3)?;
                    self.linear(inputs[0], inputs[1], Some(inputs[2]))
                }
            }
            OpKind::Conv3d | OpKind::Conv2dSlicewise => {
                arity(3)?;
                let slicewise = matches!(kind, OpKind::Conv2dSlicewise);
                self.conv(inputs[0], inputs[1], inputs[2], slicewise)
            }
            OpKind::ChannelLinear => {
                if inputs.len() == 2 {
                    self.channel_linear(inputs[0], inputs[1], None)
                } else {
                    arity(3)?;
                    self.channel_linear(inputs[0], inputs[1], Some(inputs[2]))
                }
            }
            OpKind::Softmax { axis } => {
                arity(1)?;
                self.softmax(inputs[0], *axis)
            }
            OpKind::Silu => {
                arity(1)?;
                Ok(self.silu(inputs[0]))
            }
            OpKind::Sigmoid => {
                arity(1)?;
                Ok(self.sigmoid(inputs[0]))
            }
            OpKind::GroupNorm => {
                arity(1)?;
                self.group_norm(inputs[0])
            }
            OpKind::RmsNorm => {
                arity(2)?;
                self.rms_norm(inputs[0], inputs[1])
            }
            OpKind::MaxPool { factors } => {
                arity(1)?;
                self.max_pool(inputs[0], *factors)
            }
            OpKind::TrilinearResize { out, ratio } => {
                arity(1)?;
                self.resize(inputs[0], *out, *ratio)
            }
            OpKind::GlobalMax => {
                arity(1)?;
                self.global_max(inputs[0])
            }
            OpKind::Concat { axis } => self.concat(inputs, *axis),
            OpKind::Narrow { axis, start, len } => {
                arity(1)?;
                self.narrow(inputs[0], *axis, *start, *len)
            }
            OpKind::Embedding { ids } => {
                arity(1)?;
                self.rows(inputs[0], ids)
            }
            OpKind::BroadcastSpatial { spatial } => {
                arity(1)?;
                self.broadcast_spatial(inputs[0], *spatial)
            }
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::Scale { factor } => {
                arity(1)?;
                Ok(self.scale(inputs[0], *factor))
            }
            OpKind::Sum => {
                arity(1)?;
                Ok(self.sum(inputs[0]))
            }
            OpKind::StreamAttention => {
                arity(3)?;
                self.stream_attention(inputs[0], inputs[1], inputs[2])
            }
            OpKind::CausalAttention { heads } => {
                arity(3)?;
                self.causal_attention(inputs[0], inputs[1], inputs[2], *heads)
            }
            OpKind::CrossEntropy { targets } => {
                arity(1)?;
                self.cross_entropy(inputs[0], targets)
            }
            OpKind::SoftDice { target } => {
                arity(1)?;
                self.soft_dice(inputs[0], target)
            }
        }
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Self::new_value(shape, data), Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Self::new_value(shape, data), Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let data = self.data(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push(Self::new_value(shape, data), Op::Scale(x, factor))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| v * sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Self::new_value(shape, data), Op::Silu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data = self.data(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Self::new_value(shape, data), Op::Sigmoid(x))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return shape_err(format!("linear: x {xs:?}, w {ws:?}"));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = b {
            if self.shape(b) != [dout] {
                return shape_err(format!("linear bias {:?}, expected [{dout}]", self.shape(b)));
            }
        }
        let mut out = vec![0.0; n * dout];
        if let Some(b) = b {
            let bd = self.data(b);
            for row in out.chunks_exact_mut(dout) {
                row.copy_from_slice(bd);
            }
        }
        gemm(n, din, dout, self.data(x), (din, 1), self.data(w), (1, din), 1.0, &mut out);
        Ok(self.push(Self::new_value(vec![n, dout], out), Op::Linear { x, w, b }))
    }

    fn conv(&mut self, x: Var, w: Var, b: Var, slicewise: bool) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let spatial = spatial3(&xs, "conv")?;
        if ws.len() != 5 || ws[1] != xs[1] || ws[2..] != [3, 3, 3] || self.shape(b) != [ws[0]] {
            return shape_err(format!("conv: x {xs:?}, w {ws:?}, b {:?}", self.shape(b)));
        }
        let depth = if slicewise { KernelDepth::Central } else { KernelDepth::Full };
        let g = ConvGeom { batch: xs[0], cin: xs[1], cout: ws[0], spatial, depth };
        let out = conv_forward(self.data(x), self.data(w), self.data(b), &g);
        let shape = vec![xs[0], ws[0], spatial[0], spatial[1], spatial[2]];
        Ok(self.push(Self::new_value(shape, out), Op::Conv { x, w, b, depth }))
    }

    /// Full 3³ convolution, same padding.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.conv(x, w, b, false)
    }

    /// 2D convolution of every axis-2 slice with the central kernel slice.
    pub fn conv2d_slicewise(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.conv(x, w, b, true)
    }

    /// `x [N, C, ...]`, `w [O, C]` → `[N, O, ...]`.
    pub fn channel_linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w);
        if xs.len() < 2 || ws.len() != 2 || ws[1] != xs[1] {
            return shape_err(format!("channel_linear: x {xs:?}, w {ws:?}"));
        }
        let (n, cin, cout) = (xs[0], xs[1], ws[0]);
        let v: usize = xs[2..].iter().product();
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return shape_err(format!("channel_linear bias {:?}, expected [{cout}]", self.shape(b)));
            }
        }
        let mut out = vec![0.0; n * cout * v];
        for i in 0..n {
            let on = &mut out[i * cout * v..(i + 1) * cout * v];
            if let Some(b) = b {
                for (o, chunk) in on.chunks_exact_mut(v).enumerate() {
                    chunk.iter_mut().for_each(|c| *c = self.nodes[b.0].value.data[o]);
                }
            }
            gemm(cout, cin, v, self.data(w), (cin, 1), &self.data(x)[i * cin * v..(i + 1) * cin * v], (v, 1), 1.0, on);
        }
        let mut shape = xs;
        shape[1] = cout;
        Ok(self.push(Self::new_value(shape, out), Op::ChannelLinear { x, w, b }))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return shape_err(format!("softmax axis {axis} for shape {shape:?}"));
        }
        let (o, d, i) = axis_split(&shape, axis);
        let y = kernels::softmax(self.data(x), o, d, i);
        Ok(self.push(Self::new_value(shape, y), Op::Softmax { x, axis }))
    }

    /// Normalise each group of four consecutive channels per batch item.
    pub fn group_norm(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || !shape[1].is_multiple_of(GROUP_CHANNELS) {
            return shape_err(format!("group_norm needs channels divisible by {GROUP_CHANNELS}, got {shape:?}"));
        }
        let v: usize = shape[2..].iter().product();
        let (y, rstd) = kernels::block_norm(self.data(x), GROUP_CHANNELS * v, GROUP_EPS);
        Ok(self.push(Self::new_value(shape, y), Op::GroupNorm { x, rstd }))
    }

    /// `x / rms(x) · w` per row of `x [n, d]`.
    pub fn rms_norm(&mut self, x: Var, w: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || self.shape(w) != [shape[1]] {
            return shape_err(format!("rms_norm: x {shape:?}, w {:?}", self.shape(w)));
        }
        let d = shape[1];
        let wd = self.data(w);
        let mut y = vec![0.0; shape[0] * d];
        let mut rinv = Vec::with_capacity(shape[0]);
        for (xs, ys) in self.data(x).chunks_exact(d).zip(y.chunks_exact_mut(d)) {
            let ms = xs.iter().map(|v| v * v).sum::<f64>() / d as f64;
            let r = 1.0 / (ms + RMS_EPS).sqrt();
            for ((o, &v), &g) in ys.iter_mut().zip(xs).zip(wd) {
                *o = v * r * g;
            }
            rinv.push(r);
        }
        Ok(self.push(Self::new_value(shape, y), Op::RmsNorm { x, w, rinv }))
    }

    /// Max pooling over the last three axes; partial edge windows are kept.
    pub fn max_pool(&mut self, x: Var, factors: [usize; 3]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let sp = spatial3(&shape, "max_pool")?;
        if factors.contains(&0) {
            return shape_err("max_pool factor of zero".into());
        }
        let (y, arg, dst) = kernels::max_pool(self.data(x), shape[0] * shape[1], sp, factors);
        let out = vec![shape[0], shape[1], dst[0], dst[1], dst[2]];
        Ok(self.push(Self::new_value(out, y), Op::MaxPool { x, arg }))
    }

    /// Trilinear resampling of the last three axes with edge clamping.
    pub fn resize(&mut self, x: Var, out: [usize; 3], ratio: [f64; 3]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let sp = spatial3(&shape, "resize")?;
        if out.contains(&0) || ratio.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return shape_err(format!("resize to {out:?} with ratio {ratio:?}"));
        }
        let taps = Box::new([axis_taps(out[0], sp[0], ratio[0]), axis_taps(out[1], sp[1], ratio[1]), axis_taps(out[2], sp[2], ratio[2])]);
        let y = kernels::resize(self.data(x), shape[0] * shape[1], sp, &taps);
        let oshape = vec![shape[0], shape[1], out[0], out[1], out[2]];
        Ok(self.push(Self::new_value(oshape, y), Op::Resize { x, taps }))
    }

    /// Max over all axes after the first two: `[N, C, ...]` → `[N, C]`.
    pub fn global_max(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 {
            return shape_err(format!("global_max expects spatial axes, got {shape:?}"));
        }
        let v: usize = shape[2..].iter().product();
        let mut y = Vec::with_capacity(shape[0] * shape[1]);
        let mut arg = Vec::with_capacity(shape[0] * shape[1]);
        for (c, chunk) in self.data(x).chunks_exact(v).enumerate() {
            let (mut bi, mut bv) = (0, f64::NEG_INFINITY);
            for (i, &val) in chunk.iter().enumerate() {
                if val > bv {
                    bv = val;
                    bi = i;
                }
            }
            y.push(bv);
            arg.push(c * v + bi);
        }
        Ok(self.push(Self::new_value(vec![shape[0], shape[1]], y), Op::GlobalMax { x, arg }))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return shape_err("concat of nothing".into());
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err(format!("concat axis {axis} for shape {base:?}"));
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(a, (p, q))| a != axis && p != q) {
                return shape_err(format!("concat: {s:?} vs {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let d = self.shape(v)[axis];
                out.extend_from_slice(&self.data(v)[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Self::new_value(shape, out), Op::Concat { xs: xs.to_vec(), axis }))
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return shape_err(format!("narrow {start}..{} on axis {axis} of {shape:?}", start + len));
        }
        let (outer, d, inner) = axis_split(&shape, axis);
        let src = self.data(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&src[(o * d + start) * inner..(o * d + start + len) * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        Ok(self.push(Self::new_value(oshape, out), Op::Narrow { x, axis, start }))
    }

    /// Gather rows of a `[rows, d]` table.
    pub fn rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return shape_err(format!("row lookup needs a 2D table, got {shape:?}"));
        }
        let d = shape[1];
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= shape[0] {
                return Err(TensorError::TargetOutOfRange { id, classes: shape[0] });
            }
            out.extend_from_slice(&self.data(table)[id * d..(id + 1) * d]);
        }
        Ok(self.push(Self::new_value(vec![ids.len(), d], out), Op::Rows { table, ids: ids.to_vec() }))
    }

    /// `[N, C]` → `[N, C, X, Y, Z]` by repetition.
    pub fn broadcast_spatial(&mut self, x: Var, spatial: [usize; 3]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 {
            return shape_err(format!("broadcast_spatial expects [N, C], got {shape:?}"));
        }
        let v: usize = spatial.iter().product();
        let mut out = Vec::with_capacity(shape[0] * shape[1] * v);
        for &val in self.data(x) {
            out.extend(std::iter::repeat_n(val, v));
        }
        let oshape = vec![shape[0], shape[1], spatial[0], spatial[1], spatial[2]];
        Ok(self.push(Self::new_value(oshape, out), Op::BroadcastSpatial { x }))
    }

    /// Per-voxel attention across the stream axis.
    pub fn stream_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        self.same_shape(q, k, "stream_attention")?;
        self.same_shape(q, v, "stream_attention")?;
        let shape = self.shape(q).to_vec();
        if shape.len() < 2 {
            return shape_err(format!("stream_attention expects [S, b, ...], got {shape:?}"));
        }
        let (s, b) = (shape[0], shape[1]);
        let vox: usize = shape[2..].iter().product();
        let (out, probs) = stream_attention(self.data(q), self.data(k), self.data(v), s, b, vox, 1.0 / (b as f64).sqrt());
        Ok(self.push(Self::new_value(shape, out), Op::StreamAttention { q, k, v, probs }))
    }

    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        self.same_shape(q, k, "causal_attention")?;
        self.same_shape(q, v, "causal_attention")?;
        let shape = self.shape(q).to_vec();
        if shape.len() != 2 || heads == 0 || !shape[1].is_multiple_of(heads) {
            return shape_err(format!("causal_attention: {shape:?} with {heads} heads"));
        }
        let (out, probs) = causal_attention(self.data(q), self.data(k), self.data(v), shape[0], shape[1], heads);
        Ok(self.push(Self::new_value(shape, out), Op::CausalAttention { q, k, v, heads, probs }))
    }

    /// Mean negative log-likelihood of `targets` under row softmax of
    /// `logits [P, classes]`; `None` rows are ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != targets.len() {
            return shape_err(format!("cross_entropy: logits {shape:?}, {} targets", targets.len()));
        }
        let classes = shape[1];
        if let Some(&id) = targets.iter().flatten().find(|&&t| t >= classes) {
            return Err(TensorError::TargetOutOfRange { id, classes });
        }
        let probs = kernels::softmax(self.data(logits), shape[0], classes, 1);
        let mut total = 0.0;
        let mut count = 0;
        for (p, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                // log-softmax directly to keep tiny losses accurate
                let row = &self.data(logits)[p * classes..(p + 1) * classes];
                let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
                total += lse - row[t];
                count += 1;
            }
        }
        let loss = if count > 0 { total / count as f64 } else { 0.0 };
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { logits, targets: targets.to_vec(), probs, count }))
    }

    /// `1 − (2Σpt + ε) / (Σp + Σt + ε)`.
    pub fn soft_dice(&mut self, pred: Var, target: &[f64]) -> Result<Var> {
        if self.value(pred).numel() != target.len() {
            return shape_err(format!("soft_dice: {} predictions, {} targets", self.value(pred).numel(), target.len()));
        }
        let p = self.data(pred);
        let inter: f64 = p.iter().zip(target).map(|(a, b)| a * b).sum();
        let denom = p.iter().sum::<f64>() + target.iter().sum::<f64>() + DICE_EPS;
        let loss = 1.0 - (2.0 * inter + DICE_EPS) / denom;
        Ok(self.push(Tensor::scalar(loss), Op::SoftDice { pred, target: target.to_vec() }))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rshape = self.shape(root);
        if rshape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarRoot(rshape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(vec![1.0]);
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    acc(v, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |d| d.iter_mut().zip(g).zip(bd).for_each(|((x, y), z)| *x += y * z));
                acc(*b, &mut |d| d.iter_mut().zip(g).zip(ad).for_each(|((x, y), z)| *x += y * z));
            }
            Op::Scale(x, c) => acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(a, y)| *a += y * c)),
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|a| *a += g[0])),
            Op::Silu(x) => {
                let xd = self.data(*x);
                acc(*x, &mut |d| {
                    for ((a, &y), &v) in d.iter_mut().zip(g).zip(xd) {
                        let s = sigmoid(v);
                        *a += y * s * (1.0 + v * (1.0 - s));
                    }
                })
            }
            Op::Sigmoid(x) => {
                let yd = node.value.data();
                acc(*x, &mut |d| d.iter_mut().zip(g).zip(yd).for_each(|((a, &gy), &y)| *a += gy * y * (1.0 - y)));
            }
            Op::Linear { x, w, b } => {
                let (xs, ws) = (self.shape(*x), self.shape(*w));
                let (n, din, dout) = (xs[0], xs[1], ws[0]);
                let (xd, wd) = (self.data(*x), self.data(*w));
                acc(*x, &mut |d| gemm(n, dout, din, g, (dout, 1), wd, (din, 1), 1.0, d));
                acc(*w, &mut |d| gemm(dout, n, din, g, (1, dout), xd, (din, 1), 1.0, d));
                if let Some(b) = b {
                    acc(*b, &mut |d| {
                        for row in g.chunks_exact(dout) {
                            d.iter_mut().zip(row).for_each(|(a, y)| *a += y);
                        }
                    });
                }
            }
            Op::Conv { x, w, b, depth } => {
                let xs = self.shape(*x);
                let geom = ConvGeom { batch: xs[0], cin: xs[1], cout: self.shape(*w)[0], spatial: [xs[2], xs[3], xs[4]], depth: *depth };
                let mut dx = wants(*x).then(|| vec![0.0; self.value(*x).numel()]);
                let mut dw = wants(*w).then(|| vec![0.0; self.value(*w).numel()]);
                let mut db = wants(*b).then(|| vec![0.0; self.value(*b).numel()]);
                conv_backward(self.data(*x), self.data(*w), g, &geom, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                for (v, buf) in [(*x, dx), (*w, dw), (*b, db)] {
                    if let Some(buf) = buf {
                        acc(v, &mut |d| d.iter_mut().zip(&buf).for_each(|(a, y)| *a += y));
                    }
                }
            }
            Op::ChannelLinear { x, w, b } => {
                let xs = self.shape(*x);
                let (n, cin, cout) = (xs[0], xs[1], self.shape(*w)[0]);
                let v: usize = xs[2..].iter().product();
                let (xd, wd) = (self.data(*x), self.data(*w));
                acc(*x, &mut |d| {
                    for i in 0..n {
                        gemm(cin, cout, v, wd, (1, cin), &g[i * cout * v..(i + 1) * cout * v], (v, 1), 1.0, &mut d[i * cin * v..(i + 1) * cin * v]);
                    }
                });
                acc(*w, &mut |d| {
                    for i in 0..n {
                        gemm(cout, v, cin, &g[i * cout * v..(i + 1) * cout * v], (v, 1), &xd[i * cin * v..(i + 1) * cin * v], (1, v), 1.0, d);
                    }
                });
                if let Some(b) = b {
                    acc(*b, &mut |d| {
                        for (c, chunk) in g.chunks_exact(v).enumerate() {
                            d[c % cout] += chunk.iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::Softmax { x, axis } => {
                let (o, dd, i) = axis_split(node.value.shape(), *axis);
                let y = node.value.data();
                acc(*x, &mut |d| kernels::softmax_backward(y, g, d, o, dd, i));
            }
            Op::GroupNorm { x, rstd } => {
                let s = node.value.shape();
                let block = GROUP_CHANNELS * s[2..].iter().product::<usize>();
                let y = node.value.data();
                acc(*x, &mut |d| kernels::block_norm_backward(y, rstd, g, d, block));
            }
            Op::RmsNorm { x, w, rinv } => {
                let dim = node.value.shape()[1];
                let (xd, wd) = (self.data(*x), self.data(*w));
                acc(*w, &mut |d| {
                    for ((xs, gs), &r) in xd.chunks_exact(dim).zip(g.chunks_exact(dim)).zip(rinv) {
                        for ((a, &xv), &gv) in d.iter_mut().zip(xs).zip(gs) {
                            *a += gv * xv * r;
                        }
                    }
                });
                acc(*x, &mut |d| {
                    for (((ds, xs), gs), &r) in d.chunks_exact_mut(dim).zip(xd.chunks_exact(dim)).zip(g.chunks_exact(dim)).zip(rinv) {
                        // y = x̂·w with x̂ = x·r
                        let m = xs.iter().zip(gs).zip(wd).map(|((xv, gv), wv)| gv * wv * xv * r).sum::<f64>() / dim as f64;
                        for (((a, &xv), &gv), &wv) in ds.iter_mut().zip(xs).zip(gs).zip(wd) {
                            *a += r * (gv * wv - xv * r * m);
                        }
                    }
                });
            }
            Op::MaxPool { x, arg } | Op::GlobalMax { x, arg } => {
                acc(*x, &mut |d| arg.iter().zip(g).for_each(|(&i, &y)| d[i] += y));
            }
            Op::Resize { x, taps } => {
                let s = self.shape(*x);
                let (ch, src) = (s[0] * s[1], [s[2], s[3], s[4]]);
                acc(*x, &mut |d| kernels::resize_backward(g, d, ch, src, taps));
            }
            Op::Concat { xs, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut off = 0;
                for &v in xs {
                    let dim = self.shape(v)[*axis];
                    acc(v, &mut |d| {
                        for o in 0..outer {
                            let src = &g[(o * total + off) * inner..(o * total + off + dim) * inner];
                            d[o * dim * inner..(o + 1) * dim * inner].iter_mut().zip(src).for_each(|(a, y)| *a += y);
                        }
                    });
                    off += dim;
                }
            }
            Op::Narrow { x, axis, start } => {
                let (outer, d_in, inner) = axis_split(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                acc(*x, &mut |d| {
                    for o in 0..outer {
                        let dst = &mut d[(o * d_in + start) * inner..(o * d_in + start + len) * inner];
                        dst.iter_mut().zip(&g[o * len * inner..(o + 1) * len * inner]).for_each(|(a, y)| *a += y);
                    }
                });
            }
            Op::Rows { table, ids } => {
                let dim = self.shape(*table)[1];
                acc(*table, &mut |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        d[id * dim..(id + 1) * dim].iter_mut().zip(&g[r * dim..(r + 1) * dim]).for_each(|(a, y)| *a += y);
                    }
                });
            }
            Op::BroadcastSpatial { x } => {
                let v: usize = node.value.shape()[2..].iter().product();
                acc(*x, &mut |d| d.iter_mut().zip(g.chunks_exact(v)).for_each(|(a, c)| *a += c.iter().sum::<f64>()));
            }
            Op::StreamAttention { q, k, v, probs } => {
                let s = node.value.shape();
                let dims = (s[0], s[1], s[2..].iter().product());
                let n = node.value.numel();
                let (mut dq, mut dk, mut dv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                let scale = 1.0 / (s[1] as f64).sqrt();
                stream_attention_backward(self.data(*q), self.data(*k), self.data(*v), probs, g, dims, scale, &mut dq, &mut dk, &mut dv);
                for (var, buf) in [(*q, dq), (*k, dk), (*v, dv)] {
                    acc(var, &mut |d| d.iter_mut().zip(&buf).for_each(|(a, y)| *a += y));
                }
            }
            Op::CausalAttention { q, k, v, heads, probs } => {
                let s = node.value.shape();
                let n = node.value.numel();
                let (mut dq, mut dk, mut dv) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                causal_attention_backward(self.data(*q), self.data(*k), self.data(*v), probs, g, (s[0], s[1], *heads), &mut dq, &mut dk, &mut dv);
                for (var, buf) in [(*q, dq), (*k, dk), (*v, dv)] {
                    acc(var, &mut |d| d.iter_mut().zip(&buf).for_each(|(a, y)| *a += y));
                }
            }
            Op::CrossEntropy { logits, targets, probs, count } => {
                if *count == 0 {
                    return;
                }
                let classes = self.shape(*logits)[1];
                let scale = g[0] / *count as f64;
                acc(*logits, &mut |d| {
                    for (p, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let row = &mut d[p * classes..(p + 1) * classes];
                        for (a, &pr) in row.iter_mut().zip(&probs[p * classes..(p + 1) * classes]) {
                            *a += scale * pr;
                        }
                        row[t] -= scale;
                    }
                });
            }
            Op::SoftDice { pred, target } => {
                let p = self.data(*pred);
                let inter = 2.0 * p.iter().zip(target).map(|(a, b)| a * b).sum::<f64>() + DICE_EPS;
                let denom = p.iter().sum::<f64>() + target.iter().sum::<f64>() + DICE_EPS;
                acc(*pred, &mut |d| {
                    for (a, &t) in d.iter_mut().zip(target) {
                        *a -= g[0] * (2.0 * t * denom - inter) / (denom * denom);
                    }
                });
            }
        }
    }
}
