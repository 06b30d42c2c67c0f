//! Operation tape for reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value and whatever it needs
//! for the backward sweep. [`Tape::backward`] walks the nodes in reverse
//! insertion order, which is a valid topological order because an op can
//! only reference nodes recorded before it.

use super::grid::Grid;
use super::kernels::{self, ConvShape};
use crate::error::{ensure, Result};
use crate::rng::RngState;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running statistics owned by a batch-norm layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

enum Op {
    Leaf,
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        shape: ConvShape,
    },
    UpConv {
        input: Var,
        weight: Var,
        bias: Var,
        shape: ConvShape,
    },
    MaxPool {
        input: Var,
        argmax: Vec<u32>,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        batch_stats: bool,
    },
    Sigmoid(Var),
    Relu(Var),
    /// Per-(sample, channel) multiplier; zero for dropped channels.
    ChannelScale {
        input: Var,
        scale: Vec<f32>,
    },
    Concat(Var, Var),
    SliceChannels {
        input: Var,
        start: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    Dice {
        pred: Var,
        target: Grid,
        /// Per (sample, channel): Σ p·g and Σp² + Σg² + eps.
        inter: Vec<f64>,
        denom: Vec<f64>,
    },
}

struct Node {
    value: Grid,
    grad: Option<Grid>,
    requires_grad: bool,
    op: Op,
}

/// Records differentiable operations and replays them backwards.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf; receives a gradient on [`Tape::backward`].
    pub fn leaf(&mut self, value: Grid) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Non-trainable input; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Grid) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Grid {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward root with respect to `v`, if any flowed.
    pub fn grad(&self, v: Var) -> Option<&Grid> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_value(&mut self, v: Var) -> Grid {
        std::mem::replace(&mut self.nodes[v.0].value, Grid::zeros(&[0]))
    }

    fn push(&mut self, value: Grid, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Same-padded stride-1 convolution; `weight` is `Cout×Cin×k×k×k` with odd `k`.
    pub fn conv3d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, cin, d, h, w] = self.value(input).dims5()?;
        let ws = self.value(weight).shape().to_vec();
        ensure!(
            ws.len() == 5 && ws[2] == ws[3] && ws[3] == ws[4] && ws[2] % 2 == 1,
            "conv3d weight must be Cout×Cin×k×k×k with odd k, got {:?}",
            ws
        );
        ensure!(
            ws[1] == cin,
            "conv3d input has {} channels but weight expects {}",
            cin,
            ws[1]
        );
        ensure!(
            self.value(bias).shape() == [ws[0]],
            "conv3d bias shape {:?} does not match {} output channels",
            self.value(bias).shape(),
            ws[0]
        );
        ensure!(
            d > 0 && h > 0 && w > 0,
            "conv3d spatial extents must be positive"
        );
        let shape = ConvShape {
            n,
            cin,
            cout: ws[0],
            d,
            h,
            w,
            k: ws[2],
        };
        let out = kernels::conv3d_forward(
            &shape,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Grid::from_vec(&[n, shape.cout, d, h, w], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            value,
            rg,
            Op::Conv {
                input,
                weight,
                bias,
                shape,
            },
        ))
    }

    /// Kernel-2 stride-2 transposed convolution; `weight` is `Cin×Cout×2×2×2`.
    pub fn transposed_conv3d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let [n, cin, d, h, w] = self.value(input).dims5()?;
        ensure!(
            n > 0 && d > 0 && h > 0 && w > 0,
            "transposed_conv3d extents must be positive, got {:?}",
            self.value(input).shape()
        );
        let ws = self.value(weight).shape().to_vec();
        ensure!(
            ws.len() == 5 && ws[0] == cin && ws[2..] == [2, 2, 2],
            "transposed_conv3d weight must be {}×Cout×2×2×2, got {:?}",
            cin,
            ws
        );
        ensure!(
            self.value(bias).shape() == [ws[1]],
            "transposed_conv3d bias shape {:?} does not match {} output channels",
            self.value(bias).shape(),
            ws[1]
        );
        let shape = ConvShape {
            n,
            cin,
            cout: ws[1],
            d,
            h,
            w,
            k: 2,
        };
        let out = kernels::upconv_forward(
            &shape,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Grid::from_vec(&[n, shape.cout, 2 * d, 2 * h, 2 * w], out)?;
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        Ok(self.push(
            value,
            rg,
            Op::UpConv {
                input,
                weight,
                bias,
                shape,
            },
        ))
    }

    /// 2×2×2 max pooling with stride 2.
    pub fn maxpool3d(&mut self, input: Var) -> Result<Var> {
        let [n, c, d, h, w] = self.value(input).dims5()?;
        for (axis, ext) in [("D", d), ("H", h), ("W", w)] {
            ensure!(
                ext > 0 && ext % 2 == 0,
                "maxpool3d needs even spatial extents, axis {} has {}",
                axis,
                ext
            );
        }
        let (out, argmax) = kernels::maxpool_forward(self.value(input).data(), n * c, d, h, w);
        let value = Grid::from_vec(&[n, c, d / 2, h / 2, w / 2], out)?;
        let rg = self.rg(input);
        Ok(self.push(value, rg, Op::MaxPool { input, argmax }))
    }

    /// Per-channel batch normalization. Train mode normalizes with the biased
    /// batch variance over N,D,H,W and folds the batch mean and unbiased
    /// variance into `stats` with momentum [`BN_MOMENTUM`]. Eval mode
    /// normalizes with `stats` and leaves them untouched.
    pub fn batchnorm3d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        let [n, c, d, h, w] = self.value(input).dims5()?;
        ensure!(
            self.value(gamma).shape() == [c] && self.value(beta).shape() == [c],
            "batchnorm3d affine parameters must have {} elements",
            c
        );
        ensure!(
            stats.mean.len() == c && stats.var.len() == c,
            "batchnorm3d running stats sized {} for {} channels",
            stats.mean.len(),
            c
        );
        let vox = d * h * w;
        let count = n * vox;
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let bta = self.value(beta).data();
        let mut xhat = vec![0.0f32; x.len()];
        let mut out = vec![0.0f32; x.len()];
        let mut inv_std = vec![0.0f32; c];
        for ch in 0..c {
            let blocks = (0..n).map(|b| (b * c + ch) * vox);
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = 0.0f64;
                    for base in blocks.clone() {
                        sum += x[base..base + vox].iter().map(|&v| v as f64).sum::<f64>();
                    }
                    let mean = sum / count as f64;
                    let mut ss = 0.0f64;
                    for base in blocks.clone() {
                        ss += x[base..base + vox]
                            .iter()
                            .map(|&v| (v as f64 - mean).powi(2))
                            .sum::<f64>();
                    }
                    let var = ss / count as f64;
                    let unbiased = if count > 1 {
                        ss / (count - 1) as f64
                    } else {
                        var
                    };
                    stats.mean[ch] =
                        ((1.0 - BN_MOMENTUM) * stats.mean[ch] as f64 + BN_MOMENTUM * mean) as f32;
                    stats.var[ch] = ((1.0 - BN_MOMENTUM) * stats.var[ch] as f64
                        + BN_MOMENTUM * unbiased) as f32;
                    (mean, var)
                }
                Mode::Eval => (stats.mean[ch] as f64, stats.var[ch] as f64),
            };
            let is = 1.0 / (var + BN_EPS).sqrt();
            inv_std[ch] = is as f32;
            for base in blocks {
                for i in base..base + vox {
                    let xh = ((x[i] as f64 - mean) * is) as f32;
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + bta[ch];
                }
            }
        }
        let value = Grid::from_vec(&[n, c, d, h, w], out)?;
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            value,
            rg,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
        ))
    }

    /// Elementwise logistic function `1 / (1 + e^-x)`.
    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.sigmoid_with(input, sigmoid)
    }

    /// Logistic function clamped to `[f32::MIN_POSITIVE, 1 - 2^-24]`, so
    /// saturated inputs still land strictly inside `(0, 1)`. Used for
    /// probability outputs.
    pub fn sigmoid_open(&mut self, input: Var) -> Var {
        self.sigmoid_with(input, sigmoid_open)
    }

    fn sigmoid_with(&mut self, input: Var, f: fn(f32) -> f32) -> Var {
        let src = self.value(input);
        let data = src.data().iter().map(|&x| f(x)).collect();
        let value = Grid::from_vec(src.shape(), data).expect("same shape");
        let rg = self.rg(input);
        self.push(value, rg, Op::Sigmoid(input))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let src = self.value(input);
        let data = src.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Grid::from_vec(src.shape(), data).expect("same shape");
        let rg = self.rg(input);
        self.push(value, rg, Op::Relu(input))
    }

    /// Channel-wise dropout. In train mode each (sample, channel) map is
    /// zeroed with probability `rate` and survivors are scaled by
    /// `1 / (1 - rate)`. Eval mode, and `rate == 0`, pass the input through
    /// without touching `rng`.
    pub fn spatial_dropout3d(
        &mut self,
        input: Var,
        rate: f32,
        rng: &mut RngState,
        mode: Mode,
    ) -> Result<Var> {
        ensure!(
            (0.0..1.0).contains(&rate),
            "dropout rate must lie in [0, 1), got {}",
            rate
        );
        let [n, c, d, h, w] = self.value(input).dims5()?;
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(input);
        }
        let keep = 1.0 / (1.0 - rate);
        let scale: Vec<f32> = (0..n * c)
            .map(|_| {
                if rng.uniform() < rate as f64 {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let vox = d * h * w;
        let mut data = self.value(input).data().to_vec();
        for (block, &s) in data.chunks_mut(vox).zip(&scale) {
            block.iter_mut().for_each(|v| *v *= s);
        }
        let value = Grid::from_vec(&[n, c, d, h, w], data)?;
        let rg = self.rg(input);
        Ok(self.push(value, rg, Op::ChannelScale { input, scale }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, da, ha, wa] = self.value(a).dims5()?;
        let [nb, cb, db, hb, wb] = self.value(b).dims5()?;
        ensure!(
            (na, da, ha, wa) == (nb, db, hb, wb),
            "concat_channels needs equal N,D,H,W: {:?} vs {:?}",
            self.value(a).shape(),
            self.value(b).shape()
        );
        let vox = da * ha * wa;
        let (ga, gb) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ga.len() + gb.len());
        for s in 0..na {
            data.extend_from_slice(&ga[s * ca * vox..(s + 1) * ca * vox]);
            data.extend_from_slice(&gb[s * cb * vox..(s + 1) * cb * vox]);
        }
        let value = Grid::from_vec(&[na, ca + cb, da, ha, wa], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::Concat(a, b)))
    }

    pub fn slice_channels(&mut self, input: Var, start: usize, count: usize) -> Result<Var> {
        let value = self.value(input).slice_channels(start, count)?;
        let rg = self.rg(input);
        Ok(self.push(value, rg, Op::SliceChannels { input, start }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_values(a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_values(a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, rg, Op::Mul(a, b)))
    }

    fn zip_values(&self, a: Var, b: Var, f: impl Fn(f32, f32) -> f32) -> Result<Grid> {
        let (ga, gb) = (self.value(a), self.value(b));
        ensure!(
            ga.shape() == gb.shape(),
            "elementwise shapes differ: {:?} vs {:?}",
            ga.shape(),
            gb.shape()
        );
        let data = ga
            .data()
            .iter()
            .zip(gb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Grid::from_vec(ga.shape(), data)
    }

    /// Sum of all elements as a one-element grid (64-bit accumulation).
    pub fn sum(&mut self, input: Var) -> Var {
        let s: f64 = self.value(input).data().iter().map(|&v| v as f64).sum();
        let rg = self.rg(input);
        self.push(Grid::scalar(s as f32), rg, Op::Sum(input))
    }

    /// Soft Dice loss averaged over every (sample, channel) pair:
    /// `1 - 2·Σ p·g / (Σ p² + Σ g² + eps)`.
    ///
    /// `target` must hold only 0 and 1 and match `pred`'s N×C×… shape.
    pub fn dice_loss(&mut self, pred: Var, target: &Grid, eps: f64) -> Result<Var> {
        let p = self.value(pred);
        ensure!(
            p.shape() == target.shape(),
            "dice_loss shapes differ: prediction {:?}, target {:?}",
            p.shape(),
            target.shape()
        );
        ensure!(p.shape().len() >= 2, "dice_loss needs at least N×C axes");
        ensure!(
            target.data().iter().all(|&g| g == 0.0 || g == 1.0),
            "dice_loss target must be binary"
        );
        ensure!(eps >= 0.0, "dice_loss eps must be non-negative");
        let groups = p.shape()[0] * p.shape()[1];
        let vox = p.len() / groups.max(1);
        let mut inter = Vec::with_capacity(groups);
        let mut denom = Vec::with_capacity(groups);
        let mut total = 0.0f64;
        for gi in 0..groups {
            let ps = &p.data()[gi * vox..(gi + 1) * vox];
            let gs = &target.data()[gi * vox..(gi + 1) * vox];
            let (mut i, mut pp, mut gg) = (0.0f64, 0.0f64, 0.0f64);
            for (&a, &b) in ps.iter().zip(gs) {
                let (a, b) = (a as f64, b as f64);
                i += a * b;
                pp += a * a;
                gg += b * b;
            }
            let den = pp + gg + eps;
            total += 1.0 - 2.0 * i / den;
            inter.push(i);
            denom.push(den);
        }
        let loss = total / groups as f64;
        let rg = self.rg(pred);
        Ok(self.push(
            Grid::scalar(loss as f32),
            rg,
            Op::Dice {
                pred,
                target: target.clone(),
                inter,
                denom,
            },
        ))
    }

    /// Propagate d(root)/d(node) to every node that requires a gradient.
    /// A tape may be swept once; record a fresh tape for the next pass.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        ensure!(!self.backward_done, "backward already ran on this tape");
        ensure!(
            self.value(root).len() == 1,
            "backward root must be a scalar, got shape {:?}",
            self.value(root).shape()
        );
        self.backward_done = true;
        if !self.rg(root) {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(Grid::full(self.value(root).shape(), 1.0));
        for idx in (0..=root.0).rev() {
            let Some(grad) = self.nodes[idx].grad.take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let contributions = self.node_backward(idx, &grad)?;
            self.nodes[idx].grad = Some(grad);
            for (target, g) in contributions {
                if !self.rg(target) {
                    continue;
                }
                match &mut self.nodes[target.0].grad {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn node_backward(&self, idx: usize, grad: &Grid) -> Result<Vec<(Var, Grid)>> {
        let node = &self.nodes[idx];
        let gd = grad.data();
        let like = |v: Var, data: Vec<f32>| Grid::from_vec(self.value(v).shape(), data);
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                input,
                weight,
                bias,
                shape,
            } => {
                let g = kernels::conv3d_backward(
                    shape,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    gd,
                    self.rg(*input),
                );
                if let Some(din) = g.input {
                    out.push((*input, like(*input, din)?));
                }
                out.push((*weight, like(*weight, g.weight)?));
                out.push((*bias, like(*bias, g.bias)?));
            }
            Op::UpConv {
                input,
                weight,
                bias,
                shape,
            } => {
                let g = kernels::upconv_backward(
                    shape,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    gd,
                    self.rg(*input),
                );
                if let Some(din) = g.input {
                    out.push((*input, like(*input, din)?));
                }
                out.push((*weight, like(*weight, g.weight)?));
                out.push((*bias, like(*bias, g.bias)?));
            }
            Op::MaxPool { input, argmax } => {
                let mut din = vec![0.0f32; self.value(*input).len()];
                for (&a, &g) in argmax.iter().zip(gd) {
                    din[a as usize] += g;
                }
                out.push((*input, like(*input, din)?));
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let [n, c, d, h, w] = self.value(*input).dims5()?;
                let vox = d * h * w;
                let count = (n * vox) as f64;
                let gam = self.value(*gamma).data();
                let mut din = vec![0.0f32; xhat.len()];
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                for ch in 0..c {
                    let bases: Vec<usize> = (0..n).map(|b| (b * c + ch) * vox).collect();
                    let (mut sdy, mut sdyx) = (0.0f64, 0.0f64);
                    for &base in &bases {
                        for i in base..base + vox {
                            sdy += gd[i] as f64;
                            sdyx += gd[i] as f64 * xhat[i] as f64;
                        }
                    }
                    dgamma[ch] = sdyx as f32;
                    dbeta[ch] = sdy as f32;
                    let g = gam[ch] as f64;
                    let is = inv_std[ch] as f64;
                    for &base in &bases {
                        for i in base..base + vox {
                            din[i] = if *batch_stats {
                                (g * is / count
                                    * (count * gd[i] as f64 - sdy - xhat[i] as f64 * sdyx))
                                    as f32
                            } else {
                                (g * is * gd[i] as f64) as f32
                            };
                        }
                    }
                }
                out.push((*input, like(*input, din)?));
                out.push((*gamma, like(*gamma, dgamma)?));
                out.push((*beta, like(*beta, dbeta)?));
            }
            Op::Sigmoid(input) => {
                let y = node.value.data();
                let din = y.iter().zip(gd).map(|(&y, &g)| g * y * (1.0 - y)).collect();
                out.push((*input, like(*input, din)?));
            }
            Op::Relu(input) => {
                let x = self.value(*input).data();
                let din = x
                    .iter()
                    .zip(gd)
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                out.push((*input, like(*input, din)?));
            }
            Op::ChannelScale { input, scale } => {
                let vox = gd.len() / scale.len();
                let mut din = gd.to_vec();
                for (block, &s) in din.chunks_mut(vox).zip(scale) {
                    block.iter_mut().for_each(|v| *v *= s);
                }
                out.push((*input, like(*input, din)?));
            }
            Op::Concat(a, b) => {
                let [n, ca, d, h, w] = self.value(*a).dims5()?;
                let cb = self.value(*b).dims5()?[1];
                let vox = d * h * w;
                let mut da = Vec::with_capacity(n * ca * vox);
                let mut db = Vec::with_capacity(n * cb * vox);
                for s in 0..n {
                    let base = s * (ca + cb) * vox;
                    da.extend_from_slice(&gd[base..base + ca * vox]);
                    db.extend_from_slice(&gd[base + ca * vox..base + (ca + cb) * vox]);
                }
                out.push((*a, like(*a, da)?));
                out.push((*b, like(*b, db)?));
            }
            Op::SliceChannels { input, start } => {
                let [n, c, d, h, w] = self.value(*input).dims5()?;
                let count = grad.shape()[1];
                let vox = d * h * w;
                let mut din = vec![0.0f32; n * c * vox];
                for s in 0..n {
                    let dst = (s * c + start) * vox;
                    let src = s * count * vox;
                    din[dst..dst + count * vox].copy_from_slice(&gd[src..src + count * vox]);
                }
                out.push((*input, like(*input, din)?));
            }
            Op::Add(a, b) => {
                out.push((*a, grad.clone()));
                out.push((*b, grad.clone()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let da = gd.iter().zip(vb).map(|(&g, &y)| g * y).collect();
                let db = gd.iter().zip(va).map(|(&g, &x)| g * x).collect();
                out.push((*a, like(*a, da)?));
                out.push((*b, like(*b, db)?));
            }
            Op::Sum(input) => {
                let n = self.value(*input).len();
                out.push((*input, like(*input, vec![gd[0]; n])?));
            }
            Op::Dice {
                pred,
                target,
                inter,
                denom,
            } => {
                let p = self.value(*pred).data();
                let groups = inter.len();
                let vox = p.len() / groups;
                let scale = gd[0] as f64 / groups as f64;
                let mut din = vec![0.0f32; p.len()];
                for gi in 0..groups {
                    let (i, den) = (inter[gi], denom[gi]);
                    if den == 0.0 {
                        continue;
                    }
                    let a = -2.0 / den;
                    let b = 4.0 * i / (den * den);
                    let range = gi * vox..(gi + 1) * vox;
                    for ((d, &pv), &gv) in din[range.clone()]
                        .iter_mut()
                        .zip(&p[range.clone()])
                        .zip(&target.data()[range])
                    {
                        *d = (scale * (a * gv as f64 + b * pv as f64)) as f32;
                    }
                }
                out.push((*pred, like(*pred, din)?));
            }
        }
        Ok(out)
    }
}

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn sigmoid_open(x: f32) -> f32 {
    const UPPER: f32 = 1.0 - f32::EPSILON / 2.0;
    sigmoid(x).clamp(f32::MIN_POSITIVE, UPPER)
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("backward_done", &self.backward_done)
            .finish()
    }
}
