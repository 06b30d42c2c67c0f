//! Configurable 3D U-Net assembled from [`crate::diffgrid`] operations.
//!
//! Layout for `depth = L`, `base = B`:
//!
//! ```text
//! down.k   (k = 0..L)   conv-bn-act, conv-bn-act, dropout, maxpool   channels B·2^k
//! bottom                conv-bn-act, conv-bn-act, dropout            channels B·2^L
//! up.k     (k = L-1..0) upconv, concat skip k, conv-bn-act ×2, dropout  channels B·2^k
//! head                  1×1×1 conv to S channels, sigmoid
//! ```
//!
//! Every output channel is an independent per-structure probability.

use std::fmt;
use std::str::FromStr;

use crate::diffgrid::{Grid, Mode, RunningStats, Tape, Var};
use crate::error::{ensure, Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" | "rectifier" => Ok(Activation::Relu),
            other => Err(Error::parse(
                "activation",
                format!("unknown activation {other:?}"),
            )),
        }
    }
}

/// Largest accepted number of pooling levels.
pub const MAX_DEPTH: usize = 8;
/// Largest accepted channel count at any level.
pub const MAX_CHANNELS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub depth: usize,
    pub dropout_rate: f32,
    pub hidden_activation: Activation,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            out_channels: 1,
            base_channels: 32,
            depth: 4,
            dropout_rate: 0.2,
            hidden_activation: Activation::Sigmoid,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.in_channels >= 1, "in_channels must be at least 1");
        ensure!(self.out_channels >= 1, "out_channels must be at least 1");
        ensure!(self.base_channels >= 1, "base_channels must be at least 1");
        ensure!(self.depth >= 1, "depth must be at least 1");
        ensure!(
            self.depth <= MAX_DEPTH,
            "depth must be at most {}",
            MAX_DEPTH
        );
        ensure!(
            self.in_channels <= MAX_CHANNELS
                && self.out_channels <= MAX_CHANNELS
                && self
                    .base_channels
                    .checked_shl(self.depth as u32)
                    .is_some_and(|c| c <= MAX_CHANNELS),
            "channel counts must stay within {}",
            MAX_CHANNELS
        );
        ensure!(
            (0.0..1.0).contains(&self.dropout_rate),
            "dropout_rate must lie in [0, 1), got {}",
            self.dropout_rate
        );
        Ok(())
    }

    /// Channels at encoder level `k` (level `depth` is the bottleneck).
    pub fn level_channels(&self, k: usize) -> usize {
        self.base_channels << k
    }

    /// Spatial extents must be divisible by this factor.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }

    /// Canonical text form, used for checkpoint digests.
    pub fn canonical(&self) -> String {
        format!(
            "in={};out={};base={};depth={};dropout={};act={}",
            self.in_channels,
            self.out_channels,
            self.base_channels,
            self.depth,
            self.dropout_rate,
            self.hidden_activation
        )
    }

    /// Ordered parameter names and shapes that [`UNetModel::build`] produces.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let block = |prefix: &str, cin: usize, cout: usize, out: &mut Vec<(String, Vec<usize>)>| {
            for (i, ci) in [(1, cin), (2, cout)] {
                out.push((format!("{prefix}.conv{i}.weight"), vec![cout, ci, 3, 3, 3]));
                out.push((format!("{prefix}.conv{i}.bias"), vec![cout]));
                out.push((format!("{prefix}.bn{i}.gamma"), vec![cout]));
                out.push((format!("{prefix}.bn{i}.beta"), vec![cout]));
            }
        };
        let mut cin = self.in_channels;
        for k in 0..self.depth {
            let c = self.level_channels(k);
            block(&format!("down.{k}"), cin, c, &mut out);
            cin = c;
        }
        block("bottom", cin, self.level_channels(self.depth), &mut out);
        for k in (0..self.depth).rev() {
            let (hi, c) = (self.level_channels(k + 1), self.level_channels(k));
            out.push((format!("up.{k}.upconv.weight"), vec![hi, c, 2, 2, 2]));
            out.push((format!("up.{k}.upconv.bias"), vec![c]));
            block(&format!("up.{k}"), 2 * c, c, &mut out);
        }
        out.push((
            "head.weight".into(),
            vec![self.out_channels, self.base_channels, 1, 1, 1],
        ));
        out.push(("head.bias".into(), vec![self.out_channels]));
        out
    }

    /// Names and channel counts of every batch-norm layer, in build order.
    pub fn batchnorm_layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for k in 0..self.depth {
            for i in 1..=2 {
                out.push((format!("down.{k}.bn{i}"), self.level_channels(k)));
            }
        }
        for i in 1..=2 {
            out.push((format!("bottom.bn{i}"), self.level_channels(self.depth)));
        }
        for k in (0..self.depth).rev() {
            for i in 1..=2 {
                out.push((format!("up.{k}.bn{i}"), self.level_channels(k)));
            }
        }
        out
    }
}

/// Total number of trainable scalars for `config`.
pub fn parameter_count(config: &UNetConfig) -> usize {
    // two conv-bn units per block: 27·cin·cout + cout + 2·cout, then 27·cout² + 3·cout
    let block = |cin: usize, cout: usize| 27 * cin * cout + 27 * cout * cout + 6 * cout;
    let mut total = 0;
    let mut cin = config.in_channels;
    for k in 0..=config.depth {
        let c = config.level_channels(k);
        total += block(cin, c);
        cin = c;
    }
    for k in 0..config.depth {
        let (hi, c) = (config.level_channels(k + 1), config.level_channels(k));
        total += 8 * hi * c + c + block(2 * c, c);
    }
    total + config.out_channels * config.base_channels + config.out_channels
}

/// Trainable parameters and batch-norm state of a built U-Net.
#[derive(Debug, Clone, PartialEq)]
pub struct UNetModel {
    config: UNetConfig,
    names: Vec<String>,
    params: Vec<Grid>,
    bn_names: Vec<String>,
    bn_stats: Vec<RunningStats>,
}

/// Result of recording a forward pass on a tape.
#[derive(Debug)]
pub struct Forward {
    pub output: Var,
    /// Tape handles of the parameters, in canonical order.
    pub params: Vec<Var>,
}

impl UNetModel {
    /// Build with weights drawn uniformly from `±1/√fan_in` and zero biases;
    /// batch-norm scales start at 1 and shifts at 0.
    pub fn build(config: UNetConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape) in config.parameter_layout() {
            let grid = if name.ends_with(".gamma") {
                Grid::full(&shape, 1.0)
            } else if name.ends_with(".weight") {
                let fan_in = if name.ends_with("upconv.weight") {
                    shape[0]
                } else {
                    shape[1..].iter().product()
                };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n = shape.iter().product();
                let data = (0..n)
                    .map(|_| rng.uniform_range(-bound, bound) as f32)
                    .collect();
                Grid::from_vec(&shape, data)?
            } else {
                Grid::zeros(&shape)
            };
            names.push(name);
            params.push(grid);
        }
        let (bn_names, bn_stats) = config
            .batchnorm_layout()
            .into_iter()
            .map(|(n, c)| (n, RunningStats::new(c)))
            .unzip();
        Ok(Self {
            config,
            names,
            params,
            bn_names,
            bn_stats,
        })
    }

    /// Assemble a model from externally supplied state (checkpoint loading).
    pub fn from_parts(
        config: UNetConfig,
        params: Vec<(String, Grid)>,
        bn: Vec<(String, RunningStats)>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = config.parameter_layout();
        if layout.len() != params.len() {
            return Err(Error::NameSetMismatch(format!(
                "config expects {} parameters, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (pname, grid)) in layout.iter().zip(&params) {
            if name != pname || shape.as_slice() != grid.shape() {
                return Err(Error::NameSetMismatch(format!(
                    "expected {name} {shape:?}, got {pname} {:?}",
                    grid.shape()
                )));
            }
        }
        let bl = config.batchnorm_layout();
        if bl.len() != bn.len()
            || bl.iter().zip(&bn).any(|((n, c), (bn_name, s))| {
                n != bn_name || s.mean.len() != *c || s.var.len() != *c
            })
        {
            return Err(Error::NameSetMismatch(
                "batch-norm layout differs from config".into(),
            ));
        }
        let (names, params) = params.into_iter().unzip();
        let (bn_names, bn_stats) = bn.into_iter().unzip();
        Ok(Self {
            config,
            names,
            params,
            bn_names,
            bn_stats,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Grid] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Grid] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Grid> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    pub fn batchnorm(&self) -> impl Iterator<Item = (&str, &RunningStats)> {
        self.bn_names.iter().map(String::as_str).zip(&self.bn_stats)
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Grid::len).sum()
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        ensure!(
            shape.len() == 5,
            "U-Net input must be N×C×D×H×W, got {:?}",
            shape
        );
        ensure!(
            shape[1] == self.config.in_channels,
            "U-Net expects {} input channels, got {}",
            self.config.in_channels,
            shape[1]
        );
        let m = self.config.spatial_multiple();
        for (axis, &ext) in ["D", "H", "W"].iter().zip(&shape[2..]) {
            ensure!(
                ext > 0 && ext % m == 0,
                "spatial axis {} has extent {}, not divisible by 2^depth = {}",
                axis,
                ext,
                m
            );
        }
        Ok(())
    }

    /// Record a forward pass. Train mode updates the batch-norm running
    /// statistics and draws dropout masks from `rng`.
    pub fn forward(
        &mut self,
        tape: &mut Tape,
        input: Var,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<Forward> {
        let mut stats = std::mem::take(&mut self.bn_stats);
        let res = self.forward_with(tape, input, mode, rng, &mut stats);
        self.bn_stats = stats;
        res
    }

    /// Eval-mode probabilities for `input`; the model is not modified.
    pub fn predict(&self, input: &Grid) -> Result<Grid> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let mut stats = self.bn_stats.clone();
        // eval mode never draws from the stream
        let mut rng = RngState::new(0);
        let fwd = self.forward_with(&mut tape, x, Mode::Eval, &mut rng, &mut stats)?;
        Ok(tape.take_value(fwd.output))
    }

    fn forward_with(
        &self,
        tape: &mut Tape,
        input: Var,
        mode: Mode,
        rng: &mut RngState,
        stats: &mut [RunningStats],
    ) -> Result<Forward> {
        self.check_input(tape.value(input).shape())?;
        let params: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let mut layer = Layers {
            tape,
            params: &params,
            next_param: 0,
            stats,
            next_bn: 0,
            mode,
            rng,
            act: self.config.hidden_activation,
            dropout: self.config.dropout_rate,
        };
        let mut skips = Vec::with_capacity(self.config.depth);
        let mut x = input;
        for _ in 0..self.config.depth {
            let y = layer.block(x)?;
            skips.push(y);
            x = layer.tape.maxpool3d(y)?;
        }
        x = layer.block(x)?;
        for skip in skips.into_iter().rev() {
            let (w, b) = (layer.param(), layer.param());
            let up = layer.tape.transposed_conv3d(x, w, b)?;
            let cat = layer.tape.concat_channels(skip, up)?;
            x = layer.block(cat)?;
        }
        let (w, b) = (layer.param(), layer.param());
        let logits = layer.tape.conv3d(x, w, b)?;
        let output = layer.tape.sigmoid_open(logits);
        debug_assert_eq!(layer.next_param, params.len());
        Ok(Forward { output, params })
    }
}

struct Layers<'a> {
    tape: &'a mut Tape,
    params: &'a [Var],
    next_param: usize,
    stats: &'a mut [RunningStats],
    next_bn: usize,
    mode: Mode,
    rng: &'a mut RngState,
    act: Activation,
    dropout: f32,
}

impl Layers<'_> {
    fn param(&mut self) -> Var {
        let v = self.params[self.next_param];
        self.next_param += 1;
        v
    }

    fn conv_bn_act(&mut self, x: Var) -> Result<Var> {
        let (w, b, g, bt) = (self.param(), self.param(), self.param(), self.param());
        let y = self.tape.conv3d(x, w, b)?;
        let stats = &mut self.stats[self.next_bn];
        self.next_bn += 1;
        let y = self.tape.batchnorm3d(y, g, bt, stats, self.mode)?;
        Ok(match self.act {
            Activation::Sigmoid => self.tape.sigmoid(y),
            Activation::Relu => self.tape.relu(y),
        })
    }

    fn block(&mut self, x: Var) -> Result<Var> {
        let y = self.conv_bn_act(x)?;
        let y = self.conv_bn_act(y)?;
        self.tape
            .spatial_dropout3d(y, self.dropout, self.rng, self.mode)
    }
}
