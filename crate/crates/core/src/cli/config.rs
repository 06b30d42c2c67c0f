//! Experiment configuration: `key = value` lines, `#` comments.
//!
//! Every key is optional; defaults are listed by [`ExperimentConfig::to_text`]
//! on `ExperimentConfig::default()`. Unknown or repeated keys are errors.
//! Lists take commas or spaces. Relative paths resolve against the config
//! file's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{ensure, Error, Result};
use crate::kv::{self, fmt_f64};
use crate::phantom::PhantomSpec;
use crate::pipeline::{MaskSource, PreprocessConfig};
use crate::training::{Scenario, TrainConfig};
use crate::unet::{Activation, UNetConfig};

const WHAT: &str = "config";

#[derive(Debug, Clone, PartialEq)]
pub enum MaskMethod {
    Threshold,
    Labels,
    Provided,
}

impl MaskMethod {
    fn name(&self) -> &'static str {
        match self {
            MaskMethod::Threshold => "threshold",
            MaskMethod::Labels => "labels",
            MaskMethod::Provided => "provided",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(MaskMethod::Threshold),
            "labels" => Ok(MaskMethod::Labels),
            "provided" => Ok(MaskMethod::Provided),
            _ => Err(Error::parse(
                WHAT,
                format!("mask method {s:?} (threshold, labels, provided)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Processed manifest to train on; when unset, `sweep` generates and
    /// preprocesses a phantom dataset under `output`.
    pub manifest: Option<PathBuf>,
    /// Preset name or spec file path.
    pub phantom: String,
    pub n_val: usize,
    pub n_test: usize,
    pub data_seed: u64,
    pub spacing: f64,
    pub crop_size: usize,
    pub mask: MaskMethod,
    pub threshold_hu: f32,
    pub closing_radius: usize,
    pub dilation_radius: usize,

    /// Single-run settings used by `train`.
    pub scenario: Scenario,
    pub seed: u64,
    /// 0 = every training subject.
    pub n_train: usize,

    /// Sweep matrix.
    pub scenarios: Vec<Scenario>,
    pub train_sizes: Vec<usize>,
    pub seeds: Vec<u64>,

    pub output: PathBuf,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub min_steps: usize,
    pub val_interval: usize,
    pub loss_eps: f64,
    pub depth: usize,
    pub base_channels: usize,
    pub dropout: f32,
    pub activation: Activation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            phantom: "brain".into(),
            n_val: 4,
            n_test: 8,
            data_seed: 0,
            spacing: 1.5,
            crop_size: 128,
            mask: MaskMethod::Threshold,
            threshold_hu: -300.0,
            closing_radius: 2,
            dilation_radius: 2,
            scenario: Scenario::CtPlusMask,
            seed: 0,
            n_train: 0,
            scenarios: Scenario::ALL.to_vec(),
            train_sizes: vec![1, 2, 4, 8, 16],
            seeds: vec![0],
            output: "runs".into(),
            lr: 1e-4,
            batch_size: 1,
            max_epochs: 100,
            min_steps: 0,
            val_interval: 1,
            loss_eps: 1e-6,
            depth: 4,
            base_channels: 32,
            dropout: 0.2,
            activation: Activation::Sigmoid,
        }
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Canonical form: every key, fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv(
            "manifest",
            self.manifest
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        kv("phantom", self.phantom.clone());
        kv("n_val", self.n_val.to_string());
        kv("n_test", self.n_test.to_string());
        kv("data_seed", self.data_seed.to_string());
        kv("spacing", fmt_f64(self.spacing));
        kv("crop_size", self.crop_size.to_string());
        kv("mask", self.mask.name().into());
        kv("threshold_hu", fmt_f64(self.threshold_hu as f64));
        kv("closing_radius", self.closing_radius.to_string());
        kv("dilation_radius", self.dilation_radius.to_string());
        kv("scenario", self.scenario.to_string());
        kv("seed", self.seed.to_string());
        kv("n_train", self.n_train.to_string());
        kv("scenarios", join(&self.scenarios));
        kv("train_sizes", join(&self.train_sizes));
        kv("seeds", join(&self.seeds));
        kv("output", self.output.display().to_string());
        kv("lr", fmt_f64(self.lr));
        kv("batch_size", self.batch_size.to_string());
        kv("max_epochs", self.max_epochs.to_string());
        kv("min_steps", self.min_steps.to_string());
        kv("val_interval", self.val_interval.to_string());
        kv("loss_eps", fmt_f64(self.loss_eps));
        kv("depth", self.depth.to_string());
        kv("base_channels", self.base_channels.to_string());
        kv("dropout", fmt_f64(self.dropout as f64));
        kv("activation", self.activation.to_string());
        s
    }

    /// Parses config text; relative paths are kept as written.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = kv::parse(text, WHAT)?;
        kv::reject_duplicates(&entries, WHAT, &[])?;
        let mut c = Self::default();
        for e in &entries {
            let v = e.value.as_str();
            match e.key.as_str() {
                "manifest" => c.manifest = (!v.is_empty()).then(|| PathBuf::from(v)),
                "phantom" => c.phantom = v.to_string(),
                "n_val" => c.n_val = e.num(WHAT)?,
                "n_test" => c.n_test = e.num(WHAT)?,
                "data_seed" => c.data_seed = e.num(WHAT)?,
                "spacing" => c.spacing = e.num(WHAT)?,
                "crop_size" => c.crop_size = e.num(WHAT)?,
                "mask" => c.mask = MaskMethod::parse(v)?,
                "threshold_hu" => c.threshold_hu = e.num(WHAT)?,
                "closing_radius" => c.closing_radius = e.num(WHAT)?,
                "dilation_radius" => c.dilation_radius = e.num(WHAT)?,
                "scenario" => c.scenario = v.parse()?,
                "seed" => c.seed = e.num(WHAT)?,
                "n_train" => c.n_train = e.num(WHAT)?,
                "scenarios" => {
                    c.scenarios = v
                        .split(|ch: char| ch == ',' || ch.is_whitespace())
                        .filter(|s| !s.is_empty())
                        .map(str::parse)
                        .collect::<Result<_>>()?
                }
                "train_sizes" => c.train_sizes = e.list(WHAT)?,
                "seeds" => c.seeds = e.list(WHAT)?,
                "output" => c.output = PathBuf::from(v),
                "lr" => c.lr = e.num(WHAT)?,
                "batch_size" => c.batch_size = e.num(WHAT)?,
                "max_epochs" => c.max_epochs = e.num(WHAT)?,
                "min_steps" => c.min_steps = e.num(WHAT)?,
                "val_interval" => c.val_interval = e.num(WHAT)?,
                "loss_eps" => c.loss_eps = e.num(WHAT)?,
                "depth" => c.depth = e.num(WHAT)?,
                "base_channels" => c.base_channels = e.num(WHAT)?,
                "dropout" => c.dropout = e.num(WHAT)?,
                "activation" => c.activation = v.parse()?,
                _ => return Err(e.err(WHAT, "unknown key")),
            }
        }
        c.validate()
            .map_err(|err| Error::parse(WHAT, err.to_string()))?;
        Ok(c)
    }

    /// Reads a config file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut c = Self::parse(&crate::fsutil::read_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &Path| {
            if p.is_relative() {
                base.join(p)
            } else {
                p.to_path_buf()
            }
        };
        c.manifest = c.manifest.as_deref().map(fix);
        c.output = fix(&c.output);
        if PhantomSpec::preset(&c.phantom).is_none() {
            c.phantom = fix(Path::new(&c.phantom)).display().to_string();
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.scenarios.is_empty(), "scenarios must not be empty");
        ensure!(
            !self.train_sizes.is_empty(),
            "train_sizes must not be empty"
        );
        ensure!(
            self.train_sizes.iter().all(|&n| n > 0),
            "train sizes must be positive"
        );
        ensure!(!self.seeds.is_empty(), "seeds must not be empty");
        ensure!(
            self.spacing > 0.0 && self.spacing.is_finite(),
            "spacing must be positive"
        );
        ensure!(self.crop_size > 0, "crop_size must be positive");
        ensure!(self.threshold_hu.is_finite(), "threshold_hu must be finite");
        ensure!(!self.output.as_os_str().is_empty(), "output must be set");
        ensure!(!self.phantom.is_empty(), "phantom must be set");
        self.unet(Scenario::CtOnly, 1).validate()?;
        let mut t = TrainConfig::new(self.scenario, self.unet(self.scenario, 1));
        self.apply_training(&mut t);
        t.validate()
    }

    pub fn unet(&self, scenario: Scenario, structures: usize) -> UNetConfig {
        UNetConfig {
            in_channels: scenario.in_channels(),
            out_channels: structures,
            base_channels: self.base_channels,
            depth: self.depth,
            dropout_rate: self.dropout,
            hidden_activation: self.activation,
        }
    }

    fn apply_training(&self, t: &mut TrainConfig) {
        t.lr = self.lr;
        t.batch_size = self.batch_size;
        t.max_epochs = self.max_epochs;
        t.min_steps = self.min_steps;
        t.val_interval = self.val_interval;
        t.loss_eps = self.loss_eps;
    }

    pub fn train_config(
        &self,
        scenario: Scenario,
        seed: u64,
        structures: usize,
        checkpoint_dir: Option<PathBuf>,
    ) -> TrainConfig {
        let mut t = TrainConfig::new(scenario, self.unet(scenario, structures));
        self.apply_training(&mut t);
        t.seed = seed;
        t.checkpoint_dir = checkpoint_dir;
        t
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            target_spacing: [self.spacing; 3],
            size: [self.crop_size; 3],
            window: (-200.0, 200.0),
            mask: match self.mask {
                MaskMethod::Threshold => MaskSource::Threshold {
                    threshold_hu: self.threshold_hu,
                    closing_radius: self.closing_radius,
                },
                MaskMethod::Labels => MaskSource::Labels {
                    dilation_radius: self.dilation_radius,
                },
                MaskMethod::Provided => MaskSource::Provided,
            },
        }
    }

    pub fn phantom_spec(&self) -> Result<PhantomSpec> {
        match PhantomSpec::preset(&self.phantom) {
            Some(s) => Ok(s),
            None => PhantomSpec::parse(&crate::fsutil::read_string(Path::new(&self.phantom))?),
        }
    }
}
