//! Dice-loss training of the U-Net under the three input scenarios.

mod adam;
pub mod checkpoint;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

pub use adam::{adam_step, AdamState, ADAM_EPS, BETA1, BETA2};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use crate::diffgrid::{Grid, Mode, Tape, Var};
use crate::error::{ensure, Error, Result};
use crate::pipeline::{
    labels_to_targets, mask_to_grid, stack_channels, volume_to_grid, BinaryMask, LabelMap, Volume,
};
use crate::rng::RngState;
use crate::unet::{UNetConfig, UNetModel};

/// Which volumes feed the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scenario {
    CtOnly,
    MaskOnly,
    CtPlusMask,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::CtOnly, Scenario::MaskOnly, Scenario::CtPlusMask];

    pub fn in_channels(self) -> usize {
        match self {
            Scenario::CtOnly | Scenario::MaskOnly => 1,
            Scenario::CtPlusMask => 2,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Scenario::CtOnly => 0,
            Scenario::MaskOnly => 1,
            Scenario::CtPlusMask => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.code() == c)
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::CtOnly => "CT_ONLY",
            Scenario::MaskOnly => "MASK_ONLY",
            Scenario::CtPlusMask => "CT_PLUS_MASK",
        }
    }

    /// Network input for one case; `MaskOnly` never reads the CT.
    pub fn assemble(self, case: &TrainingCase) -> Result<Grid> {
        match self {
            Scenario::CtOnly => Ok(volume_to_grid(&case.ct)),
            Scenario::MaskOnly => Ok(mask_to_grid(&case.mask)),
            Scenario::CtPlusMask => stack_channels(&case.ct, &case.mask),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "CT_ONLY" => Ok(Scenario::CtOnly),
            "MASK_ONLY" => Ok(Scenario::MaskOnly),
            "CT_PLUS_MASK" => Ok(Scenario::CtPlusMask),
            _ => Err(Error::parse(
                "scenario",
                format!("{s:?} (CT_ONLY, MASK_ONLY, CT_PLUS_MASK)"),
            )),
        }
    }
}

/// One preprocessed subject: normalized CT, global mask and labels on the
/// same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCase {
    pub id: String,
    pub ct: Volume,
    pub mask: BinaryMask,
    pub labels: LabelMap,
}

impl TrainingCase {
    pub fn targets(&self, structures: usize) -> Result<Grid> {
        labels_to_targets(&self.labels, structures)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scenario: Scenario,
    pub unet: UNetConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Raises the epoch count until at least this many optimizer steps run;
    /// keeps tiny training sets from stopping after a handful of updates.
    pub min_steps: usize,
    /// Validate every this many epochs (and always after the last one).
    pub val_interval: usize,
    pub seed: u64,
    pub loss_eps: f64,
    /// Where `best.ckpt` is written whenever validation loss improves.
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(scenario: Scenario, unet: UNetConfig) -> Self {
        Self {
            scenario,
            unet,
            lr: 1e-4,
            batch_size: 1,
            max_epochs: 100,
            min_steps: 0,
            val_interval: 1,
            seed: 0,
            loss_eps: 1e-6,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        ensure!(
            self.lr > 0.0 && self.lr.is_finite(),
            "learning rate must be positive, got {}",
            self.lr
        );
        ensure!(self.batch_size >= 1, "batch size must be at least 1");
        ensure!(self.max_epochs >= 1, "max_epochs must be at least 1");
        ensure!(self.val_interval >= 1, "val_interval must be at least 1");
        ensure!(self.loss_eps >= 0.0, "loss eps must be non-negative");
        ensure!(
            self.unet.in_channels == self.scenario.in_channels(),
            "scenario {} needs {} input channels, U-Net has {}",
            self.scenario,
            self.scenario.in_channels(),
            self.unet.in_channels
        );
        Ok(())
    }

    pub fn epochs_for(&self, n_train: usize) -> usize {
        let batches = n_train.div_ceil(self.batch_size).max(1);
        self.max_epochs.max(self.min_steps.div_ceil(batches))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` on epochs without validation.
    pub val_loss: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch of the returned model (1-based).
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.val_loss)
            .reduce(f64::min)
    }

    pub fn total_seconds(&self) -> f64 {
        self.records.iter().map(|r| r.seconds).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,seconds\n");
        for r in &self.records {
            let val = r.val_loss.map(|v| format!("{v:.9}")).unwrap_or_default();
            s.push_str(&format!(
                "{},{:.9},{},{:.6}\n",
                r.epoch, r.train_loss, val, r.seconds
            ));
        }
        s
    }
}

/// Soft Dice loss on a tape: mean over batch and structure
/// channels of `1 - 2Σpg / (Σp² + Σg² + eps)`.
pub fn dice_loss(tape: &mut Tape, pred: Var, target: &Grid, eps: f64) -> Result<Var> {
    tape.dice_loss(pred, target, eps)
}

/// Soft Dice loss value without gradients.
pub fn dice_loss_value(pred: &Grid, target: &Grid, eps: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(pred.clone());
    let l = tape.dice_loss(p, target, eps)?;
    Ok(tape.value(l).data()[0] as f64)
}

/// Stacks `N=1` grids along the batch axis.
fn stack_batch(items: &[Grid]) -> Result<Grid> {
    let first = items
        .first()
        .ok_or_else(|| Error::contract("empty batch"))?;
    let mut shape = first.shape().to_vec();
    ensure!(
        shape.len() == 5 && shape[0] == 1,
        "batch items must be 1×C×D×H×W"
    );
    let mut data = Vec::with_capacity(first.len() * items.len());
    for g in items {
        ensure!(g.shape() == first.shape(), "batch items differ in shape");
        data.extend_from_slice(g.data());
    }
    shape[0] = items.len();
    Grid::from_vec(&shape, data)
}

struct Prepared {
    id: String,
    input: Grid,
    target: Grid,
}

fn prepare(scenario: Scenario, structures: usize, cases: &[TrainingCase]) -> Result<Vec<Prepared>> {
    cases
        .iter()
        .map(|c| {
            Ok(Prepared {
                id: c.id.clone(),
                input: scenario.assemble(c)?,
                target: c.targets(structures)?,
            })
        })
        .collect()
}

fn check_finite(loss: f64, epoch: usize, subject: &str) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite {
            epoch,
            subject: subject.to_string(),
            value: loss,
        })
    }
}

fn validation_loss(model: &UNetModel, val: &[Prepared], eps: f64, epoch: usize) -> Result<f64> {
    let mut total = 0.0;
    for p in val {
        let pred = model.predict(&p.input)?;
        total += check_finite(dice_loss_value(&pred, &p.target, eps)?, epoch, &p.id)?;
    }
    Ok(total / val.len() as f64)
}

/// Seed of the weight-initialization stream for a run seed.
pub fn init_seed(seed: u64) -> u64 {
    RngState::derive_seed(seed, 0)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model from the epoch with the lowest validation loss.
    pub model: UNetModel,
    pub history: TrainHistory,
}

pub fn train(
    config: &TrainConfig,
    train_set: &[TrainingCase],
    val_set: &[TrainingCase],
) -> Result<TrainOutcome> {
    train_with(config, train_set, val_set, |_| {})
}

/// Runs the full schedule, calling `on_epoch` after each epoch.
pub fn train_with(
    config: &TrainConfig,
    train_set: &[TrainingCase],
    val_set: &[TrainingCase],
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    ensure!(!train_set.is_empty(), "training set is empty");
    ensure!(!val_set.is_empty(), "validation set is empty");
    let structures = config.unet.out_channels;
    let train_p = prepare(config.scenario, structures, train_set)?;
    let val_p = prepare(config.scenario, structures, val_set)?;

    let mut model = UNetModel::build(config.unet, &mut RngState::new(init_seed(config.seed)))?;
    let mut adam = AdamState::new(model.params());
    let mut shuffle_rng = RngState::new(RngState::derive_seed(config.seed, 1));
    let mut dropout_rng = RngState::new(RngState::derive_seed(config.seed, 2));

    let epochs = config.epochs_for(train_p.len());
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, UNetModel)> = None;
    let mut order: Vec<usize> = (0..train_p.len()).collect();

    for epoch in 1..=epochs {
        let start = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<Grid> = chunk.iter().map(|&i| train_p[i].input.clone()).collect();
            let targets: Vec<Grid> = chunk.iter().map(|&i| train_p[i].target.clone()).collect();
            let label = chunk
                .iter()
                .map(|&i| train_p[i].id.as_str())
                .collect::<Vec<_>>()
                .join("+");
            let mut tape = Tape::new();
            let x = tape.constant(stack_batch(&inputs)?);
            let fwd = model.forward(&mut tape, x, Mode::Train, &mut dropout_rng)?;
            let loss = tape.dice_loss(fwd.output, &stack_batch(&targets)?, config.loss_eps)?;
            let value = check_finite(tape.value(loss).data()[0] as f64, epoch, &label)?;
            tape.backward(loss)?;
            let grads: Vec<Option<&Grid>> = fwd.params.iter().map(|&p| tape.grad(p)).collect();
            adam_step(model.params_mut(), &grads, &mut adam, config.lr)?;
            if !model.params().iter().all(Grid::all_finite) {
                return Err(Error::NonFinite {
                    epoch,
                    subject: label,
                    value: f64::NAN,
                });
            }
            loss_sum += value;
            batches += 1;
        }
        let val_loss = if epoch % config.val_interval == 0 || epoch == epochs {
            Some(validation_loss(&model, &val_p, config.loss_eps, epoch)?)
        } else {
            None
        };
        if let Some(v) = val_loss {
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                history.best_epoch = epoch;
                if let Some(dir) = &config.checkpoint_dir {
                    save_checkpoint(
                        &dir.join(checkpoint::BEST_FILE),
                        &Checkpoint {
                            scenario: config.scenario,
                            model: model.clone(),
                            adam: adam.clone(),
                            epoch: epoch as u32,
                        },
                    )?;
                }
                best = Some((v, model.clone()));
            }
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.records.push(record);
    }
    let (_, model) = best.expect("the last epoch always validates");
    Ok(TrainOutcome { model, history })
}
