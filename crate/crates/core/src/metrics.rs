//! Overlap and center-of-mass metrics, evaluation and report aggregation.
//!
//! Report CSV columns, in order: `subject_id,structure,dice,com_distance_mm`.
//! An empty `com_distance_mm` cell means the distance is undefined (a mask
//! was empty). After the per-subject rows come aggregate rows whose
//! `subject_id` is `mean` or `std` (population standard deviation, n
//! divisor) per structure, and `mean,ALL` for the mean over structures.
//! Aggregates of the distance column skip undefined cells.

use std::fmt::Write as _;

use crate::diffgrid::Grid;
use crate::error::{ensure, Error, Result};
use crate::pipeline::{BinaryMask, Geometry, Image3};
use crate::training::{Scenario, TrainingCase};
use crate::unet::UNetModel;

/// One binary mask per channel of a `1×S×D×H×W` probability grid:
/// voxel = 1 iff `prob > tau`.
pub fn threshold_predictions(prob: &Grid, tau: f32, geom: Geometry) -> Result<Vec<BinaryMask>> {
    ensure!(
        tau > 0.0 && tau < 1.0,
        "threshold must lie in (0, 1), got {}",
        tau
    );
    let [n, s, d, h, w] = prob.dims5()?;
    ensure!(
        n == 1,
        "threshold_predictions takes a single case, got batch {}",
        n
    );
    ensure!(
        [d, h, w] == geom.dims,
        "prediction {:?} does not match geometry {:?}",
        [d, h, w],
        geom.dims
    );
    let vox = d * h * w;
    Ok((0..s)
        .map(|c| Image3 {
            geom,
            data: prob.data()[c * vox..(c + 1) * vox]
                .iter()
                .map(|&p| (p > tau) as u8)
                .collect(),
        })
        .collect())
}

fn check_pair(a: &BinaryMask, b: &BinaryMask) -> Result<()> {
    ensure!(
        a.geom.dims == b.geom.dims
            && a.geom.spacing == b.geom.spacing
            && a.geom.origin == b.geom.origin,
        "mask geometries differ: {:?} vs {:?}",
        a.geom,
        b.geom
    );
    Ok(())
}

/// `2|P∩G| / (|P| + |G|)`; 1 when both masks are empty.
pub fn dice_coefficient(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_pair(pred, gt)?;
    let (mut inter, mut np, mut ng) = (0u64, 0u64, 0u64);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        let (p, g) = (p != 0, g != 0);
        inter += (p && g) as u64;
        np += p as u64;
        ng += g as u64;
    }
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (np + ng) as f64)
}

/// Mean physical voxel-center coordinate `(z, y, x)` in mm.
pub fn center_of_mass(mask: &BinaryMask) -> Result<[f64; 3]> {
    let mut sums = [0u64; 3];
    let mut count = 0u64;
    for (idx, v) in mask.indexed() {
        if v != 0 {
            for a in 0..3 {
                sums[a] += idx[a] as u64;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyMask("center of mass of an empty mask".into()));
    }
    let g = &mask.geom;
    Ok(std::array::from_fn(|a| {
        g.origin[a] as f64 + (sums[a] as f64 / count as f64 + 0.5) * g.spacing[a] as f64
    }))
}

/// Euclidean COM distance in mm; `None` when either mask is empty.
pub fn com_distance(pred: &BinaryMask, gt: &BinaryMask) -> Result<Option<f64>> {
    check_pair(pred, gt)?;
    let (Ok(a), Ok(b)) = (center_of_mass(pred), center_of_mass(gt)) else {
        return Ok(None);
    };
    Ok(Some(
        (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureMetrics {
    pub structure: String,
    pub dice: f64,
    pub com_distance_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub subject_id: String,
    pub metrics: StructureMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub structure: String,
    pub dice_mean: f64,
    pub dice_std: f64,
    /// `None` when every distance of this structure is undefined.
    pub com_mean: Option<f64>,
    pub com_std: Option<f64>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    /// Structure order for aggregates.
    pub structures: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn aggregates(&self) -> Vec<Aggregate> {
        self.structures
            .iter()
            .filter_map(|s| {
                let cells: Vec<&StructureMetrics> = self
                    .rows
                    .iter()
                    .map(|r| &r.metrics)
                    .filter(|m| &m.structure == s)
                    .collect();
                let dice: Vec<f64> = cells.iter().map(|m| m.dice).collect();
                let com: Vec<f64> = cells.iter().filter_map(|m| m.com_distance_mm).collect();
                let (dice_mean, dice_std) = mean_std(&dice)?;
                let com_stats = mean_std(&com);
                Some(Aggregate {
                    structure: s.clone(),
                    dice_mean,
                    dice_std,
                    com_mean: com_stats.map(|c| c.0),
                    com_std: com_stats.map(|c| c.1),
                })
            })
            .collect()
    }

    /// Mean over structures of the per-structure mean Dice.
    pub fn mean_dice(&self) -> f64 {
        let a = self.aggregates();
        a.iter().map(|x| x.dice_mean).sum::<f64>() / a.len().max(1) as f64
    }

    /// Mean over structures of the per-structure mean COM distance, skipping
    /// structures without any defined distance.
    pub fn mean_com(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .aggregates()
            .iter()
            .filter_map(|a| a.com_mean)
            .collect();
        mean_std(&v).map(|m| m.0)
    }

    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::from("subject_id,structure,dice,com_distance_mm\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                r.subject_id,
                r.metrics.structure,
                r.metrics.dice,
                opt(r.metrics.com_distance_mm)
            );
        }
        let aggs = self.aggregates();
        for a in &aggs {
            let _ = writeln!(
                s,
                "mean,{},{},{}",
                a.structure,
                a.dice_mean,
                opt(a.com_mean)
            );
            let _ = writeln!(s, "std,{},{},{}", a.structure, a.dice_std, opt(a.com_std));
        }
        let _ = writeln!(s, "mean,ALL,{},{}", self.mean_dice(), opt(self.mean_com()));
        s
    }

    /// Reads the per-subject rows of a report CSV; aggregate rows are
    /// recomputed, not trusted.
    pub fn from_csv(text: &str) -> Result<Self> {
        const WHAT: &str = "report CSV";
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("subject_id,structure,dice,com_distance_mm") {
            return Err(Error::parse(WHAT, "unexpected header"));
        }
        let mut report = EvalReport::default();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let [subject, structure, dice, com] = f[..] else {
                return Err(Error::parse(
                    WHAT,
                    format!("row {}: expected 4 columns", i + 2),
                ));
            };
            if subject == "mean" || subject == "std" {
                continue;
            }
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|_| Error::parse(WHAT, format!("row {}: bad number {v:?}", i + 2)))
            };
            if !report.structures.iter().any(|s| s == structure) {
                report.structures.push(structure.to_string());
            }
            report.rows.push(ReportRow {
                subject_id: subject.to_string(),
                metrics: StructureMetrics {
                    structure: structure.to_string(),
                    dice: num(dice)?,
                    com_distance_mm: if com.is_empty() {
                        None
                    } else {
                        Some(num(com)?)
                    },
                },
            });
        }
        Ok(report)
    }
}

/// Anything mapping a network input to per-structure probabilities.
pub trait Predictor {
    fn in_channels(&self) -> usize;
    fn predict(&self, input: &Grid) -> Result<Grid>;
}

impl Predictor for UNetModel {
    fn in_channels(&self) -> usize {
        self.config().in_channels
    }

    fn predict(&self, input: &Grid) -> Result<Grid> {
        UNetModel::predict(self, input)
    }
}

pub const DEFAULT_TAU: f32 = 0.5;

/// Eval-mode prediction, thresholding at 0.5 and per-structure metrics for
/// every case.
pub fn evaluate(
    model: &impl Predictor,
    cases: &[TrainingCase],
    scenario: Scenario,
    structures: &[String],
) -> Result<EvalReport> {
    ensure!(
        model.in_channels() == scenario.in_channels(),
        "model takes {} input channels but scenario {} supplies {}",
        model.in_channels(),
        scenario,
        scenario.in_channels()
    );
    let mut report = EvalReport {
        structures: structures.to_vec(),
        rows: Vec::new(),
    };
    for case in cases {
        let prob = model.predict(&scenario.assemble(case)?)?;
        let preds = threshold_predictions(&prob, DEFAULT_TAU, case.ct.geom)?;
        ensure!(
            preds.len() == structures.len(),
            "model predicts {} structures, {} named",
            preds.len(),
            structures.len()
        );
        for (k, (pred, name)) in preds.iter().zip(structures).enumerate() {
            let gt = case.labels.select(k as u8 + 1);
            report.rows.push(ReportRow {
                subject_id: case.id.clone(),
                metrics: StructureMetrics {
                    structure: name.clone(),
                    dice: dice_coefficient(pred, &gt)?,
                    com_distance_mm: com_distance(pred, &gt)?,
                },
            });
        }
    }
    Ok(report)
}
