//! Resumable scenario × training-size × seed matrix.
//!
//! Layout under the config's `output`:
//!
//! ```text
//! data/raw/          generated phantom (when no manifest is configured)
//! data/processed/    preprocessed copy used for training
//! cells/<SCENARIO>_n<N>_s<SEED>/  best.ckpt, history.csv, report.csv, row.csv
//! sweep.csv          one row per cell
//! ```
//!
//! `row.csv` is written last and marks a finished cell; later runs reuse it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{load_train_val, CliError, ExperimentConfig};
use crate::dataset::{load_split, preprocess_manifest};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::manifest::{Split, FILE_NAME};
use crate::metrics::{evaluate, mean_std};
use crate::phantom::{generate_dataset, write_dataset};
use crate::training::{train, Scenario, TrainingCase};

pub const SWEEP_FILE: &str = "sweep.csv";
const ROW_FILE: &str = "row.csv";
const DATA_KEY: &str = "data.key";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scenario: Scenario,
    pub n_train: usize,
    pub seed: u64,
    pub dice: Vec<Option<f64>>,
    pub mean_dice: Option<f64>,
    pub com: Vec<Option<f64>>,
    pub mean_com: Option<f64>,
    pub wall_seconds: f64,
    /// `ok` or the error message.
    pub status: String,
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn header(structures: &[String]) -> String {
    let mut h = String::from("scenario,n_train,seed");
    for s in structures {
        let _ = write!(h, ",dice_{s}");
    }
    h.push_str(",mean_dice");
    for s in structures {
        let _ = write!(h, ",com_{s}");
    }
    h.push_str(",mean_com_mm,wall_seconds,status");
    h
}

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        let mut l = format!("{},{},{}", self.scenario, self.n_train, self.seed);
        for d in &self.dice {
            let _ = write!(l, ",{}", opt(*d));
        }
        let _ = write!(l, ",{}", opt(self.mean_dice));
        for c in &self.com {
            let _ = write!(l, ",{}", opt(*c));
        }
        let status = self.status.replace([',', '\n'], ";");
        let _ = write!(
            l,
            ",{},{},{}",
            opt(self.mean_com),
            self.wall_seconds,
            status
        );
        l
    }

    pub fn parse(line: &str, structures: usize) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::parse("sweep row", line.to_string());
        if f.len() != 3 + 2 * structures + 4 {
            return Err(bad());
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad())
            }
        };
        let s = structures;
        Ok(Self {
            scenario: f[0].parse()?,
            n_train: f[1].parse().map_err(|_| bad())?,
            seed: f[2].parse().map_err(|_| bad())?,
            dice: f[3..3 + s].iter().map(|v| num(v)).collect::<Result<_>>()?,
            mean_dice: num(f[3 + s])?,
            com: f[4 + s..4 + 2 * s]
                .iter()
                .map(|v| num(v))
                .collect::<Result<_>>()?,
            mean_com: num(f[4 + 2 * s])?,
            wall_seconds: f[5 + 2 * s].parse().map_err(|_| bad())?,
            status: f[6 + 2 * s].to_string(),
        })
    }
}

pub struct SweepOutcome {
    pub csv_path: PathBuf,
    pub rows: Vec<SweepRow>,
    pub first_failure: Option<Error>,
}

pub fn cell_dir(output: &Path, scenario: Scenario, n: usize, seed: u64) -> PathBuf {
    output
        .join("cells")
        .join(format!("{scenario}_n{n}_s{seed}"))
}

/// Processed manifest for the sweep, generating the phantom if needed.
fn ensure_data(c: &ExperimentConfig, log: &mut impl FnMut(&str)) -> Result<PathBuf> {
    if let Some(m) = &c.manifest {
        return Ok(m.clone());
    }
    let spec = c.phantom_spec()?;
    let n_train = *c.train_sizes.iter().max().expect("validated non-empty");
    let key = format!(
        "{}n_train = {n_train}\nn_val = {}\nn_test = {}\ndata_seed = {}\nspacing = {}\ncrop_size = {}\nmask = {:?}\n",
        spec.to_text(),
        c.n_val,
        c.n_test,
        c.data_seed,
        c.spacing,
        c.crop_size,
        c.preprocess().mask
    );
    let data = c.output.join("data");
    let processed = data.join("processed").join(FILE_NAME);
    let key_path = data.join(DATA_KEY);
    if processed.exists() {
        if fsutil::read_string(&key_path).ok().as_deref() == Some(key.as_str()) {
            return Ok(processed);
        }
        return Err(Error::contract(format!(
            "{} holds data generated from different settings",
            data.display()
        )));
    }
    log(&format!(
        "generating {} phantom: {n_train}/{}/{} subjects",
        spec.name, c.n_val, c.n_test
    ));
    let ds = generate_dataset(&spec, n_train, c.n_val, c.n_test, c.data_seed)?;
    let raw = write_dataset(&ds, &data.join("raw"))?;
    let path = preprocess_manifest(&raw, &c.preprocess(), &data.join("processed"))?;
    fsutil::write_atomic(&key_path, key.as_bytes())?;
    Ok(path)
}

fn run_cell(
    c: &ExperimentConfig,
    dir: &Path,
    scenario: Scenario,
    n: usize,
    seed: u64,
    data: &(
        Vec<String>,
        Vec<TrainingCase>,
        Vec<TrainingCase>,
        Vec<TrainingCase>,
    ),
) -> Result<SweepRow> {
    let (structures, train_all, val, test) = data;
    if n > train_all.len() {
        return Err(Error::contract(format!(
            "training size {n} exceeds the {} available subjects",
            train_all.len()
        )));
    }
    let start = Instant::now();
    let tc = c.train_config(scenario, seed, structures.len(), Some(dir.to_path_buf()));
    let out = train(&tc, &train_all[..n], val)?;
    let report = evaluate(&out.model, test, scenario, structures)?;
    let wall_seconds = start.elapsed().as_secs_f64();
    fsutil::write_atomic(&dir.join("history.csv"), out.history.to_csv().as_bytes())?;
    fsutil::write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes())?;
    let aggs = report.aggregates();
    Ok(SweepRow {
        scenario,
        n_train: n,
        seed,
        dice: aggs.iter().map(|a| Some(a.dice_mean)).collect(),
        mean_dice: Some(report.mean_dice()),
        com: aggs.iter().map(|a| a.com_mean).collect(),
        mean_com: report.mean_com(),
        wall_seconds,
        status: "ok".into(),
    })
}

pub fn run_sweep(
    c: &ExperimentConfig,
    mut log: impl FnMut(&str),
) -> std::result::Result<SweepOutcome, CliError> {
    let manifest = ensure_data(c, &mut log)?;
    let (structures, train_all, val) = load_train_val(&manifest, 0)?;
    let (_, test) = load_split(&manifest, Split::Test)?;
    if test.is_empty() {
        return Err(CliError::Run(Error::contract("sweep needs test subjects")));
    }
    let data = (structures.clone(), train_all, val, test);
    let s = structures.len();
    let mut rows = Vec::new();
    let mut first_failure = None;
    for &scenario in &c.scenarios {
        for &n in &c.train_sizes {
            for &seed in &c.seeds {
                let dir = cell_dir(&c.output, scenario, n, seed);
                let done = dir.join(ROW_FILE);
                if let Ok(text) = fsutil::read_string(&done) {
                    if let Ok(row) = SweepRow::parse(text.trim_end(), s) {
                        log(&format!(
                            "{scenario} n={n} seed={seed}: reusing finished cell"
                        ));
                        rows.push(row);
                        continue;
                    }
                }
                log(&format!("{scenario} n={n} seed={seed}: training"));
                let row = match run_cell(c, &dir, scenario, n, seed, &data) {
                    Ok(row) => {
                        fsutil::write_atomic(&done, format!("{}\n", row.to_csv_line()).as_bytes())?;
                        log(&format!(
                            "{scenario} n={n} seed={seed}: mean dice {:.4} in {:.1}s",
                            row.mean_dice.unwrap_or(f64::NAN),
                            row.wall_seconds
                        ));
                        row
                    }
                    Err(e) => {
                        log(&format!("{scenario} n={n} seed={seed}: failed: {e}"));
                        let _ = fsutil::write_atomic(
                            &dir.join("error.txt"),
                            format!("{e}\n").as_bytes(),
                        );
                        let row = SweepRow {
                            scenario,
                            n_train: n,
                            seed,
                            dice: vec![None; s],
                            mean_dice: None,
                            com: vec![None; s],
                            mean_com: None,
                            wall_seconds: 0.0,
                            status: format!("error: {e}"),
                        };
                        first_failure.get_or_insert(e);
                        row
                    }
                };
                rows.push(row);
            }
        }
    }
    let mut csv = header(&structures);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv_line());
        csv.push('\n');
    }
    let csv_path = c.output.join(SWEEP_FILE);
    fsutil::write_atomic(&csv_path, csv.as_bytes())?;
    Ok(SweepOutcome {
        csv_path,
        rows,
        first_failure,
    })
}

fn gnum(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_else(|| "NaN".into())
}

/// Whitespace-separated columns for plotting. A sweep CSV becomes one line
/// per training size with mean and population std of `mean_dice` across
/// seeds per scenario; a history CSV becomes `epoch train_loss val_loss`.
pub fn gnuplot_columns(text: &str) -> Result<String> {
    let mut lines = text.lines();
    let head = lines.next().unwrap_or("");
    if head == "epoch,train_loss,val_loss,seconds" {
        let mut out = String::from("# epoch train_loss val_loss\n");
        for l in lines {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 4 {
                return Err(Error::parse("history CSV", l.to_string()));
            }
            let val = if f[2].is_empty() { "NaN" } else { f[2] };
            let _ = writeln!(out, "{} {} {}", f[0], f[1], val);
        }
        return Ok(out);
    }
    let cols: Vec<&str> = head.split(',').collect();
    if cols.len() < 7 || cols[..3] != ["scenario", "n_train", "seed"] {
        return Err(Error::parse(
            "report input",
            "expected a sweep or history CSV",
        ));
    }
    let s = (cols.len() - 7) / 2;
    let rows: Vec<SweepRow> = lines
        .map(|l| SweepRow::parse(l, s))
        .collect::<Result<_>>()?;
    let mut scenarios: Vec<Scenario> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for r in &rows {
        if !scenarios.contains(&r.scenario) {
            scenarios.push(r.scenario);
        }
        if !sizes.contains(&r.n_train) {
            sizes.push(r.n_train);
        }
    }
    sizes.sort_unstable();
    let mut out = String::from("# n_train");
    for sc in &scenarios {
        let _ = write!(out, " {sc}_mean {sc}_std");
    }
    out.push('\n');
    for n in sizes {
        let _ = write!(out, "{n}");
        for sc in &scenarios {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.scenario == *sc && r.n_train == n)
                .filter_map(|r| r.mean_dice)
                .collect();
            let ms = mean_std(&v);
            let _ = write!(out, " {} {}", gnum(ms.map(|m| m.0)), gnum(ms.map(|m| m.1)));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scenario: Scenario, n: usize, seed: u64, d: f64) -> SweepRow {
        SweepRow {
            scenario,
            n_train: n,
            seed,
            dice: vec![Some(d), None],
            mean_dice: Some(d),
            com: vec![Some(1.5), None],
            mean_com: Some(1.5),
            wall_seconds: 2.25,
            status: "ok".into(),
        }
    }

    #[test]
    fn row_round_trip() {
        let r = row(Scenario::MaskOnly, 2, 7, 0.625);
        assert_eq!(SweepRow::parse(&r.to_csv_line(), 2).unwrap(), r);
        assert_eq!(header(&["a".into()]).split(',').count(), 3 + 2 + 4);
    }

    #[test]
    fn gnuplot_sweep_columns() {
        let mut csv = header(&["a".into(), "b".into()]);
        csv.push('\n');
        for r in [
            row(Scenario::CtOnly, 1, 0, 0.25),
            row(Scenario::CtOnly, 1, 1, 0.75),
            row(Scenario::CtOnly, 2, 0, 0.5),
        ] {
            csv.push_str(&r.to_csv_line());
            csv.push('\n');
        }
        let out = gnuplot_columns(&csv).unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines[0], "# n_train CT_ONLY_mean CT_ONLY_std");
        assert_eq!(lines[1], "1 0.5 0.25");
        assert_eq!(lines[2], "2 0.5 0");
    }

    #[test]
    fn gnuplot_history_columns() {
        let out = gnuplot_columns("epoch,train_loss,val_loss,seconds\n1,0.5,,1.0\n2,0.4,0.3,1.0\n")
            .unwrap();
        assert_eq!(out, "# epoch train_loss val_loss\n1 0.5 NaN\n2 0.4 0.3\n");
    }
}
