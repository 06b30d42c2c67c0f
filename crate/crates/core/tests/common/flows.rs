//! Small sweep configurations and CSV comparison.

use std::path::Path;

use maskseg::cli::ExperimentConfig;
use maskseg::unet::Activation;

/// A sweep that trains tiny models on a freshly generated phantom under
/// `out`.
pub fn tiny_sweep(out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        n_val: 1,
        n_test: 2,
        data_seed: 4,
        crop_size: 16,
        train_sizes: vec![1, 2],
        seeds: vec![0, 1],
        output: out.to_path_buf(),
        lr: 1e-3,
        max_epochs: 2,
        depth: 2,
        base_channels: 2,
        activation: Activation::Relu,
        ..ExperimentConfig::default()
    }
}

/// Numeric cells of a sweep CSV with the wall-clock and status columns
/// dropped; empty cells become `None`.
pub fn sweep_numbers(csv: &str) -> Vec<(String, Vec<Option<f64>>)> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let wall = header.iter().position(|&h| h == "wall_seconds").unwrap();
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let nums = f[1..wall]
                .iter()
                .map(|v| {
                    if v.is_empty() {
                        None
                    } else {
                        Some(v.parse().unwrap())
                    }
                })
                .collect();
            (f[0].to_string(), nums)
        })
        .collect()
}

/// Largest numeric difference between two sweep CSVs; `Err` on any
/// structural mismatch.
pub fn sweep_difference(a: &str, b: &str) -> Result<f64, String> {
    let (a, b) = (sweep_numbers(a), sweep_numbers(b));
    if a.len() != b.len() {
        return Err(format!("{} vs {} rows", a.len(), b.len()));
    }
    let mut worst = 0.0f64;
    for ((sa, na), (sb, nb)) in a.iter().zip(&b) {
        if sa != sb || na.len() != nb.len() {
            return Err(format!("row layout differs: {sa} vs {sb}"));
        }
        for (x, y) in na.iter().zip(nb) {
            match (x, y) {
                (Some(x), Some(y)) => worst = worst.max((x - y).abs()),
                (None, None) => {}
                _ => return Err(format!("defined/undefined mismatch in {sa} row")),
            }
        }
    }
    Ok(worst)
}
