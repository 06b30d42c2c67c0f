#![allow(dead_code)]

pub mod checks;
pub mod flows;
pub mod identities;
pub mod reference;

use maskseg::diffgrid::Grid;
use maskseg::RngState;

/// Uniform values in `[lo, hi)`, rounded to `f32` so the library and the
/// 64-bit reference see the same inputs.
pub fn uniform(rng: &mut RngState, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n)
        .map(|_| rng.uniform_range(lo, hi) as f32 as f64)
        .collect()
}

pub fn grid(shape: &[usize], data: &[f64]) -> Grid {
    Grid::from_vec(shape, data.iter().map(|&v| v as f32).collect()).unwrap()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Prints one acceptance line and returns whether it passed.
pub fn report(id: usize, name: &str, res: &Result<String, String>) -> bool {
    match res {
        Ok(detail) => println!("criterion {id} [{name}]: PASS ({detail})"),
        Err(detail) => println!("criterion {id} [{name}]: FAIL ({detail})"),
    }
    res.is_ok()
}
