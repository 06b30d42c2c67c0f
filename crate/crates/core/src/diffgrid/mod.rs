//! Dense grids with reverse-mode differentiation and the volumetric layer
//! operations a U-Net needs.
//!
//! All values are `f32`. Reductions (sums, batch statistics, loss terms)
//! accumulate in `f64`. Everything runs sequentially and deterministically.

mod direct;
mod grid;
mod kernels;
mod tape;

pub use grid::Grid;
pub use tape::{Mode, RunningStats, Tape, Var, BN_EPS, BN_MOMENTUM};

#[allow(unused_imports)]
pub(crate) use tape::{sigmoid, sigmoid_open};

#[cfg(test)]
mod tests;
