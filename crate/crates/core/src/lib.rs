//! Volumetric structure segmentation driven by global binary masks.
//!
//! The crate bundles a small reverse-mode differentiation engine
//! ([`diffgrid`]), a configurable 3D U-Net ([`unet`]), CT preprocessing and
//! mask generation ([`pipeline`]), synthetic phantom subjects ([`phantom`]),
//! Dice-loss training with Adam ([`training`]), evaluation metrics
//! ([`metrics`]) and the command-line experiment harness ([`cli`]).

pub mod cli;
pub mod dataset;
pub mod diffgrid;
pub mod error;
mod fsutil;
mod kv;
pub mod manifest;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod rng;
pub mod training;
pub mod unet;

pub use error::{Error, Result};
pub use rng::RngState;
