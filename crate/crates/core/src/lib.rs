//! Surrogate-accelerated history matching for 2D oil-water reservoirs.
//!
//! The crate is organised bottom-up:
//!
//! * [`geomodel`] generates channelized facies realizations, fits a PCA
//!   parameterization and maps facies to permeability.
//! * [`simulator`] is a fully implicit two-point flux finite-volume solver
//!   with BHP-controlled Peaceman wells.
//! * [`autodiff`] is a small reverse-mode tape over dense 4D tensors.
//! * [`network`] builds the recurrent residual U-Net (encoder, convLSTM,
//!   shared decoder) on top of the tape.
//! * [`pipeline`] assembles datasets, normalizes pressure, and trains the
//!   pressure and saturation networks with ADAM.
//! * [`evaluate`] holds error metrics, well-rate reconstruction and
//!   ensemble percentiles.
//! * [`assimilate`] runs randomized maximum likelihood with a mesh adaptive
//!   direct search optimizer.
//! * [`io`] reads and writes the on-disk formats.

pub mod assimilate;
pub mod autodiff;
pub mod error;
pub mod evaluate;
pub mod geomodel;
pub mod io;
pub mod network;
pub mod pipeline;
pub mod simulator;
pub mod units;

pub use error::{Error, Result};
