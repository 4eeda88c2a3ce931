//! 1-bit LAMB over a simulated data-parallel cluster.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: flat-vector arithmetic and the clipping primitive;
//! - [`compression`]: the 1-bit compressor with error feedback;
//! - [`comm`]: the simulated cluster, its compressed and lossless allreduce,
//!   and the communication-volume ledger;
//! - [`fusion`]: momentum fusion and per-layer momentum scaling;
//! - [`optim`]: LAMB, 1-bit LAMB, the frozen-coefficient ablation and the
//!   Adam baselines;
//! - [`harness`]: toy tasks, the training loop, config files and metrics.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod comm;
pub mod compression;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod numerics;
pub mod optim;

pub use error::{Error, Result};
