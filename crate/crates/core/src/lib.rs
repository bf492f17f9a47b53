//! Two-stage unrolled channel estimation for downlink massive MIMO.
//!
//! A coarse unrolled net recovers the concatenated angular channel of `L`
//! frames using their shared support; a fine unrolled net then corrects each
//! frame, trusting the support of the previous frame's estimate through a
//! learned threshold weight. Classical proximal-gradient solvers, a
//! genie-aided least-squares bound, training, metrics and a benchmark CLI
//! are included.

pub mod baselines;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod gradcheck;
pub mod infer;
pub mod lift;
pub mod metrics;
pub mod nets;
pub mod pipeline;
pub mod shrinkage;
pub mod sim;
pub mod train;

pub use error::{Error, Result};
