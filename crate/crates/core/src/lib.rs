//! Gradient-approximation initialization for low-rank adapters (LoRA-GA) on
//! small dense networks, together with the instruments that check its
//! optimality, scale stability and training behaviour numerically.
//!
//! Layout:
//! - [`linalg`]: dense matrices, thin SVD, orthonormal sampling, `LGA1` I/O
//! - [`nn`]: feed-forward networks with hand-written backprop
//! - [`lora`]: adapters and the five ablation initializations
//! - [`ga_init`]: gradient estimation and end-to-end LoRA-GA initialization
//! - [`analysis`]: criterion, optimality, coverage, stability and alignment probes
//! - [`train`]: SGD/AdamW, learning-rate schedules, the training loop
//! - [`data`]: synthetic and CSV datasets
//! - [`experiment`]: config-driven runners used by the `lorga` binary

pub mod analysis;
pub mod data;
pub mod error;
pub mod experiment;
pub mod ga_init;
pub mod linalg;
pub mod lora;
pub mod nn;
pub mod train;

pub use error::{Error, Result};
pub use linalg::Matrix;
