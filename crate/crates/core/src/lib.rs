//! CPU convolutional network training and soft-voting ensembles for
//! FER-2013 facial expression recognition.
//!
//! - [`tensor`]: dense row-major tensors, GEMM and reductions.
//! - [`layers`]: forward/backward kernels for convolution, batch norm,
//!   ReLU, max pooling, dropout, dense layers and the softmax loss.
//! - [`model`]: the baseline and five-layer architectures.
//! - [`train`]: SGD with plateau learning-rate decay, early stopping,
//!   evaluation metrics and checkpoints.
//! - [`data`]: FER-2013 CSV ingestion and preprocessing.
//! - [`ensemble`]: probability files and soft voting.
//! - [`cli`]: the `fercnn` command.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod layers;
pub mod model;
mod numfmt;
pub mod tensor;
pub mod tensorfile;
pub mod train;

pub use cli::cli_dispatch;
pub use error::{Error, Result};
