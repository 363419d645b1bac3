//! Miniature extractive question answering lab.
//!
//! The crate provides a tape-based autodiff engine, a small LSTM reader with
//! an optional query semantic calibration module, a deterministic synthetic
//! corpus generator, a SQuAD-format loader, and a training / evaluation
//! harness with paraphrase-consistency metrics.

#![forbid(unsafe_code)]

pub mod ablate;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pca;
pub mod qlsc;
pub mod rng;
pub mod squad;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use metrics::MetricsReport;
pub use model::{ModelConfig, QAModel, Stage};
pub use nn::{EmbeddingTable, LinearLayer, LstmEncoder, Param};
pub use qlsc::{QlscConfig, QlscParams};
pub use rng::SplitMix64;
pub use tensor::{Tape, TensorId};
pub use train::TrainConfig;
