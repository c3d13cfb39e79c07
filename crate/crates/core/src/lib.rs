//! Multiple-attention network for aspect-level sentiment analysis of
//! reviews that carry star ratings but no aspect-term tags.
//!
//! The crate is layered bottom-up: [`tensor`] and [`autodiff`] provide a
//! small reverse-mode engine; [`embedding`], [`recurrent`] and
//! [`attention`] build the encoder; [`model`] wires the heads and the
//! objective; [`data`] turns rated reviews into batches; [`train`],
//! [`optim`] and [`metrics`] fit and score models; [`explain`] renders
//! attention heatmaps.

pub mod ablation;
pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod embedding;
pub mod error;
pub mod exec;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod recurrent;
pub mod report;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{ManError, Result};
pub use exec::Execution;
pub use tensor::Tensor;
