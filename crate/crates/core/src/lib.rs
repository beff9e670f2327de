//! Dual-aspect self-attention transformer for remaining-useful-life
//! regression on multivariate run-to-failure data.
//!
//! The crate is `no_std` with `alloc`: a small reverse-mode autodiff engine
//! over dense `f64` matrices ([`tape`]), rectified Adam ([`optim`]),
//! multi-head attention ([`attention`]), the encoder/fusion/decoder model
//! ([`model`]), the preprocessing pipeline ([`data`]), metrics and the
//! training loop. File formats and the command-line front end live in the
//! `dast` crate.

#![no_std]

extern crate alloc;

pub mod attention;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use attention::{causal_mask, AttentionRecord, AttentionSite, Mask};
pub use data::{DatasetSplit, EngineSeries, NormalizationStats, PreparedData, WindowSample, WindowSpec};
pub use error::{Error, Result};
pub use metrics::EvalResult;
pub use model::{average_attention, positional_encoding, DastConfig, DastModel, HeadWidth, Variant};
pub use optim::{radam_step, OptimizerKind, OptimizerState};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use trainer::{evaluate, train, EpochRecord, Executor, Sequential, TrainConfig, TrainState, Trainer};
