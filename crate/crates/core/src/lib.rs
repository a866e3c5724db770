//! Cuffless blood-pressure estimation from simultaneous ECG and PPG.
//!
//! The processing chain is: [`record`] input, adaptive TQWT filtering
//! ([`tqwt`], [`preprocess`]), two-cycle [`segmentation`], the ANN-LSTM
//! [`model`], and clinical [`evaluate`] statistics. [`pipeline`] strings the
//! stages together around on-disk artifacts.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod evaluate;
pub mod fsutil;
pub mod model;
pub mod peaks;
pub mod physio;
pub mod pipeline;
pub mod preprocess;
pub mod record;
pub mod segmentation;
pub mod synth;
pub mod tqwt;

pub use error::{Error, Result};
