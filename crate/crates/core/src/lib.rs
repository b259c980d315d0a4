//! Decoding touched materials from finger-mounted accelerometer vibrations.
//!
//! The pipeline high-pass filters each 6-axis trial, cuts it into 150 ms bins,
//! describes every bin with 72 spectral and amplitude features, scores bins
//! with seven one-vs-rest sparse logistic regression decoders and assigns each
//! trial to the material that wins the most bins.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod signal;
pub mod stats;
pub mod synth;

pub use config::{DecoderConfig, Grouping, PipelineConfig, ProtocolConfig, Window};
pub use decoder::{DecoderEnsemble, MaterialDecoder, TrialPrediction, MATERIALS};
pub use error::{Error, Result};
pub use eval::{EvaluationReport, TrainedModels};

pub use features::{FeatureVector, StandardizationStats};
pub use signal::{BinnedSeries, Effector, Recording, TrialMeta};
