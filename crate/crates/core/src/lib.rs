//! Multi-view probabilistic time-series forecasting.
//!
//! Each view of the data (the target history plus any auxiliary sequence,
//! static, categorical or graph features) is encoded into a Gaussian latent.
//! A stochastic similarity graph against reference points turns each latent
//! into a view-aware embedding; cross-attention weighs the views per input and
//! a decoder emits the Gaussian forecast. Training maximizes an evidence lower
//! bound with reparameterized samples.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod encoders;
pub mod error;
pub mod exec;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod noise;
pub mod pipeline;
pub mod preprocessing;
pub mod selection;
pub mod training;
pub mod vscg;

pub use checkpoint::Checkpoint;
pub use data::{Dataset, GaussianLatent, Modality, Payload, SeriesPanel, TrainingInstance, ViewData, ViewSpec};
pub use error::{CamulError, Result};
pub use exec::Execution;
pub use inference::{sample_forecasts, summarize, ForecastEnsemble, ForecastSummary, InferenceConfig, NoiseKind};
pub use model::{CamulModel, ModelConfig};
pub use pipeline::{prepare, PreparedData, SplitConfig};
pub use training::{train, TrainConfig, TrainHistory};
