//! Blind detection of human-mimicked speech.
//!
//! WAV files are decoded and resampled ([`audio`]), described by 26
//! spectral and temporal features ([`features`], built on [`dsp`]),
//! standardized and split ([`dataset`]), classified by a small dense
//! network ([`net`]) and scored with confusion-matrix rates, ROC, AUC and
//! EER ([`metrics`]). [`cli`] wires the stages into the `mimic-audit`
//! binary.

pub mod audio;
pub mod cli;
pub mod dataset;
pub mod dsp;
pub mod features;
pub mod metrics;
pub mod net;
pub mod pipeline;

pub use audio::AudioClip;
pub use dataset::{DatasetManifest, Label, LabeledSample, Scaler, SplitConfig};
pub use features::FeatureVector;
pub use metrics::{ConfusionMatrix, MetricsReport, RocCurve};
pub use net::{MlpModel, TrainConfig, TrainHistory};
