//! Sliding-window object detection with whitened HOG templates.
//!
//! Detectors are mixtures of linear templates learned in closed form by
//! linear discriminant analysis: every component solves
//! `(Σ + λI) w = μ_pos − μ_neg` against background statistics gathered once,
//! offline, from generic images. Component thresholds are tuned jointly for
//! F1 with Harmony Search, and detection scores every pyramid level with
//! FFT-based cross-correlation.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, dataset
//! handling and the command line live in the `whodet` companion crate.

#![no_std]

extern crate alloc;

pub mod background;
pub mod detect;
mod error;
pub mod eval;
pub mod fft;
pub mod geom;
pub mod harmony;
pub mod hog;
pub mod image;
pub mod kmeans;
pub mod learn;
pub mod linalg;
pub mod mixture;
pub mod threshold;

pub use background::{AssembledCovariance, BackgroundStats, FeatureConfig};
pub use detect::{DetectConfig, Detection, Detector, ScoreMap};
pub use error::{Error, Result};
pub use geom::BBox;
pub use harmony::{HsOutcome, HsParams};
pub use hog::{CellGrid, FeaturePyramid, HOG_CHANNELS};
pub use image::Image;
pub use learn::{LearnParams, Sample};
pub use mixture::{Component, Mixture, Provenance, TemplateView};
pub use threshold::{BiasVector, ScoreTable};
