pub mod dataset;
pub mod error;
pub mod cli;
pub mod imageio;
pub mod pipeline;
pub mod service;
pub mod store;
pub mod synth;
pub mod workflow;

pub use whodet_core as core;
