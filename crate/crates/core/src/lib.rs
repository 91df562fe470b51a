//! Facial dynamics toolkit: a linear 3D morphable model with landmark
//! fitting, sparse texture-mapped priors, an LSTM coefficient-sequence
//! predictor, and image/landmark quality metrics.

pub mod dynpred;
pub mod error;
pub mod evalmetrics;
pub mod mmodel;
pub mod pipeline;
pub mod spmap;

pub use error::{Error, Result};
