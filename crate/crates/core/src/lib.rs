//! Two-stage linear forecasting with look-ahead augmentation.
//!
//! A first-stage linear forecaster produces an H-step forecast. Fixed-width
//! segments of that forecast are appended to the input window, one second-stage
//! model is trained per segment, the second-stage models are ranked on
//! validation MSE, and the final forecast averages the top `K*` of them, with
//! `K*` picked from prediction variance and mean pairwise correlation.
//!
//! Module map:
//! - [`series`]: series, splits, scaling, sliding windows
//! - [`linear`]: Linear/DLinear forecasters and their training
//! - [`augment`]: segment enumeration and augmented inputs
//! - [`refine`]: the second-stage model pool
//! - [`ensemble`]: top-K averaging and K selection
//! - [`metrics`]: MSE/MAE and gains
//! - [`ingest`]: CSV loading
//! - [`experiment`]: end-to-end runs from a config file, reports

pub mod augment;
mod codec;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod ingest;
pub mod linear;
mod matrix;
pub mod metrics;
pub mod refine;
pub mod series;
pub mod synth;

pub use codec::write_atomic;
pub use error::{ForecastError, Result};
pub use matrix::Matrix;
