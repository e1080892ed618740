//! Spatiotemporal mobility forecasting with quantified uncertainty.
//!
//! Regions form an urban graph whose edges mix geographic proximity with a
//! gravity term on observed intensities. A graph-convolution and LSTM head
//! predicts the next interval; a second head estimates uncertainty from the
//! similarity of layered periods (weekly, daily, closeness) and from
//! pairwise context interactions; a tanh gate recalibrates the pair.
//!
//! Training uses weak labels: the gap between a window and a corrupted
//! copy of it, and a spatiotemporal variance of the window itself.

// `!(x > 0.0)` is how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod c2uq;
pub mod checkpoint;
pub mod config;
pub mod datagen;
pub mod error;
pub mod experiment;
pub mod gmur;
pub mod graphcore;
pub mod indicators;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod plot;
pub mod predictor;
pub mod trainer;

pub use config::Config;
pub use error::{Result, StuaError};
