//! Offline return-conditioned maintenance policies for run-to-failure
//! turbofan data.

pub mod error;
pub mod labeling;
pub mod neural;
pub mod par;
pub mod policy;
pub mod regime_norm;
pub mod rul_estimator;
pub mod seeds;
pub mod simenv;
pub mod sweep_report;
pub mod trajdata;

pub use error::{Error, Result};
