//! Ratio-of-mediator-probability weighting (RMPW) for natural direct and
//! indirect effects of a binary treatment through a binary mediator.
//!
//! The pipeline is: [`data`] → [`propensity`] → [`weights`] →
//! [`estimator`]. [`simulation`] generates data with known potential
//! outcomes and is used to check the estimators end to end.

pub mod cli;
pub mod data;
pub mod design;
pub mod error;
pub mod glm;
pub mod linalg;
pub mod estimator;
pub mod propensity;
pub mod rng;
pub mod simulation;
pub mod stacked;
pub mod stats;
pub mod weights;

pub use error::{Error, ErrorCategory, Result};
