//! Koopman-regularized graph convolutional recurrent classifier for temporal
//! graphs, with post hoc explanations from dynamic mode decomposition and
//! sparse identification of neighbor-restricted dynamics.

pub mod autodiff;
pub mod data;
pub mod dmd;
pub mod error;
pub mod metrics;
pub mod model;
pub mod reduction;
pub mod sindy;

pub use error::{Error, Result};
