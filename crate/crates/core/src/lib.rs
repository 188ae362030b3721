//! Generalized difference-in-differences estimation for panel data.

pub mod clustered;
pub mod config;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod learners;
pub mod linalg;
pub mod panel;
pub mod pipeline;
pub mod simulation;
pub mod staggered;

pub use error::{GdidError, Result};
