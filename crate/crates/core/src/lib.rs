//! Whole-body non-verbal behaviour forecasting on face, body and hand landmarks.

pub mod baselines;
pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod skeleton;
pub mod synthgen;

pub use error::{Error, Result};
