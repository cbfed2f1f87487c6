//! Effective-learning-rate re-warming laboratory.
//!
//! Normalize-and-Project weight projection, cyclic and changepoint-triggered
//! learning-rate schedules, feature-learning metrics, and the experiment
//! runner that ties them together.

pub mod error;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod ndcore;
pub mod optim;
pub mod schedule;
pub mod tasks;
pub mod theorylab;

pub use error::{Error, Result};
