//! Next-basket recommendation from personalized item frequencies.
//!
//! The pipeline runs [`corpus`] (ingest, filter, split) into [`recommend`]
//! (personal top frequency or TIFU-KNN, built on [`vectors`] and [`knn`]),
//! then scores the ranked lists with [`metrics`] and breaks the scores down
//! by user traits with [`fairness`]. [`tuning`] searches TIFU-KNN
//! hyperparameters on a validation split.

pub mod corpus;
pub mod error;
pub mod fairness;
pub mod knn;
pub mod metrics;
pub mod recommend;
pub mod tuning;
pub mod vectors;

pub use error::{Error, Result};
