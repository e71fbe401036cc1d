//! Subsampled label-memorization and influence estimation.
//!
//! Models are trained on `t` random subsets of size `m` of the training set;
//! recording which examples each model saw and which train/test points it
//! classified correctly is enough to estimate, for every training example,
//! how much including it raises the probability of predicting its own label
//! (memorization) or the label of any test point (influence).

pub mod analysis;
pub mod bitset;
pub mod config;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod learners;
pub mod oracle;
pub mod seed;
pub mod trials;

pub use error::{Error, Result};
