//! Membership-inference auditing with hyperparameter-aware shadow models.
//!
//! The crate trains toy classifiers on a synthetic population, arranges
//! them in an `(M+1) × (M+1)` grid of (dataset, hyperparameter) cells and
//! attacks every diagonal model with LiRA, ACC-LiRA, KL-LiRA or a
//! shadow-free threshold baseline. The `stats` module turns attack scores
//! into TPR-at-low-FPR estimates, Clopper–Pearson intervals, DP upper
//! bounds and one-sided paired tests.

pub mod attacks;
pub mod error;
pub mod hpo;
pub mod models;
pub mod seed;
pub mod stats;
pub mod store;
pub mod synthdata;

pub use error::{Error, Result};
