//! Post-hoc, model-agnostic uncertainty quantification for survival models.
//!
//! The crate fits survival models (regularized linear proportional hazards,
//! an MLP hazard model, and a random survival forest), attaches uncertainty
//! scores to their predictions through an anchor-based meta-model, and ships
//! the baselines, metrics, and evaluation protocols needed to compare them.

pub mod blob;
pub mod data;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod mlp;
pub mod baselines;
pub mod meta;
pub mod metrics;
pub mod models;
pub mod rf_regressor;
pub mod seed;
pub mod synth;

pub use data::{
    apply_standardization, fit_standardization, load_csv, split, standardize, write_csv,
    CsvSchema, SplitAssignment, SurvivalCurve, SurvivalDataset, SurvivalRecord, TimeGrid,
};
pub use error::{Result, SurvError};
