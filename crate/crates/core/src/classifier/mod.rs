//! Soft-margin RBF SVMs: an SMO dual solver, the One-vs-One multi-class
//! wrapper with majority voting, and grid search over `(C, γ)` with
//! stratified k-fold cross-validation.

mod grid;
mod kernel;
mod multiclass;
mod smo;

pub use grid::{grid_search, grid_search_with, stratified_folds, CvCell, GridSearchConfig, GridSearchResult};
pub use kernel::{
    rbf_kernel, rbf_from_sq_dist, squared_distance, DenseSqDistances, RowSqDistances, SqDistances,
    SubsetSqDistances,
};
pub use multiclass::{
    train_multiclass, train_multiclass_indexed, train_multiclass_with, vote, IndexedModel, MultiClassModel, PairModel,
    Prediction, Preprocessing,
};
pub use smo::{solve_dual, train_binary, BinarySvmModel, DualSolution, SmoOptions};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Class label.
pub type Label = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SvmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training data for {0} holds a single class")]
    SingleClassData(String),
    #[error("SMO did not converge within {iterations} iterations ({context})")]
    NonConvergence { iterations: usize, context: String },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model format: {0}")]
    Format(String),
    #[error(transparent)]
    Pca(#[from] crate::pca::PcaError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
}

pub type Result<T> = std::result::Result<T, SvmError>;

/// Soft-margin penalty `c` and RBF width `gamma`, both > 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub c: f64,
    pub gamma: f64,
}

impl KernelParams {
    pub fn new(c: f64, gamma: f64) -> Result<Self> {
        let p = Self { c, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.c > 0.0 && self.c.is_finite() && self.gamma > 0.0 && self.gamma.is_finite() {
            Ok(())
        } else {
            Err(SvmError::InvalidParameter(format!(
                "C={} and gamma={} must be finite and positive",
                self.c, self.gamma
            )))
        }
    }
}
