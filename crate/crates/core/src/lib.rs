//! Structurally-regularized dynamic dictionary learning (sr-DDL) coupled to an
//! LSTM-attention regression head.
//!
//! Dynamic correlation matrices `Γᵗₙ` are factored as `B diag(cᵗₙ) Bᵀ` under a
//! Laplacian-weighted reconstruction norm, with a shared orthonormal basis `B`
//! and nonnegative per-subject loadings `cᵗₙ`. The loadings feed a two layer
//! LSTM whose per-step estimates are pooled by a learned temporal attention to
//! predict a vector of severity scores. All three blocks are fit jointly by
//! alternating minimization of an augmented Lagrangian.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`data`] | windowed correlations, Laplacians, imputation, synthetic cohorts, cohort I/O |
//! | [`factor`] | weighted norm, losses, Procrustes, constraint updates, loading gradient, QP |
//! | [`head`] | LSTM-ANN forward/backward, masked loss, ADAM |
//! | [`trainer`] | joint fit, inference, checkpoints, cross-validation |
//! | [`eval`] | MAE / MI metrics and the PCA and decoupled baselines |

pub mod data;
pub mod error;
pub mod eval;
pub mod factor;
pub mod head;
pub mod linalg;
pub mod trainer;

pub use error::{Error, Result};

pub use data::{
    Cohort, DynamicConnectome, RoiTimeSeries, SeverityVector, StructuralLaplacian, Subject,
    SynthConfig,
};
pub use factor::{BasisDictionary, ConstraintState, Hyperparameters, LoadingSequence, QpProblem};
pub use head::{AdamState, ForwardTrace, NetworkWeights};
pub use trainer::{FoldAssignment, ModelState};

/// Dense row/column matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type Vector = nalgebra::DVector<f64>;
