//! Generative-model mathematics: the Laplacian-weighted reconstruction norm,
//! the factorization loss and its augmented Lagrangian, the closed-form basis
//! and constraint updates, the loading gradient, and QP inference.

mod constraint;
mod loading;
mod objective;
mod procrustes;
mod qp;

pub use constraint::{
    d_objective, d_objective_gradient, update_constraint_dual, update_constraint_primal,
};
pub use loading::{loading_objective, loading_objective_gradient, relu, relu_mask};
pub use objective::{augmented_penalty, constraint_residual, split_reconstruction_loss, srddl_loss, weighted_frobenius};
pub use procrustes::{procrustes_target, procrustes_update};
pub use qp::{kkt_residual, qp_build, qp_solve, QP_KKT_TOL};

use serde::{Deserialize, Serialize};

use crate::linalg::{orthonormality_error, rng_stream};
use crate::{Error, Matrix, Result, Vector};

/// Tolerance on `‖BᵀB − I‖_F`.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Inputs of one subject's factorization terms.
#[derive(Debug, Clone, Copy)]
pub struct SubjectView<'a> {
    pub gammas: &'a [Matrix],
    pub laplacian: &'a Matrix,
}

/// Shared P × K basis with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisDictionary(Matrix);

impl BasisDictionary {
    pub fn new(b: Matrix) -> Result<Self> {
        let err = orthonormality_error(&b);
        if !(err <= ORTHONORMALITY_TOL) {
            return Err(Error::InvalidInput(format!(
                "basis columns are not orthonormal (‖BᵀB − I‖_F = {err:e})"
            )));
        }
        Ok(Self(b))
    }

    /// Orthonormalized Gaussian draw.
    pub fn random(p: usize, k: usize, seed: u64, stream: u64) -> Result<Self> {
        if k == 0 || k > p {
            return Err(Error::InvalidInput(format!("K = {k} must lie in [1, P = {p}]")));
        }
        let g = crate::linalg::gaussian_matrix(&mut rng_stream(seed, stream), p, k);
        Self::new(crate::linalg::orthonormal_columns(&g))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }
}

/// Pre-activation loadings `ĉ` (T × K); the loadings are `c = max(ĉ, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadingSequence {
    pub c_hat: Matrix,
}

impl LoadingSequence {
    pub fn new(c_hat: Matrix) -> Self {
        Self { c_hat }
    }

    pub fn c(&self) -> Matrix {
        relu(&self.c_hat)
    }

    pub fn len(&self) -> usize {
        self.c_hat.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.c_hat.nrows() == 0
    }

    pub fn k(&self) -> usize {
        self.c_hat.ncols()
    }
}

/// Auxiliary primal `Dᵗ ≈ B diag(cᵗ)` and dual `Λᵗ` variables for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintState {
    pub d: Vec<Matrix>,
    pub lambda: Vec<Matrix>,
    pub gamma: f64,
}

impl ConstraintState {
    /// `D = B diag(c)`, `Λ = 0`.
    pub fn feasible(b: &Matrix, c: &Matrix, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidInput(format!("γ must be positive, got {gamma}")));
        }
        let d = (0..c.nrows()).map(|t| scale_columns(b, &c.row(t).transpose())).collect();
        let lambda = vec![Matrix::zeros(b.nrows(), b.ncols()); c.nrows()];
        Ok(Self { d, lambda, gamma })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub(crate) fn check(&self, p: usize, k: usize, t: usize) -> Result<()> {
        if self.d.len() != t || self.lambda.len() != t {
            return Err(Error::dims("constraint state windows", t, self.d.len().min(self.lambda.len())));
        }
        for m in self.d.iter().chain(&self.lambda) {
            if m.shape() != (p, k) {
                return Err(Error::dims("constraint state", format!("{p}x{k}"), format!("{:?}", m.shape())));
            }
        }
        Ok(())
    }
}

/// `½ cᵀHc + fᵀc` subject to `A c ≤ b` with `A = −I`, `b = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: Matrix,
    pub f: Vector,
    pub a_ineq: Matrix,
    pub b_ineq: Vector,
}

/// `B diag(c)`: column `k` of `B` scaled by `c[k]`.
pub fn scale_columns(b: &Matrix, c: &Vector) -> Matrix {
    let mut out = b.clone();
    for (k, mut col) in out.column_iter_mut().enumerate() {
        col *= c[k];
    }
    out
}

fn default_k() -> usize {
    15
}

/// Model and optimizer settings.
///
/// Defaults: K = 15, λ = 3, γ = 1, width 40, network ADAM at 1e-4 decayed
/// by 0.95 every 5 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    #[serde(default = "default_k")]
    pub k: usize,
    /// Weight of the network loss against the factorization loss.
    pub lambda: f64,
    /// Augmented Lagrangian penalty weight.
    pub gamma: f64,
    /// Dual ascent step; `None` means "equal to γ".
    pub dual_step: Option<f64>,
    pub max_outer: usize,
    pub loading_epochs: usize,
    pub network_epochs: usize,
    pub primal_dual_rounds: usize,
    /// Relative change of the augmented objective that counts as converged.
    pub tol: f64,
    /// Relative constraint residual `‖D − B diag(c)‖_F / ‖D‖_F` required at convergence.
    pub residual_tol: f64,
    pub loading_lr: f64,
    pub network_lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub hidden: usize,
    /// Upper end of the uniform draw used to initialize `ĉ`.
    pub init_loading_max: f64,
    /// Standardize each score with training mean/std before the network sees it.
    pub standardize_scores: bool,
    /// Complete a rank-deficient Procrustes solution instead of failing.
    pub complete_rank_deficient_basis: bool,
    pub seed: u64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            k: 15,
            lambda: 3.0,
            gamma: 1.0,
            dual_step: None,
            max_outer: 30,
            loading_epochs: 10,
            network_epochs: 10,
            primal_dual_rounds: 20,
            tol: 1e-4,
            residual_tol: 1e-3,
            loading_lr: 0.05,
            network_lr: 1e-4,
            lr_decay: 0.95,
            lr_decay_every: 5,
            hidden: 40,
            init_loading_max: 0.1,
            standardize_scores: true,
            complete_rank_deficient_basis: false,
            seed: 0,
        }
    }
}

impl Hyperparameters {
    pub fn dual_step(&self) -> f64 {
        self.dual_step.unwrap_or(self.gamma)
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.k == 0 || self.k > p {
            return bad(format!("K = {} must lie in [1, P = {p}]", self.k));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("λ must be ≥ 0, got {}", self.lambda));
        }
        if !(self.gamma > 0.0) {
            return bad(format!("γ must be > 0, got {}", self.gamma));
        }
        if !(self.dual_step() > 0.0) {
            return bad(format!("dual step must be > 0, got {}", self.dual_step()));
        }
        if !(self.loading_lr > 0.0 && self.network_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_decay_every == 0 {
            return bad("learning-rate decay must be in (0, 1] with a positive period".into());
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive".into());
        }
        if !(self.tol >= 0.0 && self.residual_tol > 0.0 && self.init_loading_max > 0.0) {
            return bad("tolerances and the initial loading range must be positive".into());
        }
        Ok(())
    }
}
