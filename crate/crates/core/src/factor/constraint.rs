use super::{scale_columns, ConstraintState};
use crate::{Error, Matrix, Result};

fn check(state: &ConstraintState, b: &Matrix, c: &Matrix) -> Result<()> {
    let (p, k) = b.shape();
    if c.ncols() != k {
        return Err(Error::dims("loadings width", k, c.ncols()));
    }
    state.check(p, k, c.nrows())
}

/// Closed-form minimizer of the augmented objective over each `Dᵗ`.
///
/// Setting the `D`-gradient of
/// `‖Γ − DBᵀ‖_L + γ[Tr(Λᵀ(D − B diag c)) + ½‖D − B diag c‖²_F]` to zero gives
/// `(2L + γI) D = 2LΓB − γΛ + γB diag(c)`, which is solved with one Cholesky
/// factorization per subject (`2L + γI` is positive definite for γ > 0).
pub fn update_constraint_primal(
    state: &ConstraintState,
    b: &Matrix,
    c: &Matrix,
    gammas: &[Matrix],
    l: &Matrix,
) -> Result<Vec<Matrix>> {
    check(state, b, c)?;
    let gamma = state.gamma;
    if !(gamma > 0.0) {
        return Err(Error::InvalidInput(format!("γ must be positive, got {gamma}")));
    }
    if gammas.len() != c.nrows() {
        return Err(Error::dims("correlation windows", c.nrows(), gammas.len()));
    }
    let p = b.nrows();
    if l.shape() != (p, p) {
        return Err(Error::dims("Laplacian", format!("{p}x{p}"), format!("{:?}", l.shape())));
    }
    let system = l * 2.0 + Matrix::identity(p, p) * gamma;
    let chol = system
        .cholesky()
        .ok_or_else(|| Error::NonFinite("2L + γI is not positive definite".into()))?;
    let lb2 = l * 2.0;
    let mut out = Vec::with_capacity(gammas.len());
    for (t, g) in gammas.iter().enumerate() {
        let rhs = &lb2 * (g * b) - &state.lambda[t] * gamma
            + scale_columns(b, &c.row(t).transpose()) * gamma;
        let d = chol.solve(&rhs);
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("D update at window {t}")));
        }
        out.push(d);
    }
    Ok(out)
}

/// Dual ascent `Λ ← Λ + step·(D − B diag(c))`.
pub fn update_constraint_dual(state: &ConstraintState, b: &Matrix, c: &Matrix, dual_step: f64) -> Result<Vec<Matrix>> {
    check(state, b, c)?;
    if !(dual_step >= 0.0) {
        return Err(Error::InvalidInput(format!("dual step must be ≥ 0, got {dual_step}")));
    }
    Ok(state
        .lambda
        .iter()
        .zip(&state.d)
        .enumerate()
        .map(|(t, (lam, d))| lam + (d - scale_columns(b, &c.row(t).transpose())) * dual_step)
        .collect())
}

/// Terms of the augmented objective that depend on window `t`'s `D`:
/// `(1/T)[‖Γ − DBᵀ‖_L + γ(Tr(Λᵀ(D − B diag c)) + ½‖D − B diag c‖²_F)]`.
#[allow(clippy::too_many_arguments)]
pub fn d_objective(d: &Matrix, b: &Matrix, c_t: &nalgebra::DVector<f64>, lambda: &Matrix, gamma: f64, g: &Matrix, l: &Matrix, t_n: usize) -> f64 {
    let x = g - d * b.transpose();
    let r = d - scale_columns(b, c_t);
    ((l * &x).component_mul(&x).sum() + gamma * (lambda.dot(&r) + 0.5 * r.norm_squared())) / t_n as f64
}

/// Gradient of [`d_objective`] with respect to `D`:
/// `(1/T)[−2L(Γ − DBᵀ)B + γ(Λ + D − B diag c)]`.
#[allow(clippy::too_many_arguments)]
pub fn d_objective_gradient(d: &Matrix, b: &Matrix, c_t: &nalgebra::DVector<f64>, lambda: &Matrix, gamma: f64, g: &Matrix, l: &Matrix, t_n: usize) -> Matrix {
    let x = g - d * b.transpose();
    let r = d - scale_columns(b, c_t);
    ((l * x * b) * -2.0 + (lambda + r) * gamma) / t_n as f64
}
