use super::{objective::srddl_loss, scale_columns, ConstraintState};
use crate::{Error, Matrix, Result};

pub fn relu(m: &Matrix) -> Matrix {
    m.map(|v| v.max(0.0))
}

/// 1 where the pre-activation is strictly positive, else 0 (subgradient 0 at the kink).
pub fn relu_mask(m: &Matrix) -> Matrix {
    m.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

fn check(c_hat: &Matrix, b: &Matrix, state: &ConstraintState, gammas: &[Matrix], l: &Matrix) -> Result<()> {
    let (p, k) = b.shape();
    if c_hat.ncols() != k || c_hat.nrows() != gammas.len() {
        return Err(Error::dims(
            "pre-activation loadings",
            format!("{}x{k}", gammas.len()),
            format!("{:?}", c_hat.shape()),
        ));
    }
    if l.shape() != (p, p) {
        return Err(Error::dims("Laplacian", format!("{p}x{p}"), format!("{:?}", l.shape())));
    }
    state.check(p, k, gammas.len())
}

/// Parametric part of the per-subject loading objective, as a function of
/// the pre-activation `ĉ`:
///
/// `(1/T) Σₜ ‖Γᵗ − B diag(cᵗ) Bᵀ‖_L + γ[Tr(Λᵗᵀ Rᵗ) + ½‖Rᵗ‖²_F]`,
/// with `c = ReLU(ĉ)` and `Rᵗ = Dᵗ − B diag(cᵗ)`.
pub fn loading_objective(
    c_hat: &Matrix,
    b: &Matrix,
    state: &ConstraintState,
    gammas: &[Matrix],
    l: &Matrix,
) -> Result<f64> {
    check(c_hat, b, state, gammas, l)?;
    let c = relu(c_hat);
    let recon = srddl_loss(b, &c, gammas, l)?;
    Ok(recon + super::objective::augmented_penalty(b, &c, state)?)
}

/// Gradient of [`loading_objective`] with respect to `ĉ` (T × K).
///
/// Per window and atom: `(1/T)[−2 (X bₖ)·(L bₖ) − γ bₖ·(Λₖ + Rₖ)]` with
/// `X = Γ − B diag(c) Bᵀ`, masked by the ReLU subgradient.
pub fn loading_objective_gradient(
    c_hat: &Matrix,
    b: &Matrix,
    state: &ConstraintState,
    gammas: &[Matrix],
    l: &Matrix,
) -> Result<Matrix> {
    check(c_hat, b, state, gammas, l)?;
    let (t_n, k) = c_hat.shape();
    let c = relu(c_hat);
    let lb = l * b;
    let btb = b.transpose() * b;
    let gamma = state.gamma;
    let mut grad = Matrix::zeros(t_n, k);
    for (t, g) in gammas.iter().enumerate() {
        let ct = c.row(t).transpose();
        // X B = ΓB − B diag(c) BᵀB
        let xb = g * b - scale_columns(b, &ct) * &btb;
        let r = &state.d[t] - scale_columns(b, &ct);
        let pull = &state.lambda[t] + r;
        for j in 0..k {
            if c_hat[(t, j)] <= 0.0 {
                continue;
            }
            let recon = -2.0 * xb.column(j).dot(&lb.column(j));
            let penalty = -gamma * b.column(j).dot(&pull.column(j));
            grad[(t, j)] = (recon + penalty) / t_n as f64;
        }
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loading gradient".into()));
    }
    Ok(grad)
}
