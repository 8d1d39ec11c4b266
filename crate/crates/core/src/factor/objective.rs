use super::{scale_columns, ConstraintState};
use crate::{Error, Matrix, Result};

/// `Tr(Xᵀ L X)`: squared Frobenius norm of `X` weighted by the PSD matrix `L`.
pub fn weighted_frobenius(x: &Matrix, l: &Matrix) -> Result<f64> {
    if l.nrows() != l.ncols() || l.ncols() != x.nrows() {
        return Err(Error::dims(
            "weighted norm",
            format!("L {}x{}", x.nrows(), x.nrows()),
            format!("L {}x{}", l.nrows(), l.ncols()),
        ));
    }
    Ok((l * x).component_mul(x).sum())
}

fn check_inputs(b: &Matrix, c: &Matrix, gammas: &[Matrix], l: &Matrix) -> Result<()> {
    let (p, k) = b.shape();
    if c.ncols() != k {
        return Err(Error::dims("loadings width", k, c.ncols()));
    }
    if c.nrows() != gammas.len() {
        return Err(Error::dims("loading windows", gammas.len(), c.nrows()));
    }
    if gammas.is_empty() {
        return Err(Error::Empty("no windows".into()));
    }
    if l.shape() != (p, p) {
        return Err(Error::dims("Laplacian", format!("{p}x{p}"), format!("{:?}", l.shape())));
    }
    if let Some(g) = gammas.iter().find(|g| g.shape() != (p, p)) {
        return Err(Error::dims("correlation window", format!("{p}x{p}"), format!("{:?}", g.shape())));
    }
    Ok(())
}

/// `(1/T) Σₜ ‖Γᵗ − B diag(cᵗ) Bᵀ‖_L`.
pub fn srddl_loss(b: &Matrix, c: &Matrix, gammas: &[Matrix], l: &Matrix) -> Result<f64> {
    check_inputs(b, c, gammas, l)?;
    let mut total = 0.0;
    for (t, g) in gammas.iter().enumerate() {
        let bd = scale_columns(b, &c.row(t).transpose());
        let resid = g - bd * b.transpose();
        total += weighted_frobenius(&resid, l)?;
    }
    Ok(total / gammas.len() as f64)
}

/// Reconstruction term of the split objective, `(1/T) Σₜ ‖Γᵗ − Dᵗ Bᵀ‖_L`.
pub fn split_reconstruction_loss(b: &Matrix, d: &[Matrix], gammas: &[Matrix], l: &Matrix) -> Result<f64> {
    if d.len() != gammas.len() || gammas.is_empty() {
        return Err(Error::dims("constraint windows", gammas.len(), d.len()));
    }
    let mut total = 0.0;
    for (g, dt) in gammas.iter().zip(d) {
        if dt.shape() != b.shape() {
            return Err(Error::dims("D", format!("{:?}", b.shape()), format!("{:?}", dt.shape())));
        }
        total += weighted_frobenius(&(g - dt * b.transpose()), l)?;
    }
    Ok(total / gammas.len() as f64)
}

/// `(γ/T) Σₜ [Tr(Λᵗᵀ(Dᵗ − B diag(cᵗ))) + ½‖Dᵗ − B diag(cᵗ)‖²_F]`.
pub fn augmented_penalty(b: &Matrix, c: &Matrix, state: &ConstraintState) -> Result<f64> {
    let (p, k) = b.shape();
    let t_n = c.nrows();
    if c.ncols() != k {
        return Err(Error::dims("loadings width", k, c.ncols()));
    }
    state.check(p, k, t_n)?;
    if t_n == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for t in 0..t_n {
        let r = &state.d[t] - scale_columns(b, &c.row(t).transpose());
        total += state.lambda[t].dot(&r) + 0.5 * r.norm_squared();
    }
    Ok(state.gamma * total / t_n as f64)
}

/// Sums of `‖Dᵗ − B diag(cᵗ)‖²_F` and `‖Dᵗ‖²_F` over windows, for pooling
/// into a relative residual.
pub fn constraint_residual(b: &Matrix, c: &Matrix, state: &ConstraintState) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, d) in state.d.iter().enumerate() {
        num += (d - scale_columns(b, &c.row(t).transpose())).norm_squared();
        den += d.norm_squared();
    }
    (num, den)
}
