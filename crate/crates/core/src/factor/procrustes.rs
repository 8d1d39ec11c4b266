use super::{scale_columns, BasisDictionary, ConstraintState, SubjectView};
use crate::{Error, Matrix, Result};

/// Singular values below this fraction of the largest make the target rank deficient.
const RANK_TOL: f64 = 1e-10;

/// Target `M` whose polar factor maximizes the basis terms of the augmented
/// objective:
///
/// `M = Σₙ (1/Tₙ) Σₜ (ΓL + LΓ) D + γ D diag(c) + γ Λ diag(c)`.
pub fn procrustes_target(
    subjects: &[SubjectView<'_>],
    loadings: &[Matrix],
    states: &[ConstraintState],
) -> Result<Matrix> {
    let first = states
        .first()
        .and_then(|s| s.d.first())
        .ok_or_else(|| Error::Empty("Procrustes target needs at least one subject and window".into()))?;
    if subjects.len() != loadings.len() || subjects.len() != states.len() {
        return Err(Error::dims("subjects / loadings / states", subjects.len(), loadings.len().min(states.len())));
    }
    let (p, k) = first.shape();
    let mut m = Matrix::zeros(p, k);
    for ((view, c), state) in subjects.iter().zip(loadings).zip(states) {
        let t_n = view.gammas.len();
        state.check(p, k, t_n)?;
        if c.shape() != (t_n, k) {
            return Err(Error::dims("loadings", format!("{t_n}x{k}"), format!("{:?}", c.shape())));
        }
        let l = view.laplacian;
        let mut acc = Matrix::zeros(p, k);
        for (t, g) in view.gammas.iter().enumerate() {
            let gl = g * l;
            let sym = &gl + gl.transpose();
            let ct = c.row(t).transpose();
            acc += &sym * &state.d[t];
            acc += scale_columns(&(&state.d[t] + &state.lambda[t]), &ct) * state.gamma;
        }
        m += acc / t_n as f64;
    }
    Ok(m)
}

/// Orthonormal `B = U Vᵀ` from the thin SVD `M = U S Vᵀ`, the maximizer of
/// `Tr(BᵀM)` over matrices with orthonormal columns.
///
/// A rank-deficient `M` has no unique maximizer. It is rejected unless
/// `complete` is set, in which case the missing left singular directions are
/// filled with an arbitrary orthonormal completion.
pub fn procrustes_update(m: &Matrix, complete: bool) -> Result<BasisDictionary> {
    let (p, k) = m.shape();
    if k == 0 || k > p {
        return Err(Error::dims("Procrustes target", "P ≥ K ≥ 1", format!("{p}x{k}")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Procrustes target".into()));
    }
    let svd = m.clone().svd(true, true);
    let mut u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma = &svd.singular_values;
    let s_max = sigma.max();
    let s_min = sigma.min();
    let ratio = if s_max > 0.0 { s_min / s_max } else { 0.0 };
    if ratio < RANK_TOL {
        if !complete {
            return Err(Error::RankDeficient { ratio });
        }
        log::warn!("rank-deficient Procrustes target (σ_min/σ_max = {ratio:e}); completing basis arbitrarily");
        let keep: Vec<bool> = sigma.iter().map(|s| s_max > 0.0 && *s >= RANK_TOL * s_max).collect();
        complete_columns(&mut u, &keep);
    }
    let b = u * v_t;
    BasisDictionary::new(b)
}

/// Replaces the columns of `u` not flagged in `keep` with unit vectors
/// orthogonal to every other column (Gram–Schmidt over the standard basis).
fn complete_columns(u: &mut Matrix, keep: &[bool]) {
    let p = u.nrows();
    let mut basis: Vec<nalgebra::DVector<f64>> = keep
        .iter()
        .enumerate()
        .filter(|(_, k)| **k)
        .map(|(j, _)| u.column(j).into_owned())
        .collect();
    let mut candidate = 0;
    for j in 0..keep.len() {
        if keep[j] {
            continue;
        }
        loop {
            let mut v = nalgebra::DVector::zeros(p);
            v[candidate % p] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for q in &basis {
                    let proj = q.dot(&v);
                    v -= q * proj;
                }
            }
            let n = v.norm();
            if n > 1e-6 {
                v /= n;
                u.set_column(j, &v);
                basis.push(v);
                break;
            }
        }
    }
}
