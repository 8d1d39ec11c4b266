//! Nonnegative QP for loading inference on unseen subjects.

use nalgebra::SymmetricEigen;

use super::QpProblem;
use crate::linalg::{ensure_symmetric, symmetrize};
use crate::{Error, Matrix, Result, Vector};

/// KKT residual a returned solution is guaranteed to meet.
pub const QP_KKT_TOL: f64 = 1e-6;

/// `H = 2 BᵀL̄B`, `f = −diag(Bᵀ(Γ̄L̄ + L̄Γ̄)B)`, `A = −I`, `b = 0`.
pub fn qp_build(b: &Matrix, gamma_bar: &Matrix, l_bar: &Matrix) -> Result<QpProblem> {
    let (p, k) = b.shape();
    for (name, m) in [("Γ̄", gamma_bar), ("L̄", l_bar)] {
        if m.shape() != (p, p) {
            return Err(Error::dims(format!("QP {name}"), format!("{p}x{p}"), format!("{:?}", m.shape())));
        }
    }
    ensure_symmetric(l_bar, 1e-10, "QP Laplacian")?;
    let lb = l_bar * b;
    let h = symmetrize(&(b.transpose() * &lb)) * 2.0;
    // diag(Bᵀ(ΓL + LΓ)B)ₖ = 2 (Γbₖ)·(Lbₖ) for symmetric Γ and L.
    let gb = gamma_bar * b;
    let f = Vector::from_fn(k, |j, _| -(gb.column(j).dot(&lb.column(j)) + lb.column(j).dot(&gb.column(j))));
    Ok(QpProblem {
        h,
        f,
        a_ineq: -Matrix::identity(k, k),
        b_ineq: Vector::zeros(k),
    })
}

/// Largest violation among feasibility (`x ≥ 0`), dual feasibility
/// (`Hx + f ≥ 0`), complementarity (`xᵢ (Hx + f)ᵢ = 0`) and the natural
/// residual `min(xᵢ, (Hx + f)ᵢ)`.
pub fn kkt_residual(problem: &QpProblem, x: &Vector) -> f64 {
    let g = &problem.h * x + &problem.f;
    x.iter()
        .zip(g.iter())
        .map(|(&xi, &gi)| {
            (-xi).max(0.0)
                .max((-gi).max(0.0))
                .max((xi * gi).abs())
                .max(xi.min(gi).abs())
        })
        .fold(0.0, f64::max)
}

enum Step {
    /// Full Newton step reaching the minimizer on the free face.
    Newton(Vector),
    /// Zero-curvature descent direction; objective unbounded along it until a bound blocks.
    Ray(Vector),
}

/// Step for `min ½pᵀHp + gᵀp` restricted to the free coordinates.
fn free_face_step(h: &Matrix, g: &Vector, scale: f64) -> Step {
    let eig = SymmetricEigen::new(h.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let cut = 1e-12 * top.max(scale * 1e-300);
    let q = &eig.eigenvectors;
    let coeffs = q.transpose() * g;
    let mut newton = Vector::zeros(g.len());
    let mut null_part = Vector::zeros(g.len());
    for (i, lam) in eig.eigenvalues.iter().enumerate() {
        let col = q.column(i);
        if *lam > cut {
            newton -= col * (coeffs[i] / lam);
        } else {
            null_part += col * coeffs[i];
        }
    }
    if null_part.norm() > 1e-12 * scale {
        Step::Ray(-null_part)
    } else {
        Step::Newton(newton)
    }
}

/// Solves `min ½ cᵀHc + fᵀc` subject to `c ≥ 0` with a primal active-set
/// method. Handles singular (PSD) `H`; an objective unbounded below is an
/// error.
pub fn qp_solve(problem: &QpProblem) -> Result<Vector> {
    let k = problem.f.len();
    if problem.h.shape() != (k, k) {
        return Err(Error::dims("QP Hessian", format!("{k}x{k}"), format!("{:?}", problem.h.shape())));
    }
    if problem.h.iter().chain(problem.f.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("QP data".into()));
    }
    ensure_symmetric(&problem.h, 1e-10, "QP Hessian")?;
    let h = symmetrize(&problem.h);
    let f = &problem.f;
    let scale = h.amax().max(f.amax()).max(1.0);
    let release_tol = 1e-13 * scale;

    let mut x = Vector::zeros(k);
    let mut free = vec![false; k];
    let max_iter = 20 * (k + 1) * (k + 1);
    for _ in 0..max_iter {
        let idx: Vec<usize> = (0..k).filter(|&i| free[i]).collect();
        if !idx.is_empty() {
            let n = idx.len();
            let hff = Matrix::from_fn(n, n, |a, b| h[(idx[a], idx[b])]);
            let grad = &h * &x + f;
            let gf = Vector::from_fn(n, |a, _| grad[idx[a]]);
            let (dir, is_ray) = match free_face_step(&hff, &gf, scale) {
                Step::Newton(p) => (p, false),
                Step::Ray(d) => (d, true),
            };
            // Ratio test against the bounds.
            let mut alpha = if is_ray { f64::INFINITY } else { 1.0 };
            let mut blocking = None;
            for (a, &i) in idx.iter().enumerate() {
                if dir[a] < 0.0 {
                    let ratio = x[i] / -dir[a];
                    if ratio < alpha {
                        alpha = ratio;
                        blocking = Some(i);
                    }
                }
            }
            if alpha.is_infinite() {
                return Err(Error::QpUnbounded);
            }
            for (a, &i) in idx.iter().enumerate() {
                x[i] = (x[i] + alpha * dir[a]).max(0.0);
            }
            if let Some(i) = blocking {
                x[i] = 0.0;
                free[i] = false;
                continue;
            }
            if is_ray {
                continue;
            }
        }
        // Stationary on the current face: release the most violated bound.
        let grad = &h * &x + f;
        let candidate = (0..k)
            .filter(|&i| !free[i] && grad[i] < -release_tol)
            .min_by(|&a, &b| grad[a].total_cmp(&grad[b]));
        match candidate {
            Some(i) => free[i] = true,
            None => {
                let res = kkt_residual(problem, &x);
                if res > QP_KKT_TOL * scale {
                    return Err(Error::QpNotConverged {
                        iterations: max_iter,
                        residual: res,
                    });
                }
                return Ok(x);
            }
        }
    }
    Err(Error::QpNotConverged {
        iterations: max_iter,
        residual: kkt_residual(problem, &x),
    })
}
