//! Small dense linear-algebra helpers shared by the other modules.

use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Matrix, Result};

/// Seeded generator for an independent stream derived from `seed`.
///
/// Separate streams keep, e.g., network initialization from perturbing the
/// basis initialization when one of them changes shape.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    // Fill row by row so the draw order does not depend on storage order.
    let mut m = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Thin Q factor of a tall matrix, with column signs fixed so that diag(R) ≥ 0.
pub fn orthonormal_columns(m: &Matrix) -> Matrix {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn max_asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn ensure_square(m: &Matrix, context: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::dims(
            context,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// Errors unless `m` is square and symmetric to `tol` (scaled by max(1, max|mᵢⱼ|)).
pub fn ensure_symmetric(m: &Matrix, tol: f64, context: &str) -> Result<()> {
    ensure_square(m, context)?;
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(m);
    if asym > tol * scale {
        return Err(Error::NotSymmetric {
            context: context.to_string(),
            asymmetry: asym,
        });
    }
    Ok(())
}

pub fn ensure_finite(m: &Matrix, context: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context.to_string()))
    }
}

/// `(A + Aᵀ)/2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sorted_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &Matrix) -> f64 {
    sorted_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// `‖BᵀB − I‖_F`.
pub fn orthonormality_error(b: &Matrix) -> f64 {
    let gram = b.transpose() * b;
    (gram - Matrix::identity(b.ncols(), b.ncols())).norm()
}

/// Largest principal angle (degrees) between the column spans of two matrices
/// with orthonormal columns.
pub fn max_principal_angle_deg(a: &Matrix, b: &Matrix) -> f64 {
    let cross = a.transpose() * b;
    let sv = cross.singular_values();
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min).clamp(-1.0, 1.0);
    smallest.acos().to_degrees()
}

/// Row `t` of a matrix as an owned vector.
pub fn row_vec(m: &Matrix, t: usize) -> Vec<f64> {
    m.row(t).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_columns_are_orthonormal() {
        let mut rng = rng_stream(3, 0);
        let g = gaussian_matrix(&mut rng, 12, 4);
        let q = orthonormal_columns(&g);
        assert_eq!(q.shape(), (12, 4));
        assert!(orthonormality_error(&q) < 1e-12);
    }

    #[test]
    fn principal_angle_of_identical_spans_is_zero() {
        let mut rng = rng_stream(5, 0);
        let q = orthonormal_columns(&gaussian_matrix(&mut rng, 8, 3));
        // Same span, rotated basis.
        let rot = orthonormal_columns(&gaussian_matrix(&mut rng, 3, 3));
        assert!(max_principal_angle_deg(&q, &(&q * rot)) < 1e-5);
    }

    #[test]
    fn symmetric_check_rejects_skew() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(ensure_symmetric(&m, 1e-10, "t").is_err());
        assert!(ensure_symmetric(&symmetrize(&m), 1e-10, "t").is_ok());
    }
}
