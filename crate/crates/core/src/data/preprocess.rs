use nalgebra::SymmetricEigen;

use super::{DynamicConnectome, RoiTimeSeries, GAMMA_SYMMETRY_TOL};
use crate::linalg::{ensure_finite, ensure_symmetric, symmetrize};
use crate::{Error, Matrix, Result};

pub const DEFAULT_WINDOW_LENGTH: usize = 45;
pub const DEFAULT_STRIDE: usize = 5;

/// Number of windows of `window_length` samples, `stride` apart, that fit in
/// `t_raw` samples. Zero when the series is shorter than one window.
pub fn window_count(t_raw: usize, window_length: usize, stride: usize) -> usize {
    if window_length == 0 || stride == 0 || t_raw < window_length {
        0
    } else {
        (t_raw - window_length) / stride + 1
    }
}

/// Pearson correlation matrices over sliding windows of the series.
///
/// The diagonal of every returned matrix is exactly 1. A channel with zero
/// variance inside a window is an error rather than being jittered.
pub fn sliding_window_correlations(
    series: &RoiTimeSeries,
    window_length: usize,
    stride: usize,
) -> Result<Vec<Matrix>> {
    if window_length < 2 {
        return Err(Error::InvalidInput(format!("window length must be ≥ 2, got {window_length}")));
    }
    if stride < 1 {
        return Err(Error::InvalidInput("stride must be ≥ 1".into()));
    }
    let t_raw = series.len();
    if t_raw < window_length {
        return Err(Error::InvalidInput(format!(
            "subject {}: {t_raw} samples is shorter than the window length {window_length}",
            series.subject_id
        )));
    }
    let p = series.rois();
    let count = window_count(t_raw, window_length, stride);
    let mut out = Vec::with_capacity(count);
    let mut centered = Matrix::zeros(p, window_length);
    let mut sum_sq = vec![0.0; p];
    for w in 0..count {
        let start = w * stride;
        for i in 0..p {
            let row = series.samples.row(i);
            let slice = row.columns(start, window_length);
            let mean = slice.sum() / window_length as f64;
            let peak = slice.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut ss = 0.0;
            for s in 0..window_length {
                let d = slice[s] - mean;
                centered[(i, s)] = d;
                ss += d * d;
            }
            // Treat rounding-level spread around a constant as zero variance.
            let floor = (f64::EPSILON * peak.max(f64::MIN_POSITIVE)).powi(2) * window_length as f64 * 16.0;
            if !(ss > floor) {
                return Err(Error::ZeroVariance {
                    subject: series.subject_id.clone(),
                    window: w,
                    roi: i,
                });
            }
            sum_sq[i] = ss;
        }
        let mut corr = Matrix::identity(p, p);
        for i in 0..p {
            for j in (i + 1)..p {
                let dot = centered.row(i).dot(&centered.row(j));
                let r = (dot / (sum_sq[i] * sum_sq[j]).sqrt()).clamp(-1.0, 1.0);
                corr[(i, j)] = r;
                corr[(j, i)] = r;
            }
        }
        out.push(corr);
    }
    Ok(out)
}

/// Removes the leading eigen-component: returns `Γ − λ₁ v₁ v₁ᵀ`.
///
/// When the top eigenvalue is repeated, whichever top eigenvector the
/// eigensolver returns is used.
pub fn subtract_principal_component(gamma: &Matrix) -> Result<Matrix> {
    ensure_finite(gamma, "principal component input")?;
    ensure_symmetric(gamma, GAMMA_SYMMETRY_TOL, "principal component input")?;
    let sym = symmetrize(gamma);
    let eig = SymmetricEigen::new(sym.clone());
    let (top, lambda) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::Empty("principal component input".into()))?;
    let v = eig.eigenvectors.column(top);
    let mut res = sym - (&v * v.transpose()) * lambda;
    // Keep the output exactly symmetric.
    let n = res.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (res[(i, j)] + res[(j, i)]);
            res[(i, j)] = a;
            res[(j, i)] = a;
        }
    }
    Ok(res)
}

/// Windowed correlations followed by principal-component removal.
pub fn connectome_from_series(
    series: &RoiTimeSeries,
    window_length: usize,
    stride: usize,
) -> Result<DynamicConnectome> {
    let windows = sliding_window_correlations(series, window_length, stride)?;
    let gammas = windows
        .iter()
        .map(subtract_principal_component)
        .collect::<Result<Vec<_>>>()?;
    DynamicConnectome::new(series.subject_id.clone(), gammas)
}
