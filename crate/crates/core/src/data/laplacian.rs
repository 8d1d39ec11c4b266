use super::StructuralLaplacian;
use crate::linalg::ensure_square;
use crate::{Error, Matrix, Result};

/// Checks that `adjacency` is square, symmetric and binary. The diagonal is
/// not inspected; self-loops are dropped when the Laplacian is built.
pub fn validate_adjacency(adjacency: &Matrix) -> Result<()> {
    ensure_square(adjacency, "adjacency")?;
    let p = adjacency.nrows();
    for i in 0..p {
        for j in 0..p {
            let a = adjacency[(i, j)];
            if a != 0.0 && a != 1.0 {
                return Err(Error::NonBinaryAdjacency { row: i, col: j, value: a });
            }
            if j > i && a != adjacency[(j, i)] {
                return Err(Error::NotSymmetric {
                    context: format!("adjacency entry ({i}, {j})"),
                    asymmetry: 1.0,
                });
            }
        }
    }
    Ok(())
}

fn without_self_loops(adjacency: &Matrix) -> Matrix {
    let mut a = adjacency.clone();
    a.fill_diagonal(0.0);
    a
}

/// `L = I − D^{-1/2} A D^{-1/2}` on nodes with nonzero degree.
///
/// Rows and columns of isolated nodes are left at zero, so their
/// reconstruction error carries no weight.
pub fn build_normalized_laplacian(adjacency: &Matrix, subject_id: &str) -> Result<StructuralLaplacian> {
    validate_adjacency(adjacency)?;
    let a = without_self_loops(adjacency);
    let p = a.nrows();
    let degree: Vec<f64> = (0..p).map(|i| a.row(i).sum()).collect();
    let isolated = degree.iter().filter(|d| **d == 0.0).count();
    if isolated > 0 {
        log::debug!("subject {subject_id}: {isolated} of {p} nodes are isolated; their Laplacian rows are zero");
    }
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut l = Matrix::zeros(p, p);
    for i in 0..p {
        if degree[i] > 0.0 {
            l[(i, i)] = 1.0;
        }
        for j in 0..p {
            if a[(i, j)] != 0.0 {
                l[(i, j)] -= inv_sqrt[i] * a[(i, j)] * inv_sqrt[j];
            }
        }
    }
    Ok(StructuralLaplacian {
        subject_id: subject_id.to_string(),
        laplacian: l,
        adjacency: a,
        imputed: false,
    })
}

/// Placeholder structure whose Laplacian is the identity (plain Frobenius
/// weighting). The stored adjacency is empty.
pub fn identity_structure(subject_id: &str, p: usize) -> StructuralLaplacian {
    StructuralLaplacian {
        subject_id: subject_id.to_string(),
        laplacian: Matrix::identity(p, p),
        adjacency: Matrix::zeros(p, p),
        imputed: false,
    }
}

/// Elementwise majority vote over training adjacencies; an edge present in
/// exactly half of them is kept.
pub fn impute_adjacency(training: &[Matrix]) -> Result<Matrix> {
    let first = training
        .first()
        .ok_or_else(|| Error::Empty("no training adjacencies to impute from".into()))?;
    let p = first.nrows();
    let mut votes = Matrix::zeros(p, p);
    for a in training {
        validate_adjacency(a)?;
        if a.shape() != (p, p) {
            return Err(Error::dims("training adjacency", format!("{p}x{p}"), format!("{:?}", a.shape())));
        }
        votes += a;
    }
    let n = training.len() as f64;
    let mut out = votes.map(|v| if 2.0 * v >= n { 1.0 } else { 0.0 });
    out.fill_diagonal(0.0);
    Ok(out)
}
