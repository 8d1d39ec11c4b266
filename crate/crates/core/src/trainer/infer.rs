use std::borrow::Cow;

use rayon::prelude::*;

use super::ModelState;
use crate::data::{build_normalized_laplacian, DynamicConnectome, SeverityVector, Subject};
use crate::factor::{qp_build, qp_solve, BasisDictionary, LoadingSequence};
use crate::head::forward;
use crate::{Error, Matrix, Result};

/// Loadings of an unseen subject: one nonnegative QP per window, with the
/// constraint `D = B diag(c)` taken to hold exactly.
pub fn infer_loadings(connectome: &DynamicConnectome, laplacian: &Matrix, basis: &BasisDictionary) -> Result<LoadingSequence> {
    let (p, k) = (basis.p(), basis.k());
    if connectome.rois() != p {
        return Err(Error::dims(format!("ROI count of subject {}", connectome.subject_id), p, connectome.rois()));
    }
    let rows: Vec<Vec<f64>> = connectome
        .gammas
        .par_iter()
        .map(|g| {
            let qp = qp_build(basis.matrix(), g, laplacian)?;
            Ok(qp_solve(&qp)?.iter().map(|v| v.max(0.0)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(LoadingSequence::new(Matrix::from_fn(rows.len(), k, |t, j| rows[t][j])))
}

/// Output of [`predict`] together with the quantities behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: SeverityVector,
    pub loadings: Matrix,
    pub attention: Vec<f64>,
}

impl ModelState {
    /// The subject's Laplacian, imputed from training adjacencies when absent.
    pub fn laplacian_for<'a>(&self, subject: &'a Subject) -> Result<Cow<'a, Matrix>> {
        match &subject.structure {
            Some(st) => Ok(Cow::Borrowed(&st.laplacian)),
            None => {
                let adj = self.imputed_adjacency.as_ref().ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "subject {} has no DTI scan and the model has no imputation adjacency",
                        subject.id()
                    ))
                })?;
                Ok(Cow::Owned(build_normalized_laplacian(adj, subject.id())?.laplacian))
            }
        }
    }

    /// Head forward pass on given loadings, mapped back to raw score units.
    pub fn predict_from_loadings(&self, loadings: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = forward(loadings, &self.weights)?;
        Ok((self.scaling.restore(&trace.prediction), trace.attention))
    }
}

/// Severity estimate for one subject: QP loadings, then the head.
pub fn predict(subject: &Subject, model: &ModelState) -> Result<Prediction> {
    let l = model.laplacian_for(subject)?;
    let loadings = infer_loadings(&subject.connectome, &l, &model.basis)?.c();
    let (values, attention) = model.predict_from_loadings(&loadings)?;
    Ok(Prediction {
        scores: SeverityVector::observed_all(model.score_names.clone(), values)?,
        loadings,
        attention,
    })
}
