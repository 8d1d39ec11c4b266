//! Cohort ingestion, synthesis and preprocessing.
//!
//! A cohort holds, per subject, a sequence of windowed correlation residual
//! matrices, an optional structural Laplacian (absent when no DTI scan is
//! available) and a partially observed severity vector.

mod io;
mod laplacian;
mod preprocess;
mod synth;

use std::collections::HashSet;

pub use io::{load_cohort, read_matrix_csv, save_cohort, write_matrix_csv, Manifest, SubjectEntry};
pub use laplacian::{
    build_normalized_laplacian, identity_structure, impute_adjacency, validate_adjacency,
};
pub use preprocess::{
    connectome_from_series, sliding_window_correlations, subtract_principal_component,
    window_count, DEFAULT_STRIDE, DEFAULT_WINDOW_LENGTH,
};
pub use synth::{generate_synthetic_cohort, LaplacianMode, SynthConfig, SynthTruth};

use crate::linalg::{ensure_finite, ensure_symmetric, min_eigenvalue};
use crate::{Error, Matrix, Result};

/// Symmetry tolerance for correlation residual matrices.
pub const GAMMA_SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue accepted for a correlation residual matrix.
pub const GAMMA_PSD_TOL: f64 = -1e-8;

/// Raw ROI signals for one subject, one row per ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiTimeSeries {
    pub subject_id: String,
    /// P × T_raw.
    pub samples: Matrix,
    /// Seconds between samples; carried as metadata only.
    pub repetition_interval: f64,
}

impl RoiTimeSeries {
    pub fn new(subject_id: impl Into<String>, samples: Matrix, repetition_interval: f64) -> Result<Self> {
        let subject_id = subject_id.into();
        if samples.nrows() < 2 {
            return Err(Error::InvalidInput(format!(
                "subject {subject_id}: need at least 2 ROIs, got {}",
                samples.nrows()
            )));
        }
        ensure_finite(&samples, &format!("time series of subject {subject_id}"))?;
        Ok(Self {
            subject_id,
            samples,
            repetition_interval,
        })
    }

    pub fn rois(&self) -> usize {
        self.samples.nrows()
    }

    pub fn len(&self) -> usize {
        self.samples.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.ncols() == 0
    }
}

/// Per-subject sequence of P × P correlation residual matrices `Γᵗ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicConnectome {
    pub subject_id: String,
    pub gammas: Vec<Matrix>,
}

impl DynamicConnectome {
    /// Validates symmetry and positive semi-definiteness of every window.
    pub fn new(subject_id: impl Into<String>, gammas: Vec<Matrix>) -> Result<Self> {
        let subject_id = subject_id.into();
        if gammas.is_empty() {
            return Err(Error::Empty(format!("connectome of subject {subject_id}")));
        }
        let p = gammas[0].nrows();
        for (t, g) in gammas.iter().enumerate() {
            let ctx = format!("subject {subject_id}, window {t}");
            if g.nrows() != p || g.ncols() != p {
                return Err(Error::dims(ctx, format!("{p}x{p}"), format!("{}x{}", g.nrows(), g.ncols())));
            }
            ensure_finite(g, &ctx)?;
            ensure_symmetric(g, GAMMA_SYMMETRY_TOL, &ctx)?;
            let lo = min_eigenvalue(g);
            if lo < GAMMA_PSD_TOL * g.amax().max(1.0) {
                return Err(Error::InvalidInput(format!(
                    "{ctx}: matrix is not positive semi-definite (min eigenvalue {lo:e})"
                )));
            }
        }
        Ok(Self { subject_id, gammas })
    }

    pub fn rois(&self) -> usize {
        self.gammas[0].nrows()
    }

    /// Number of windows `T_n`.
    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }
}

/// Normalized graph Laplacian for one subject plus the adjacency it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralLaplacian {
    pub subject_id: String,
    pub laplacian: Matrix,
    pub adjacency: Matrix,
    /// True when the adjacency was imputed from other subjects.
    pub imputed: bool,
}

/// Clinical scores with an observation mask.
///
/// Unobserved slots hold `NaN`; accessors never hand them out as data.
#[derive(Debug, Clone)]
pub struct SeverityVector {
    scores: Vec<f64>,
    observed: Vec<bool>,
    pub score_names: Vec<String>,
}

impl SeverityVector {
    pub const SENTINEL: f64 = f64::NAN;

    pub fn new(score_names: Vec<String>, values: Vec<Option<f64>>) -> Result<Self> {
        if score_names.len() != values.len() {
            return Err(Error::dims("severity vector", score_names.len(), values.len()));
        }
        let mut scores = Vec::with_capacity(values.len());
        let mut observed = Vec::with_capacity(values.len());
        for (name, v) in score_names.iter().zip(&values) {
            match v {
                Some(x) if !x.is_finite() => {
                    return Err(Error::NonFinite(format!("score {name}")));
                }
                Some(x) => {
                    scores.push(*x);
                    observed.push(true);
                }
                None => {
                    scores.push(Self::SENTINEL);
                    observed.push(false);
                }
            }
        }
        Ok(Self {
            scores,
            observed,
            score_names,
        })
    }

    /// All entries observed.
    pub fn observed_all(score_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        Self::new(score_names, values.into_iter().map(Some).collect())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, m: usize) -> Option<f64> {
        self.observed[m].then(|| self.scores[m])
    }

    pub fn is_observed(&self, m: usize) -> bool {
        self.observed[m]
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn values(&self) -> Vec<Option<f64>> {
        (0..self.len()).map(|m| self.get(m)).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|o| **o).count()
    }
}

impl PartialEq for SeverityVector {
    fn eq(&self, other: &Self) -> bool {
        self.score_names == other.score_names
            && self.observed == other.observed
            && (0..self.len()).all(|m| match (self.get(m), other.get(m)) {
                (Some(a), Some(b)) => a.to_bits() == b.to_bits(),
                (None, None) => true,
                _ => false,
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub connectome: DynamicConnectome,
    /// `None` when the subject has no DTI scan.
    pub structure: Option<StructuralLaplacian>,
    pub scores: SeverityVector,
}

impl Subject {
    pub fn id(&self) -> &str {
        &self.connectome.subject_id
    }

    /// The Laplacian, or an error if DTI is missing and has not been imputed.
    pub fn laplacian(&self) -> Result<&Matrix> {
        self.structure.as_ref().map(|s| &s.laplacian).ok_or_else(|| {
            Error::InvalidInput(format!(
                "subject {} has no structural Laplacian; impute it first",
                self.id()
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub subjects: Vec<Subject>,
    pub p: usize,
    pub m: usize,
    pub score_names: Vec<String>,
}

impl Cohort {
    pub fn new(subjects: Vec<Subject>, score_names: Vec<String>) -> Result<Self> {
        let first = subjects.first().ok_or_else(|| Error::Empty("cohort".into()))?;
        let p = first.connectome.rois();
        let m = score_names.len();
        let mut seen = HashSet::new();
        for s in &subjects {
            if s.connectome.rois() != p {
                return Err(Error::dims(
                    format!("ROI count of subject {}", s.id()),
                    p,
                    s.connectome.rois(),
                ));
            }
            if let Some(st) = &s.structure {
                if st.laplacian.shape() != (p, p) || st.adjacency.shape() != (p, p) {
                    return Err(Error::dims(
                        format!("structural matrices of subject {}", s.id()),
                        format!("{p}x{p}"),
                        format!("{:?}", st.laplacian.shape()),
                    ));
                }
            }
            if s.scores.len() != m {
                return Err(Error::dims(format!("score count of subject {}", s.id()), m, s.scores.len()));
            }
            if s.scores.score_names != score_names {
                return Err(Error::InvalidInput(format!(
                    "subject {} has score names {:?}, cohort uses {:?}",
                    s.id(),
                    s.scores.score_names,
                    score_names
                )));
            }
            if !seen.insert(s.id().to_string()) {
                return Err(Error::InvalidInput(format!("duplicate subject id {}", s.id())));
            }
        }
        Ok(Self {
            subjects,
            p,
            m,
            score_names,
        })
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// Sub-cohort with the given subject indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let subjects = indices.iter().map(|&i| self.subjects[i].clone()).collect();
        Self::new(subjects, self.score_names.clone())
    }

    /// Adjacencies of subjects with an observed (non-imputed) DTI scan.
    pub fn observed_adjacencies(&self) -> Vec<Matrix> {
        self.subjects
            .iter()
            .filter_map(|s| s.structure.as_ref())
            .filter(|st| !st.imputed)
            .map(|st| st.adjacency.clone())
            .collect()
    }

    pub fn missing_structure(&self) -> usize {
        self.subjects.iter().filter(|s| s.structure.is_none()).count()
    }

    /// Fills every missing Laplacian from the majority-vote adjacency `imputed`.
    pub fn fill_missing_structure(&mut self, imputed: &Matrix) -> Result<()> {
        for s in &mut self.subjects {
            if s.structure.is_none() {
                let mut st = build_normalized_laplacian(imputed, s.id())?;
                st.imputed = true;
                s.structure = Some(st);
            }
        }
        Ok(())
    }

    /// Imputes missing structure using this cohort's own observed adjacencies.
    pub fn impute_missing_structure(&mut self) -> Result<()> {
        if self.missing_structure() == 0 {
            return Ok(());
        }
        let imputed = impute_adjacency(&self.observed_adjacencies())?;
        self.fill_missing_structure(&imputed)
    }
}
