use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit, predict, HistoryRecord, ModelState, Prediction};
use crate::data::{Cohort, Subject};
use crate::eval::{baseline_decoupled, baseline_pca_lstm, MetricsTable, PcaLstmModel};
use crate::factor::Hyperparameters;
use crate::linalg::rng_stream;
use crate::{Error, Matrix, Result};

const STREAM_FOLDS: u64 = 30;

/// Subject id → fold index in `[0, folds)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub folds: usize,
    pub fold_of: BTreeMap<String, usize>,
}

impl FoldAssignment {
    /// Seeded balanced partition. Depends on the set of ids, not their order.
    pub fn new(subject_ids: &[String], folds: usize, seed: u64) -> Result<Self> {
        if folds < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 folds, got {folds}")));
        }
        if subject_ids.len() < folds {
            return Err(Error::InvalidInput(format!(
                "{} subjects cannot fill {folds} folds; some fold would have no test subjects",
                subject_ids.len()
            )));
        }
        let mut ids: Vec<&String> = subject_ids.iter().collect();
        ids.sort();
        ids.dedup();
        if ids.len() != subject_ids.len() {
            return Err(Error::InvalidInput("subject ids must be unique".into()));
        }
        ids.shuffle(&mut rng_stream(seed, STREAM_FOLDS));
        let fold_of = ids.into_iter().enumerate().map(|(i, id)| (id.clone(), i % folds)).collect();
        Ok(Self { folds, fold_of })
    }

    pub fn fold(&self, subject_id: &str) -> Option<usize> {
        self.fold_of.get(subject_id).copied()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in self.fold_of.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Indices into `cohort` of the (train, test) split of `fold`, each sorted by subject id.
    pub fn split(&self, cohort: &Cohort, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if fold >= self.folds {
            return Err(Error::InvalidInput(format!("fold {fold} out of range 0..{}", self.folds)));
        }
        let mut order: Vec<usize> = (0..cohort.len()).collect();
        order.sort_by(|&a, &b| cohort.subjects[a].id().cmp(cohort.subjects[b].id()));
        let mut train = Vec::new();
        let mut test = Vec::new();
        for i in order {
            let id = cohort.subjects[i].id();
            match self.fold(id) {
                Some(f) if f == fold => test.push(i),
                Some(_) => train.push(i),
                None => return Err(Error::InvalidInput(format!("subject {id} has no fold assignment"))),
            }
        }
        if test.is_empty() {
            return Err(Error::InvalidInput(format!("fold {fold} has no test subjects")));
        }
        if train.is_empty() {
            return Err(Error::InvalidInput(format!("fold {fold} has no training subjects")));
        }
        Ok((train, test))
    }
}

/// Models compared by [`cross_validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// The jointly optimized factorization and head.
    Coupled,
    /// Factorization with λ = 0, then the head on frozen loadings.
    Decoupled,
    /// PCA of Laplacian-weighted correlations, then the head.
    PcaLstm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Coupled => "srddl-lstm",
            Method::Decoupled => "decoupled",
            Method::PcaLstm => "pca-lstm",
        }
    }
}

enum Trained {
    Factor(Box<ModelState>),
    Pca(Box<PcaLstmModel>),
}

impl Trained {
    fn predict(&self, subject: &Subject) -> Result<Prediction> {
        match self {
            Trained::Factor(m) => predict(subject, m),
            Trained::Pca(m) => m.predict(subject),
        }
    }
}

fn train(method: Method, cohort: &Cohort, hyper: &Hyperparameters) -> Result<Trained> {
    Ok(match method {
        Method::Coupled => Trained::Factor(Box::new(fit(cohort, hyper)?)),
        Method::Decoupled => Trained::Factor(Box::new(baseline_decoupled(cohort, hyper)?)),
        Method::PcaLstm => Trained::Pca(Box::new(baseline_pca_lstm(cohort, hyper)?)),
    })
}

/// Fits the coupled model on the training split of `fold`. Test subjects are
/// never passed to training, so nothing about them can reach the result.
pub fn fit_fold(cohort: &Cohort, assignment: &FoldAssignment, fold: usize, hyper: &Hyperparameters) -> Result<ModelState> {
    let (train_idx, _) = assignment.split(cohort, fold)?;
    fit(&cohort.select(&train_idx)?, hyper)
}

/// A held-out prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectPrediction {
    pub method: Method,
    pub subject_id: String,
    pub fold: usize,
    pub predicted: Vec<f64>,
    pub truth: Vec<Option<f64>>,
    pub attention: Vec<f64>,
    pub loadings: Matrix,
}

#[derive(Debug, Clone)]
pub struct CrossValReport {
    pub assignment: FoldAssignment,
    pub methods: Vec<Method>,
    pub score_names: Vec<String>,
    /// One row per (fold, method, score, split).
    pub metrics: MetricsTable,
    /// One row per (method, score, split) over the pooled predictions.
    pub pooled: MetricsTable,
    /// Held-out predictions, ordered by fold, then method, then subject id.
    pub predictions: Vec<SubjectPrediction>,
    /// Outer-iteration history of the coupled model, per fold.
    pub histories: Vec<Vec<HistoryRecord>>,
}

struct FoldResult {
    test: Vec<SubjectPrediction>,
    train: Vec<(Method, Vec<Vec<f64>>, Vec<Vec<Option<f64>>>)>,
    history: Vec<HistoryRecord>,
}

fn run_fold(cohort: &Cohort, assignment: &FoldAssignment, fold: usize, hyper: &Hyperparameters, methods: &[Method]) -> Result<FoldResult> {
    let (train_idx, test_idx) = assignment.split(cohort, fold)?;
    let train_cohort = cohort.select(&train_idx)?;
    let mut out = FoldResult {
        test: Vec::new(),
        train: Vec::new(),
        history: Vec::new(),
    };
    for &method in methods {
        let model = train(method, &train_cohort, hyper)?;
        if let (Method::Coupled, Trained::Factor(m)) = (method, &model) {
            out.history = m.history.clone();
        }
        let mut train_pred = Vec::with_capacity(train_cohort.len());
        let mut train_truth = Vec::with_capacity(train_cohort.len());
        for s in &train_cohort.subjects {
            train_pred.push(model.predict(s)?.scores.values().into_iter().flatten().collect());
            train_truth.push(s.scores.values());
        }
        out.train.push((method, train_pred, train_truth));
        for &i in &test_idx {
            let s = &cohort.subjects[i];
            let p = model.predict(s)?;
            out.test.push(SubjectPrediction {
                method,
                subject_id: s.id().to_string(),
                fold,
                predicted: p.scores.values().into_iter().flatten().collect(),
                truth: s.scores.values(),
                attention: p.attention,
                loadings: p.loadings,
            });
        }
    }
    Ok(out)
}

/// Seeded `folds`-fold cross-validation of the coupled model and the given baselines.
pub fn cross_validate(
    cohort: &Cohort,
    hyper: &Hyperparameters,
    folds: usize,
    seed: u64,
    baselines: &[Method],
) -> Result<CrossValReport> {
    let ids: Vec<String> = cohort.subjects.iter().map(|s| s.id().to_string()).collect();
    let assignment = FoldAssignment::new(&ids, folds, seed)?;
    let mut methods = vec![Method::Coupled];
    for &b in baselines {
        if !methods.contains(&b) {
            methods.push(b);
        }
    }
    let results: Vec<FoldResult> = (0..folds)
        .into_par_iter()
        .map(|f| run_fold(cohort, &assignment, f, hyper, &methods))
        .collect::<Result<_>>()?;

    let names = &cohort.score_names;
    let mut metrics = MetricsTable::default();
    let mut pooled = MetricsTable::default();
    let mut predictions = Vec::new();
    let mut histories = Vec::new();
    for (fold, r) in results.into_iter().enumerate() {
        for &method in &methods {
            let test: Vec<&SubjectPrediction> = r.test.iter().filter(|p| p.method == method).collect();
            let pred: Vec<Vec<f64>> = test.iter().map(|p| p.predicted.clone()).collect();
            let truth: Vec<Vec<Option<f64>>> = test.iter().map(|p| p.truth.clone()).collect();
            metrics.add(method.name(), "test", Some(fold), names, &pred, &truth)?;
            let (_, tp, tt) = r.train.iter().find(|(m, _, _)| *m == method).expect("every method trained");
            metrics.add(method.name(), "train", Some(fold), names, tp, tt)?;
        }
        predictions.extend(r.test);
        histories.push(r.history);
    }
    for &method in &methods {
        let test: Vec<&SubjectPrediction> = predictions.iter().filter(|p| p.method == method).collect();
        let pred: Vec<Vec<f64>> = test.iter().map(|p| p.predicted.clone()).collect();
        let truth: Vec<Vec<Option<f64>>> = test.iter().map(|p| p.truth.clone()).collect();
        pooled.add(method.name(), "test", None, names, &pred, &truth)?;
    }
    Ok(CrossValReport {
        assignment,
        methods,
        score_names: names.clone(),
        metrics,
        pooled,
        predictions,
        histories,
    })
}
