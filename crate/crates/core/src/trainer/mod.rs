//! Coupled alternating minimization, unseen-subject inference, checkpoints
//! and cross-validation.
//!
//! One outer iteration runs, in order: the Procrustes basis update, ADAM
//! epochs on every subject's loadings (factorization gradient plus the
//! λ-scaled gradient backpropagated from the head), ADAM epochs on the head
//! weights with batch size one, and a fixed number of primal-dual rounds on
//! the auxiliary `D` and `Λ` variables.

mod checkpoint;
mod crossval;
mod infer;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_FILE};
pub use crossval::{cross_validate, fit_fold, CrossValReport, FoldAssignment, Method, SubjectPrediction};
pub use infer::{infer_loadings, predict, Prediction};

use crate::data::{impute_adjacency, Cohort, Subject};
use crate::factor::{
    augmented_penalty, constraint_residual, loading_objective_gradient, procrustes_target, procrustes_update,
    relu_mask, split_reconstruction_loss, srddl_loss, update_constraint_dual, update_constraint_primal,
    BasisDictionary, ConstraintState, Hyperparameters, LoadingSequence, SubjectView,
};
use crate::head::{backward_targets, forward, masked_mse_targets, AdamState, NetworkShape, NetworkWeights};
use crate::linalg::{orthonormality_error, rng_stream};
use crate::{Error, Matrix, Result};

const STREAM_BASIS: u64 = 10;
const STREAM_LOADINGS: u64 = 11;
const STREAM_NETWORK: u64 = 12;
const STREAM_SHUFFLE: u64 = 1 << 32;

/// Objective terms after one outer iteration. Iteration 0 is the initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iteration: usize,
    /// `Σₙ (1/Tₙ) Σₜ ‖Γ − B diag(c) Bᵀ‖_L`.
    pub srddl_loss: f64,
    /// Same with `D Bᵀ` in place of `B diag(c) Bᵀ`.
    pub split_loss: f64,
    /// `Σₙ ‖ŷₙ − yₙ‖²` over observed scores, in standardized units.
    pub network_loss: f64,
    pub penalty: f64,
    /// `split_loss + λ·network_loss + penalty`.
    pub objective: f64,
    /// Mean over subjects of `‖D − B diag(c)‖_F / ‖D‖_F`.
    pub residual: f64,
    pub orthonormality_error: f64,
}

impl HistoryRecord {
    pub const CSV_HEADER: &'static str =
        "iteration,srddl_loss,split_loss,network_loss,penalty,objective,residual,orthonormality_error";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.iteration,
            self.srddl_loss,
            self.split_loss,
            self.network_loss,
            self.penalty,
            self.objective,
            self.residual,
            self.orthonormality_error
        )
    }
}

/// Per-score affine map between raw and standardized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScoreScaling {
    pub fn identity(m: usize) -> Self {
        Self {
            mean: vec![0.0; m],
            std: vec![1.0; m],
        }
    }

    /// Mean and population standard deviation of the observed training values.
    pub fn fit(cohort: &Cohort) -> Self {
        let m = cohort.m;
        let mut out = Self::identity(m);
        for j in 0..m {
            let vals: Vec<f64> = cohort.subjects.iter().filter_map(|s| s.scores.get(j)).collect();
            if vals.is_empty() {
                continue;
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            out.mean[j] = mean;
            if var.sqrt() > 1e-12 * mean.abs().max(1.0) {
                out.std[j] = var.sqrt();
            }
        }
        out
    }

    pub fn standardize(&self, values: &[Option<f64>]) -> Vec<Option<f64>> {
        values
            .iter()
            .enumerate()
            .map(|(j, v)| v.map(|v| (v - self.mean[j]) / self.std[j]))
            .collect()
    }

    pub fn restore(&self, values: &[f64]) -> Vec<f64> {
        values.iter().enumerate().map(|(j, v)| v * self.std[j] + self.mean[j]).collect()
    }
}

/// Everything learned by [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub hyper: Hyperparameters,
    pub basis: BasisDictionary,
    pub subject_ids: Vec<String>,
    pub score_names: Vec<String>,
    pub loadings: Vec<LoadingSequence>,
    pub constraints: Vec<ConstraintState>,
    pub weights: NetworkWeights,
    pub network_adam: AdamState,
    pub loading_adam: Vec<AdamState>,
    pub scaling: ScoreScaling,
    /// Majority-vote adjacency of the training subjects, used for subjects without DTI.
    pub imputed_adjacency: Option<Matrix>,
    pub history: Vec<HistoryRecord>,
    pub converged: bool,
}

impl ModelState {
    pub fn p(&self) -> usize {
        self.basis.p()
    }

    pub fn k(&self) -> usize {
        self.basis.k()
    }

    pub fn m(&self) -> usize {
        self.score_names.len()
    }

    pub fn last_record(&self) -> &HistoryRecord {
        self.history.last().expect("history always holds the initial record")
    }
}

/// Training inputs with missing structure already imputed.
struct Prepared {
    cohort: Cohort,
    imputed_adjacency: Option<Matrix>,
    targets: Vec<Vec<Option<f64>>>,
    scaling: ScoreScaling,
}

fn prepare(cohort: &Cohort, hyper: &Hyperparameters) -> Result<Prepared> {
    hyper.validate(cohort.p)?;
    let observed = cohort.observed_adjacencies();
    let imputed_adjacency = if observed.is_empty() { None } else { Some(impute_adjacency(&observed)?) };
    let mut cohort = cohort.clone();
    if cohort.missing_structure() > 0 {
        let adj = imputed_adjacency
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("no training subject has a DTI scan to impute from".into()))?;
        cohort.fill_missing_structure(adj)?;
    }
    let scaling = if hyper.standardize_scores { ScoreScaling::fit(&cohort) } else { ScoreScaling::identity(cohort.m) };
    let targets = cohort.subjects.iter().map(|s| scaling.standardize(&s.scores.values())).collect();
    Ok(Prepared {
        cohort,
        imputed_adjacency,
        targets,
        scaling,
    })
}

fn views(cohort: &Cohort) -> Result<Vec<SubjectView<'_>>> {
    cohort
        .subjects
        .iter()
        .map(|s| {
            Ok(SubjectView {
                gammas: &s.connectome.gammas,
                laplacian: s.laplacian()?,
            })
        })
        .collect()
}

fn network_shape(hyper: &Hyperparameters, m: usize) -> NetworkShape {
    NetworkShape {
        input: hyper.k,
        hidden: hyper.hidden,
        outputs: m,
    }
}

fn initial_state(prep: &Prepared, hyper: &Hyperparameters) -> Result<ModelState> {
    let cohort = &prep.cohort;
    let basis = BasisDictionary::random(cohort.p, hyper.k, hyper.seed, STREAM_BASIS)?;
    let mut rng = rng_stream(hyper.seed, STREAM_LOADINGS);
    let mut loadings = Vec::with_capacity(cohort.len());
    let mut constraints = Vec::with_capacity(cohort.len());
    for s in &cohort.subjects {
        let t_n = s.connectome.len();
        let c_hat = Matrix::from_fn(t_n, hyper.k, |_, _| rng.random_range(0.0..hyper.init_loading_max));
        constraints.push(ConstraintState::feasible(basis.matrix(), &c_hat, hyper.gamma)?);
        loadings.push(LoadingSequence::new(c_hat));
    }
    let shape = network_shape(hyper, cohort.m);
    let weights = NetworkWeights::init(shape, hyper.seed, STREAM_NETWORK);
    let network_adam = AdamState::new(weights.len(), hyper.network_lr, hyper.lr_decay, hyper.lr_decay_every);
    let loading_adam = loadings
        .iter()
        .map(|l| AdamState::new(l.c_hat.len(), hyper.loading_lr, hyper.lr_decay, hyper.lr_decay_every))
        .collect();
    Ok(ModelState {
        hyper: hyper.clone(),
        basis,
        subject_ids: cohort.subjects.iter().map(|s| s.id().to_string()).collect(),
        score_names: cohort.score_names.clone(),
        loadings,
        constraints,
        weights,
        network_adam,
        loading_adam,
        scaling: prep.scaling.clone(),
        imputed_adjacency: prep.imputed_adjacency.clone(),
        history: Vec::new(),
        converged: false,
    })
}

/// Evaluates every objective term for the current state.
fn evaluate(model: &ModelState, views: &[SubjectView<'_>], targets: &[Vec<Option<f64>>], iteration: usize) -> Result<HistoryRecord> {
    let b = model.basis.matrix();
    let terms: Vec<[f64; 5]> = (0..views.len())
        .into_par_iter()
        .map(|n| {
            let v = &views[n];
            let c = model.loadings[n].c();
            let st = &model.constraints[n];
            let recon = srddl_loss(b, &c, v.gammas, v.laplacian)?;
            let split = split_reconstruction_loss(b, &st.d, v.gammas, v.laplacian)?;
            let pen = augmented_penalty(b, &c, st)?;
            let trace = forward(&c, &model.weights)?;
            let net = masked_mse_targets(&trace, &targets[n])?;
            let (num, den) = constraint_residual(b, &c, st);
            let rel = if den > 0.0 { (num / den).sqrt() } else if num > 0.0 { f64::INFINITY } else { 0.0 };
            Ok([recon, split, pen, net, rel])
        })
        .collect::<Result<_>>()?;
    let sum = |i: usize| terms.iter().map(|t| t[i]).sum::<f64>();
    let (srddl, split, penalty, network) = (sum(0), sum(1), sum(2), sum(3));
    Ok(HistoryRecord {
        iteration,
        srddl_loss: srddl,
        split_loss: split,
        network_loss: network,
        penalty,
        objective: split + model.hyper.lambda * network + penalty,
        residual: sum(4) / terms.len() as f64,
        orthonormality_error: orthonormality_error(b),
    })
}

/// Step 1.
fn update_basis(model: &mut ModelState, views: &[SubjectView<'_>]) -> Result<()> {
    let c: Vec<Matrix> = model.loadings.iter().map(|l| l.c()).collect();
    let target = procrustes_target(views, &c, &model.constraints)?;
    model.basis = procrustes_update(&target, model.hyper.complete_rank_deficient_basis)?;
    Ok(())
}

/// Step 2. Each subject's loadings take `loading_epochs` ADAM steps.
fn update_loadings(model: &mut ModelState, views: &[SubjectView<'_>], targets: &[Vec<Option<f64>>]) -> Result<()> {
    let lambda = model.hyper.lambda;
    let epochs = model.hyper.loading_epochs;
    let b = model.basis.matrix();
    let weights = &model.weights;
    model
        .loadings
        .par_iter_mut()
        .zip(model.loading_adam.par_iter_mut())
        .zip(model.constraints.par_iter())
        .enumerate()
        .try_for_each(|(n, ((loading, adam), state))| -> Result<()> {
            let v = &views[n];
            let observed = targets[n].iter().any(Option::is_some);
            for _ in 0..epochs {
                let mut grad = loading_objective_gradient(&loading.c_hat, b, state, v.gammas, v.laplacian)?;
                if lambda > 0.0 && observed {
                    let c = loading.c();
                    let trace = forward(&c, weights)?;
                    let net = backward_targets(&trace, weights, &targets[n])?;
                    grad += net.inputs.component_mul(&relu_mask(&loading.c_hat)) * lambda;
                }
                adam.step(loading.c_hat.as_mut_slice(), grad.as_slice())?;
                adam.next_epoch();
            }
            Ok(())
        })
}

/// Trains the head on fixed inputs, one subject per ADAM step, in a seeded
/// shuffled order per epoch. Subjects without any observed score are skipped.
pub fn train_head(
    weights: &mut NetworkWeights,
    adam: &mut AdamState,
    inputs: &[Matrix],
    targets: &[Vec<Option<f64>>],
    epochs: usize,
    seed: u64,
    stream: u64,
) -> Result<()> {
    if inputs.len() != targets.len() {
        return Err(Error::dims("head training targets", inputs.len(), targets.len()));
    }
    let mut order: Vec<usize> = (0..inputs.len())
        .filter(|&n| targets[n].iter().any(Option::is_some))
        .collect();
    let mut rng = rng_stream(seed, stream);
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &n in &order {
            let trace = forward(&inputs[n], weights)?;
            let g = backward_targets(&trace, weights, &targets[n])?;
            adam.step(weights.params_mut(), &g.weights)?;
        }
        adam.next_epoch();
    }
    Ok(())
}

/// Step 3.
fn update_network(model: &mut ModelState, targets: &[Vec<Option<f64>>], iteration: usize) -> Result<()> {
    let inputs: Vec<Matrix> = model.loadings.iter().map(|l| l.c()).collect();
    train_head(
        &mut model.weights,
        &mut model.network_adam,
        &inputs,
        targets,
        model.hyper.network_epochs,
        model.hyper.seed,
        STREAM_SHUFFLE + iteration as u64,
    )
}

/// Step 4.
fn update_constraints(model: &mut ModelState, views: &[SubjectView<'_>]) -> Result<()> {
    let rounds = model.hyper.primal_dual_rounds;
    let step = model.hyper.dual_step();
    let b = model.basis.matrix();
    model
        .constraints
        .par_iter_mut()
        .zip(model.loadings.par_iter())
        .enumerate()
        .try_for_each(|(n, (state, loading))| -> Result<()> {
            let v = &views[n];
            let c = loading.c();
            for _ in 0..rounds {
                state.d = update_constraint_primal(state, b, &c, v.gammas, v.laplacian)?;
                state.lambda = update_constraint_dual(state, b, &c, step)?;
            }
            Ok(())
        })
}

fn check_finite(record: &HistoryRecord) -> Result<()> {
    let vals = [record.srddl_loss, record.split_loss, record.network_loss, record.penalty, record.objective, record.residual];
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged {
            iteration: record.iteration,
            detail: format!("{}\n{}", HistoryRecord::CSV_HEADER, record.csv_row()),
        })
    }
}

/// Which phases of an outer iteration run.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FitOptions {
    pub train_network: bool,
}

pub(crate) fn fit_with(cohort: &Cohort, hyper: &Hyperparameters, opts: FitOptions) -> Result<ModelState> {
    let prep = prepare(cohort, hyper)?;
    let views = views(&prep.cohort)?;
    let mut model = initial_state(&prep, hyper)?;
    let initial = evaluate(&model, &views, &prep.targets, 0)?;
    check_finite(&initial)?;
    model.history.push(initial);
    for iteration in 1..=hyper.max_outer {
        update_basis(&mut model, &views)?;
        update_loadings(&mut model, &views, &prep.targets)?;
        if opts.train_network {
            update_network(&mut model, &prep.targets, iteration)?;
        }
        update_constraints(&mut model, &views)?;

        let record = evaluate(&model, &views, &prep.targets, iteration)?;
        check_finite(&record)?;
        let prev = model.last_record().objective;
        let change = (record.objective - prev).abs() / prev.abs().max(f64::MIN_POSITIVE);
        log::debug!(
            "outer {iteration}: objective {:.6e} (Δ {change:.2e}), sr-DDL {:.6e}, network {:.6e}, residual {:.2e}",
            record.objective,
            record.srddl_loss,
            record.network_loss,
            record.residual
        );
        model.history.push(record);
        if change < hyper.tol && record.residual < hyper.residual_tol {
            model.converged = true;
            break;
        }
    }
    let last = model.last_record();
    log::info!(
        "fit finished after {} outer iterations (converged: {}), objective {:.6e}, residual {:.2e}",
        last.iteration,
        model.converged,
        last.objective,
        last.residual
    );
    Ok(model)
}

/// Jointly fits the basis, loadings, constraint variables and head weights.
pub fn fit(cohort: &Cohort, hyper: &Hyperparameters) -> Result<ModelState> {
    fit_with(cohort, hyper, FitOptions { train_network: true })
}

/// Targets of `subject` in the model's standardized units.
pub fn standardized_targets(model: &ModelState, subject: &Subject) -> Vec<Option<f64>> {
    model.scaling.standardize(&subject.scores.values())
}
