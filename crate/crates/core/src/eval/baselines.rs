use nalgebra::SymmetricEigen;

use crate::data::{build_normalized_laplacian, impute_adjacency, Cohort, SeverityVector, Subject};
use crate::factor::Hyperparameters;
use crate::head::{forward, AdamState, NetworkShape, NetworkWeights};
use crate::linalg::orthonormal_columns;
use crate::trainer::{fit_with, train_head, FitOptions, ModelState, Prediction, ScoreScaling};
use crate::{Error, Matrix, Result, Vector};

const STREAM_PCA_NETWORK: u64 = 20;
const STREAM_PCA_SHUFFLE: u64 = 21;
const STREAM_DECOUPLED_SHUFFLE: u64 = 22;

/// Upper-triangle entries `Γᵢⱼ·|Lᵢⱼ|`, `i < j`, in row-major order.
pub fn laplacian_weighted_features(gamma: &Matrix, laplacian: &Matrix) -> Vector {
    let p = gamma.nrows();
    let mut out = Vec::with_capacity(p * (p - 1) / 2);
    for i in 0..p {
        for j in (i + 1)..p {
            out.push(gamma[(i, j)] * laplacian[(i, j)].abs());
        }
    }
    Vector::from_vec(out)
}

/// Mean and leading principal directions of a set of feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Vector,
    /// F × K, orthonormal columns ordered by decreasing variance.
    pub components: Matrix,
}

impl PcaBasis {
    pub fn fit(samples: &[Vector], k: usize) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Empty("PCA samples".into()))?;
        let f = first.len();
        if k == 0 || k > f {
            return Err(Error::InvalidInput(format!("PCA dimension {k} must lie in [1, {f}]")));
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != f) {
            return Err(Error::dims("PCA sample length", f, bad.len()));
        }
        let n = samples.len();
        let mean = samples.iter().fold(Vector::zeros(f), |acc, s| acc + s) / n as f64;
        // Rows are centered samples.
        let x = Matrix::from_fn(n, f, |i, j| samples[i][j] - mean[j]);
        // Eigen-decompose whichever Gram matrix is smaller.
        let directions = if n < f {
            let eig = SymmetricEigen::new(&x * x.transpose());
            let order = descending(&eig.eigenvalues);
            let u = Matrix::from_fn(n, k.min(n), |i, c| eig.eigenvectors[(i, order[c])]);
            let mut d = Matrix::zeros(f, k);
            d.columns_mut(0, u.ncols()).copy_from(&(x.transpose() * u));
            d
        } else {
            let eig = SymmetricEigen::new(x.transpose() * &x);
            let order = descending(&eig.eigenvalues);
            Matrix::from_fn(f, k, |i, c| eig.eigenvectors[(i, order[c])])
        };
        Ok(Self {
            mean,
            components: orthonormal_columns(&directions),
        })
    }

    pub fn project(&self, x: &Vector) -> Vector {
        self.components.transpose() * (x - &self.mean)
    }

    pub fn reconstruct(&self, z: &Vector) -> Vector {
        &self.components * z + &self.mean
    }
}

fn descending(values: &Vector) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// Baseline: PCA of Laplacian-weighted correlation features, fed to the
/// same head as the coupled model.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaLstmModel {
    pub pca: PcaBasis,
    pub weights: NetworkWeights,
    pub adam: AdamState,
    pub scaling: ScoreScaling,
    pub score_names: Vec<String>,
    pub imputed_adjacency: Option<Matrix>,
}

fn subject_laplacian(subject: &Subject, imputed: Option<&Matrix>) -> Result<Matrix> {
    match (&subject.structure, imputed) {
        (Some(st), _) => Ok(st.laplacian.clone()),
        (None, Some(adj)) => Ok(build_normalized_laplacian(adj, subject.id())?.laplacian),
        (None, None) => Err(Error::InvalidInput(format!("subject {} has no DTI scan to weight its features", subject.id()))),
    }
}

fn subject_features(subject: &Subject, imputed: Option<&Matrix>) -> Result<Vec<Vector>> {
    let l = subject_laplacian(subject, imputed)?;
    Ok(subject.connectome.gammas.iter().map(|g| laplacian_weighted_features(g, &l)).collect())
}

impl PcaLstmModel {
    fn inputs(&self, subject: &Subject) -> Result<Matrix> {
        let feats = subject_features(subject, self.imputed_adjacency.as_ref())?;
        let k = self.pca.components.ncols();
        let z: Vec<Vector> = feats.iter().map(|x| self.pca.project(x)).collect();
        Ok(Matrix::from_fn(z.len(), k, |t, j| z[t][j]))
    }

    pub fn predict(&self, subject: &Subject) -> Result<Prediction> {
        let loadings = self.inputs(subject)?;
        let trace = forward(&loadings, &self.weights)?;
        Ok(Prediction {
            scores: SeverityVector::observed_all(self.score_names.clone(), self.scaling.restore(&trace.prediction))?,
            loadings,
            attention: trace.attention,
        })
    }
}

fn head_epochs(hyper: &Hyperparameters) -> usize {
    hyper.max_outer * hyper.network_epochs
}

/// Fits the PCA baseline on every window of `cohort` and trains the head on
/// the projections for `max_outer × network_epochs` epochs.
pub fn baseline_pca_lstm(cohort: &Cohort, hyper: &Hyperparameters) -> Result<PcaLstmModel> {
    hyper.validate(cohort.p)?;
    let observed = cohort.observed_adjacencies();
    let imputed_adjacency = if observed.is_empty() { None } else { Some(impute_adjacency(&observed)?) };
    let per_subject: Vec<Vec<Vector>> = cohort
        .subjects
        .iter()
        .map(|s| subject_features(s, imputed_adjacency.as_ref()))
        .collect::<Result<_>>()?;
    let all: Vec<Vector> = per_subject.iter().flatten().cloned().collect();
    let pca = PcaBasis::fit(&all, hyper.k)?;
    let inputs: Vec<Matrix> = per_subject
        .iter()
        .map(|fs| {
            let z: Vec<Vector> = fs.iter().map(|x| pca.project(x)).collect();
            Matrix::from_fn(z.len(), hyper.k, |t, j| z[t][j])
        })
        .collect();
    let scaling = if hyper.standardize_scores { ScoreScaling::fit(cohort) } else { ScoreScaling::identity(cohort.m) };
    let targets: Vec<Vec<Option<f64>>> = cohort.subjects.iter().map(|s| scaling.standardize(&s.scores.values())).collect();
    let shape = NetworkShape {
        input: hyper.k,
        hidden: hyper.hidden,
        outputs: cohort.m,
    };
    let mut weights = NetworkWeights::init(shape, hyper.seed, STREAM_PCA_NETWORK);
    let mut adam = AdamState::new(weights.len(), hyper.network_lr, hyper.lr_decay, hyper.lr_decay_every);
    train_head(&mut weights, &mut adam, &inputs, &targets, head_epochs(hyper), hyper.seed, STREAM_PCA_SHUFFLE)?;
    Ok(PcaLstmModel {
        pca,
        weights,
        adam,
        scaling,
        score_names: cohort.score_names.clone(),
        imputed_adjacency,
    })
}

/// Factorization with λ = 0 and no head updates, then head training on the
/// frozen loadings for `max_outer × network_epochs` epochs.
pub fn baseline_decoupled(cohort: &Cohort, hyper: &Hyperparameters) -> Result<ModelState> {
    let hyper = Hyperparameters { lambda: 0.0, ..hyper.clone() };
    let mut model = fit_with(cohort, &hyper, FitOptions { train_network: false })?;
    let inputs: Vec<Matrix> = model.loadings.iter().map(|l| l.c()).collect();
    let targets: Vec<Vec<Option<f64>>> = cohort
        .subjects
        .iter()
        .map(|s| model.scaling.standardize(&s.scores.values()))
        .collect();
    let epochs = head_epochs(&hyper);
    train_head(&mut model.weights, &mut model.network_adam, &inputs, &targets, epochs, hyper.seed, STREAM_DECOUPLED_SHUFFLE)?;
    Ok(model)
}
