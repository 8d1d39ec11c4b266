use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{
    build_normalized_laplacian, identity_structure, Cohort, DynamicConnectome, SeverityVector,
    Subject,
};
use crate::linalg::{gaussian_matrix, orthonormal_columns, rng_stream, symmetrize};
use crate::{Error, Matrix, Result};

/// How the structural Laplacians of a synthetic cohort are produced.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LaplacianMode {
    /// `L = I` for every subject.
    Identity,
    /// Erdős–Rényi adjacency with the given edge density, normalized Laplacian.
    RandomGraph { density: f64 },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub p: usize,
    pub k_true: usize,
    pub n: usize,
    /// Inclusive range of window counts; each subject draws its own.
    pub t_min: usize,
    pub t_max: usize,
    pub m: usize,
    /// Standard deviation of the symmetric noise added to each `Γᵗ`.
    pub noise: f64,
    /// Standard deviation of additive score noise.
    pub score_noise: f64,
    /// Standard deviation of the linear score map entries.
    pub score_scale: f64,
    pub laplacian: LaplacianMode,
    /// Number of subjects (taken from the end of the cohort) with no DTI.
    pub missing_dti: usize,
    /// Probability that any single score is unobserved.
    pub missing_score_prob: f64,
}

impl SynthConfig {
    pub fn new(p: usize, k_true: usize, n: usize, t: usize) -> Self {
        Self {
            p,
            k_true,
            n,
            t_min: t,
            t_max: t,
            m: 3,
            noise: 0.0,
            score_noise: 0.0,
            score_scale: 10.0,
            laplacian: LaplacianMode::Identity,
            missing_dti: 0,
            missing_score_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.p < 2 {
            return bad(format!("P must be ≥ 2, got {}", self.p));
        }
        if self.k_true == 0 || self.k_true > self.p {
            return bad(format!("K_true = {} must lie in [1, P = {}]", self.k_true, self.p));
        }
        if self.n == 0 || self.m == 0 {
            return bad("N and M must be positive".into());
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return bad(format!("invalid window-count range [{}, {}]", self.t_min, self.t_max));
        }
        if !(self.noise >= 0.0 && self.score_noise >= 0.0 && self.score_scale > 0.0) {
            return bad("noise levels must be ≥ 0 and the score scale > 0".into());
        }
        if let LaplacianMode::RandomGraph { density } = self.laplacian {
            if !(0.0..=1.0).contains(&density) {
                return bad(format!("edge density {density} outside [0, 1]"));
            }
        }
        if self.missing_dti > self.n {
            return bad("more subjects without DTI than subjects".into());
        }
        if !(0.0..1.0).contains(&self.missing_score_prob) {
            return bad("missing-score probability must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Generating parameters of a synthetic cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    /// P × K_true orthonormal basis.
    pub basis: Matrix,
    /// Per subject, T_n × K_true nonnegative loadings.
    pub loadings: Vec<Matrix>,
    /// M × K_true map applied to time-averaged loadings.
    pub score_map: Matrix,
    pub score_offset: Vec<f64>,
}

// Stream ids so that, e.g., changing the noise level does not change the basis.
const STREAM_BASIS: u64 = 1;
const STREAM_LOADINGS: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_GRAPH: u64 = 4;
const STREAM_SCORES: u64 = 5;

/// Smoothed random walk passed through a ReLU: alternating bursts of activity
/// and silence.
fn loading_track<R: Rng>(rng: &mut R, t: usize) -> Vec<f64> {
    let start = Normal::new(0.8, 0.5).unwrap();
    let step = Normal::new(0.0, 0.3).unwrap();
    let mut walk = Vec::with_capacity(t);
    let mut x = start.sample(rng);
    for _ in 0..t {
        walk.push(x);
        x += step.sample(rng);
    }
    (0..t)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(t - 1);
            let mean = walk[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
            mean.max(0.0)
        })
        .collect()
}

fn project_psd(m: &Matrix) -> Matrix {
    let eig = SymmetricEigen::new(symmetrize(m));
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    symmetrize(&(v * Matrix::from_diagonal(&clipped) * v.transpose()))
}

/// Draws a cohort `Γᵗₙ = B diag(cᵗₙ) Bᵀ (+ noise)` with scores linear in the
/// time-averaged loadings. Deterministic in `seed`.
pub fn generate_synthetic_cohort(config: &SynthConfig, seed: u64) -> Result<(Cohort, SynthTruth)> {
    config.validate()?;
    let (p, k, m) = (config.p, config.k_true, config.m);

    let basis = orthonormal_columns(&gaussian_matrix(&mut rng_stream(seed, STREAM_BASIS), p, k));

    let mut load_rng = rng_stream(seed, STREAM_LOADINGS);
    let mut noise_rng = rng_stream(seed, STREAM_NOISE);
    let mut graph_rng = rng_stream(seed, STREAM_GRAPH);
    let mut score_rng = rng_stream(seed, STREAM_SCORES);

    let score_map = gaussian_matrix(&mut score_rng, m, k) * config.score_scale;
    let score_offset: Vec<f64> = (0..m).map(|_| score_rng.random_range(0.0..20.0)).collect();
    let score_noise = Normal::new(0.0, config.score_noise.max(0.0)).unwrap();
    let score_names: Vec<String> = (0..m).map(|i| format!("score_{i}")).collect();

    let mut subjects = Vec::with_capacity(config.n);
    let mut loadings = Vec::with_capacity(config.n);
    for n in 0..config.n {
        let id = format!("sub-{n:03}");
        let t = load_rng.random_range(config.t_min..=config.t_max);
        let mut c = Matrix::zeros(t, k);
        for j in 0..k {
            for (i, v) in loading_track(&mut load_rng, t).into_iter().enumerate() {
                c[(i, j)] = v;
            }
        }

        let mut gammas = Vec::with_capacity(t);
        for i in 0..t {
            let d = Matrix::from_diagonal(&c.row(i).transpose());
            let clean = symmetrize(&(&basis * d * basis.transpose()));
            let g = if config.noise > 0.0 {
                let e = symmetrize(&gaussian_matrix(&mut noise_rng, p, p)) * config.noise;
                project_psd(&(clean + e))
            } else {
                clean
            };
            gammas.push(g);
        }
        let connectome = DynamicConnectome::new(id.clone(), gammas)?;

        let has_dti = n < config.n - config.missing_dti;
        let structure = match (config.laplacian, has_dti) {
            (_, false) => None,
            (LaplacianMode::Identity, true) => Some(identity_structure(&id, p)),
            (LaplacianMode::RandomGraph { density }, true) => {
                let mut a = Matrix::zeros(p, p);
                for i in 0..p {
                    for j in (i + 1)..p {
                        if graph_rng.random::<f64>() < density {
                            a[(i, j)] = 1.0;
                            a[(j, i)] = 1.0;
                        }
                    }
                }
                Some(build_normalized_laplacian(&a, &id)?)
            }
        };

        let mean_loading = c.row_mean().transpose();
        let clean_scores = &score_map * &mean_loading;
        let values: Vec<Option<f64>> = (0..m)
            .map(|j| {
                let y = clean_scores[j] + score_offset[j] + score_noise.sample(&mut score_rng);
                let missing = config.missing_score_prob > 0.0
                    && score_rng.random::<f64>() < config.missing_score_prob;
                (!missing).then_some(y)
            })
            .collect();
        let scores = SeverityVector::new(score_names.clone(), values)?;

        subjects.push(Subject {
            connectome,
            structure,
            scores,
        });
        loadings.push(c);
    }

    let cohort = Cohort::new(subjects, score_names)?;
    Ok((
        cohort,
        SynthTruth {
            basis,
            loadings,
            score_map,
            score_offset,
        },
    ))
}
