use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use srddl_core::trainer::Method;
use srddl_core::Hyperparameters;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Pca,
    Decoupled,
    #[default]
    None,
}

impl Baseline {
    pub fn methods(self) -> Vec<Method> {
        match self {
            Baseline::Pca => vec![Method::PcaLstm],
            Baseline::Decoupled => vec![Method::Decoupled],
            Baseline::None => vec![],
        }
    }
}

/// Flags shared by `train` and `crossval`. Each one overrides the value from `--config`.
#[derive(Args, Debug, Default)]
pub struct HyperArgs {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of basis networks.
    #[arg(long)]
    pub k: Option<usize>,
    /// Weight of the prediction loss.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Augmented Lagrangian penalty.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Maximum number of outer iterations.
    #[arg(long = "epochs-outer")]
    pub epochs_outer: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "loading-epochs")]
    pub loading_epochs: Option<usize>,
    #[arg(long = "network-epochs")]
    pub network_epochs: Option<usize>,
    #[arg(long = "primal-dual-rounds")]
    pub primal_dual_rounds: Option<usize>,
    #[arg(long = "loading-lr")]
    pub loading_lr: Option<f64>,
    #[arg(long = "network-lr")]
    pub network_lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub hyper: Hyperparameters,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub baseline: Baseline,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparameters::default(),
            folds: default_folds(),
            baseline: Baseline::None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Config file (if any), then flags, then validation of everything that
    /// does not depend on the cohort.
    pub fn resolve(args: &HyperArgs, folds: Option<usize>, baseline: Option<Baseline>) -> Result<Self> {
        let mut run = match &args.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        let h = &mut run.hyper;
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = args.$flag { h.$field = v; })*
            };
        }
        set!(
            k => k,
            lambda => lambda,
            gamma => gamma,
            epochs_outer => max_outer,
            seed => seed,
            loading_epochs => loading_epochs,
            network_epochs => network_epochs,
            primal_dual_rounds => primal_dual_rounds,
            loading_lr => loading_lr,
            network_lr => network_lr,
            hidden => hidden,
            tol => tol,
        );
        if let Some(f) = folds {
            run.folds = f;
        }
        if let Some(b) = baseline {
            run.baseline = b;
        }
        if run.folds < 2 {
            bail!("--folds must be at least 2, got {}", run.folds);
        }
        run.hyper.validate(usize::MAX)?;
        Ok(run)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
