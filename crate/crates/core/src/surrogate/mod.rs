//! Probabilistic surrogates over candidate embeddings: an exact Gaussian
//! process and a deep ensemble of small MLPs.

mod ensemble;
mod gp;
mod metrics;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use ensemble::{fit_ensemble, EnsembleConfig, EnsembleModel};
pub use gp::{fit_gp, GpConfig, GpModel, Lengthscale};
pub use metrics::{eval_metrics, MetricRecord, SubsetMetric};

/// Lower bound applied to every predictive standard deviation.
pub const SD_FLOOR: f64 = 1e-6;

/// Per-candidate predictive mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub ids: Vec<usize>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Posterior {
    pub fn new(ids: Vec<usize>, mean: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        if ids.len() != mean.len() || ids.len() != sd.len() {
            return Err(invalid(format!(
                "posterior lengths differ: {} ids, {} means, {} sds",
                ids.len(),
                mean.len(),
                sd.len()
            )));
        }
        if mean.iter().chain(&sd).any(|v| !v.is_finite()) {
            return Err(invalid("posterior contains non-finite values"));
        }
        let sd = sd.into_iter().map(|s| s.max(SD_FLOOR)).collect();
        Ok(Self { ids, mean, sd })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Common interface of fitted surrogates.
pub trait ProbabilisticModel {
    /// Feature width the model was trained on.
    fn input_dim(&self) -> usize;

    /// Predictive mean and standard deviation per row of `x`.
    fn predict_moments(&self, x: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)>;

    /// One joint draw of function values per row of `x`, deterministic in
    /// `seed`.
    fn sample(&self, x: &DMatrix<f64>, seed: u64) -> Result<Vec<f64>>;

    fn predict(&self, x: &DMatrix<f64>, ids: Vec<usize>) -> Result<Posterior> {
        if ids.len() != x.nrows() {
            return Err(invalid(format!(
                "{} ids for {} candidate rows",
                ids.len(),
                x.nrows()
            )));
        }
        let (mean, sd) = self.predict_moments(x)?;
        Posterior::new(ids, mean, sd)
    }
}

pub(crate) fn check_width(expected: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(crate::Error::WidthMismatch {
            expected,
            found: x.ncols(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    #[default]
    Gp,
    Ensemble,
}

/// A fitted surrogate of either kind.
#[derive(Debug, Clone)]
pub enum Surrogate {
    Gp(GpModel),
    Ensemble(EnsembleModel),
}

impl Surrogate {
    pub fn fit(
        kind: SurrogateKind,
        x: &DMatrix<f64>,
        y: &[f64],
        gp: &GpConfig,
        ensemble: &EnsembleConfig,
        seed: u64,
    ) -> Result<Self> {
        Ok(match kind {
            SurrogateKind::Gp => Surrogate::Gp(fit_gp(x, y, gp)?),
            SurrogateKind::Ensemble => Surrogate::Ensemble(fit_ensemble(x, y, ensemble, seed)?),
        })
    }
}

impl ProbabilisticModel for Surrogate {
    fn input_dim(&self) -> usize {
        match self {
            Surrogate::Gp(m) => m.input_dim(),
            Surrogate::Ensemble(m) => m.input_dim(),
        }
    }

    fn predict_moments(&self, x: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            Surrogate::Gp(m) => m.predict_moments(x),
            Surrogate::Ensemble(m) => m.predict_moments(x),
        }
    }

    fn sample(&self, x: &DMatrix<f64>, seed: u64) -> Result<Vec<f64>> {
        match self {
            Surrogate::Gp(m) => m.sample(x, seed),
            Surrogate::Ensemble(m) => m.sample(x, seed),
        }
    }
}
