//! Acquisition scoring, prior augmentation and batch selection.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::enrich::PriorWeights;
use crate::error::{invalid, Error, Result};
use crate::surrogate::{Posterior, ProbabilisticModel};
use crate::util::rng_from_seed;

/// Offset keeping shifted scores strictly positive before prior weighting.
pub const SHIFT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AcquisitionKind {
    Ei,
    Ucb,
    Ts,
    Random,
    GreedyEa,
}

impl AcquisitionKind {
    /// Whether the policy scores candidates with a fitted surrogate.
    pub fn needs_surrogate(self) -> bool {
        matches!(self, Self::Ei | Self::Ucb | Self::Ts)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ei => "ei",
            Self::Ucb => "ucb",
            Self::Ts => "ts",
            Self::Random => "random",
            Self::GreedyEa => "greedy-ea",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionScores {
    pub ids: Vec<usize>,
    pub raw: Vec<f64>,
    /// Prior-weighted scores, present after [`bio_augment`].
    pub weighted: Option<Vec<f64>>,
}

impl AcquisitionScores {
    pub fn new(ids: Vec<usize>, raw: Vec<f64>) -> Result<Self> {
        if ids.len() != raw.len() {
            return Err(Error::Misaligned("acquisition ids and scores"));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(invalid("acquisition scores must be finite"));
        }
        Ok(Self {
            ids,
            raw,
            weighted: None,
        })
    }

    /// Scores used for selection: weighted when present, raw otherwise.
    pub fn effective(&self) -> &[f64] {
        self.weighted.as_deref().unwrap_or(&self.raw)
    }
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Expected improvement over `y_best`: `σ·(Z·Φ(Z) + φ(Z))` with
/// `Z = (μ - y_best)/σ`, clamped at 0.
pub fn ei(posterior: &Posterior, y_best: f64) -> Result<AcquisitionScores> {
    let raw = posterior
        .mean
        .iter()
        .zip(&posterior.sd)
        .map(|(&mu, &sd)| {
            let z = (mu - y_best) / sd;
            (sd * (z * normal_cdf(z) + normal_pdf(z))).max(0.0)
        })
        .collect();
    AcquisitionScores::new(posterior.ids.clone(), raw)
}

/// Upper confidence bound `μ + κ·σ`.
pub fn ucb(posterior: &Posterior, kappa: f64) -> Result<AcquisitionScores> {
    if !(kappa >= 0.0) {
        return Err(invalid(format!("kappa must be non-negative, got {kappa}")));
    }
    let raw = posterior
        .mean
        .iter()
        .zip(&posterior.sd)
        .map(|(mu, sd)| mu + kappa * sd)
        .collect();
    AcquisitionScores::new(posterior.ids.clone(), raw)
}

/// Thompson sampling: one posterior draw per candidate row of `x`.
pub fn ts<M: ProbabilisticModel + ?Sized>(
    model: &M,
    x: &nalgebra::DMatrix<f64>,
    ids: Vec<usize>,
    seed: u64,
) -> Result<AcquisitionScores> {
    if ids.len() != x.nrows() {
        return Err(Error::Misaligned("candidate ids and feature rows"));
    }
    AcquisitionScores::new(ids, model.sample(x, seed)?)
}

/// Multiplies scores by `π(x)^(β/L)` after shifting them to be positive.
///
/// The weight is evaluated as `exp((β/L)·ln π)`, so a zero exponent leaves the
/// shifted scores bit-for-bit unchanged.
pub fn bio_augment(
    scores: &AcquisitionScores,
    prior: &PriorWeights,
    beta: f64,
    n_labeled: usize,
) -> Result<AcquisitionScores> {
    if scores.ids != prior.ids {
        return Err(Error::Misaligned("acquisition scores and prior"));
    }
    if !(beta >= 0.0) {
        return Err(invalid(format!("beta must be non-negative, got {beta}")));
    }
    if n_labeled == 0 {
        return Err(invalid("prior weighting needs at least one labeled point"));
    }
    let exponent = beta / n_labeled as f64;
    let min = scores.raw.iter().copied().fold(f64::INFINITY, f64::min);
    let weighted = scores
        .raw
        .iter()
        .zip(&prior.log_prob)
        .map(|(&a, &lp)| (a - min + SHIFT_EPS) * (exponent * lp).exp())
        .collect();
    Ok(AcquisitionScores {
        ids: scores.ids.clone(),
        raw: scores.raw.clone(),
        weighted: Some(weighted),
    })
}

/// The `b` best candidates by effective score, descending. Ties fall back to
/// the raw score, then to id order.
pub fn select_batch(scores: &AcquisitionScores, b: usize) -> Result<Vec<usize>> {
    let n = scores.ids.len();
    if b == 0 || b > n {
        return Err(invalid(format!(
            "batch size {b} out of range for {n} candidates"
        )));
    }
    let key = scores.effective();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        key[j]
            .total_cmp(&key[i])
            .then(scores.raw[j].total_cmp(&scores.raw[i]))
            .then(scores.ids[i].cmp(&scores.ids[j]))
    });
    Ok(order[..b].iter().map(|&i| scores.ids[i]).collect())
}

/// Uniform sample of `b` candidates without replacement.
pub fn random_policy(unlabeled: &[usize], b: usize, seed: u64) -> Result<Vec<usize>> {
    if b > unlabeled.len() {
        return Err(invalid(format!(
            "batch size {b} exceeds {} unlabeled candidates",
            unlabeled.len()
        )));
    }
    let mut rng = rng_from_seed(seed);
    Ok(sample(&mut rng, unlabeled.len(), b)
        .into_iter()
        .map(|i| unlabeled[i])
        .collect())
}

/// Top-`b` candidates by prior probability, ties by id order.
pub fn greedy_ea_policy(prior: &PriorWeights, b: usize) -> Result<Vec<usize>> {
    let n = prior.ids.len();
    if b == 0 || b > n {
        return Err(invalid(format!(
            "batch size {b} out of range for {n} candidates"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        prior.log_prob[j]
            .total_cmp(&prior.log_prob[i])
            .then(prior.ids[i].cmp(&prior.ids[j]))
    });
    Ok(order[..b].iter().map(|&i| prior.ids[i]).collect())
}
