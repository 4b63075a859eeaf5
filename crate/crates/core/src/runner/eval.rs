//! Evaluation quantities: true top-k set, cumulative recall, labeling
//! efficiency and the prior's regret factor.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::RunResult;
use crate::enrich::PriorWeights;
use crate::error::{invalid, Result};
use crate::genepool::GenePool;
use crate::util::{ceil_count, rank_descending};

/// The `⌈percentile·|pool|⌉` genes with the highest true labels.
pub fn true_topk(pool: &GenePool, percentile: f64) -> Result<BTreeSet<usize>> {
    if !(percentile > 0.0 && percentile <= 1.0) {
        return Err(invalid(format!(
            "percentile must lie in (0, 1], got {percentile}"
        )));
    }
    let k = ceil_count(percentile, pool.len());
    Ok(rank_descending(pool.true_labels())[..k]
        .iter()
        .copied()
        .collect())
}

/// Fraction of `topk` contained in `labeled`.
pub fn cumulative_topk_recall<'a>(
    labeled: impl IntoIterator<Item = &'a usize>,
    topk: &BTreeSet<usize>,
) -> Result<f64> {
    if topk.is_empty() {
        return Err(invalid("top-k set is empty"));
    }
    let hits = labeled.into_iter().filter(|i| topk.contains(i)).count();
    Ok(hits as f64 / topk.len() as f64)
}

/// `(max π / min π)^(β/L)`, evaluated in log space.
pub fn regret_factor(prior: &PriorWeights, beta: f64, n_labeled: usize) -> Result<f64> {
    if n_labeled == 0 {
        return Err(invalid("regret factor needs at least one labeled point"));
    }
    if !(beta >= 0.0) {
        return Err(invalid(format!("beta must be non-negative, got {beta}")));
    }
    Ok(regret_factor_from_log_ratio(
        prior.log_max_min_ratio(),
        beta,
        n_labeled,
    ))
}

pub(crate) fn regret_factor_from_log_ratio(log_ratio: f64, beta: f64, n_labeled: usize) -> f64 {
    if log_ratio == 0.0 || beta == 0.0 {
        return 1.0;
    }
    (beta / n_labeled as f64 * log_ratio).exp()
}

/// Relative label saving of one run over another at a recall target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Efficiency {
    Value(f64),
    Unreached,
}

impl Efficiency {
    pub fn value(self) -> Option<f64> {
        match self {
            Efficiency::Value(v) => Some(v),
            Efficiency::Unreached => None,
        }
    }
}

impl fmt::Display for Efficiency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Efficiency::Value(v) => write!(f, "{v}"),
            Efficiency::Unreached => f.write_str("unreached"),
        }
    }
}

impl Serialize for Efficiency {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Efficiency::Value(v) => s.serialize_f64(*v),
            Efficiency::Unreached => s.serialize_str("unreached"),
        }
    }
}

impl<'de> Deserialize<'de> for Efficiency {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Efficiency::Value(v)),
            Raw::Str(s) if s == "unreached" => Ok(Efficiency::Unreached),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("unexpected `{s}`"))),
        }
    }
}

/// `1 - labels(a)/labels(b)`, where `labels(r)` is the label count at which
/// run `r` first reaches `target_recall`.
pub fn labeling_efficiency(a: &RunResult, b: &RunResult, target_recall: f64) -> Efficiency {
    match (
        a.labels_to_reach(target_recall),
        b.labels_to_reach(target_recall),
    ) {
        (Some(la), Some(lb)) if lb > 0 => Efficiency::Value(1.0 - la as f64 / lb as f64),
        _ => Efficiency::Unreached,
    }
}

/// Label count at which the seed-averaged recall curve of `runs` first
/// reaches `target_recall`. Runs are aligned by cycle index; cycles missing
/// from a shorter run are skipped.
pub fn mean_curve_labels_to_reach(runs: &[RunResult], target_recall: f64) -> Option<f64> {
    let longest = runs.iter().map(|r| r.records.len()).max()?;
    (0..longest).find_map(|c| {
        let at: Vec<_> = runs.iter().filter_map(|r| r.records.get(c)).collect();
        let n = at.len() as f64;
        let recall = at.iter().map(|r| r.cumulative_recall).sum::<f64>() / n;
        (recall >= target_recall).then(|| at.iter().map(|r| r.labels_used as f64).sum::<f64>() / n)
    })
}

/// [`labeling_efficiency`] on seed-averaged recall curves.
pub fn mean_curve_efficiency(a: &[RunResult], b: &[RunResult], target_recall: f64) -> Efficiency {
    match (
        mean_curve_labels_to_reach(a, target_recall),
        mean_curve_labels_to_reach(b, target_recall),
    ) {
        (Some(la), Some(lb)) if lb > 0.0 => Efficiency::Value(1.0 - la / lb),
        _ => Efficiency::Unreached,
    }
}
