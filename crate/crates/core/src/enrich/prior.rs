use serde::{Deserialize, Serialize};

use super::EnrichmentTable;
use crate::error::{invalid, Result};
use crate::genepool::{PathwayIndex, PoolState};

/// Adjusted p-value threshold for a pathway to contribute to the prior.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// How combined scores of all significant pathways containing a gene are
/// summarized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl Aggregation {
    /// Aggregate of `values`; the empty aggregate is 0.
    pub fn apply(self, values: &[f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        match self {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Selection distribution over unlabeled candidates.
///
/// `log_prob` is exact; `prob` is its exponential floored at the smallest
/// positive normal `f64`, so very peaked priors keep every probability
/// strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorWeights {
    pub ids: Vec<usize>,
    pub score: Vec<f64>,
    pub prob: Vec<f64>,
    pub log_prob: Vec<f64>,
}

impl PriorWeights {
    pub fn uniform(ids: Vec<usize>) -> Self {
        let n = ids.len() as f64;
        let base = logit(1.0 / n);
        Self {
            score: vec![base; ids.len()],
            prob: vec![1.0 / n; ids.len()],
            log_prob: vec![-n.ln(); ids.len()],
            ids,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `ln(max π / min π)`, always finite.
    pub fn log_max_min_ratio(&self) -> f64 {
        let (lo, hi) = self
            .log_prob
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if self.log_prob.is_empty() {
            0.0
        } else {
            hi - lo
        }
    }

    pub fn max_min_ratio(&self) -> f64 {
        self.log_max_min_ratio().exp()
    }

    pub fn is_uniform(&self) -> bool {
        self.log_max_min_ratio() == 0.0
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Softmax prior over the unlabeled genes of `state`.
///
/// `s(x) = logit(1/U) + agg(C(x)) / temperature`, where `C(x)` holds the
/// combined scores of pathways containing `x` with adjusted p below
/// [`SIGNIFICANCE_LEVEL`]. Without any significant pathway the prior is
/// exactly uniform.
pub fn build_prior(
    state: &PoolState,
    table: &EnrichmentTable,
    index: &PathwayIndex,
    temperature: f64,
    agg: Aggregation,
) -> Result<PriorWeights> {
    let ids = state.unlabeled_ids();
    let u = ids.len();
    if u < 2 {
        return Err(invalid(format!(
            "prior needs at least 2 unlabeled genes, got {u}"
        )));
    }
    if !(temperature > 0.0) {
        return Err(invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }

    let mut pathway_score: Vec<Option<f64>> = vec![None; index.names.len()];
    let mut any_significant = false;
    for row in table.significant() {
        if let Some(p) = index.position(&row.pathway) {
            pathway_score[p] = Some(row.combined_score);
            any_significant = true;
        }
    }
    if !any_significant {
        return Ok(PriorWeights::uniform(ids));
    }

    let base = logit(1.0 / u as f64);
    let mut buf = Vec::new();
    let score: Vec<f64> = ids
        .iter()
        .map(|&g| {
            buf.clear();
            buf.extend(
                index.gene_pathways[g]
                    .iter()
                    .filter_map(|&p| pathway_score[p]),
            );
            base + agg.apply(&buf) / temperature
        })
        .collect();

    let max = score.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + score.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let log_prob: Vec<f64> = score.iter().map(|s| s - lse).collect();
    let prob = log_prob
        .iter()
        .map(|lp| lp.exp().max(f64::MIN_POSITIVE))
        .collect();
    Ok(PriorWeights {
        ids,
        score,
        prob,
        log_prob,
    })
}
