use serde::{Deserialize, Serialize};

use super::Posterior;
use crate::error::{invalid, Result};
use crate::util::ceil_count;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// LL and RMSE on one subset of points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetric {
    /// Fraction of points (by true label) the subset covers; 1.0 is global.
    pub fraction: f64,
    pub n: usize,
    pub ll: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub global: SubsetMetric,
    pub top: Vec<SubsetMetric>,
}

fn subset_metric(post: &Posterior, y_true: &[f64], idx: &[usize], fraction: f64) -> SubsetMetric {
    let n = idx.len() as f64;
    let (mut ll, mut se) = (0.0, 0.0);
    for &i in idx {
        let r = y_true[i] - post.mean[i];
        let var = post.sd[i] * post.sd[i];
        ll += -0.5 * (LN_2PI + var.ln()) - r * r / (2.0 * var);
        se += r * r;
    }
    SubsetMetric {
        fraction,
        n: idx.len(),
        ll: ll / n,
        rmse: (se / n).sqrt(),
    }
}

/// Mean Gaussian log-likelihood and RMSE, globally and on the subsets whose
/// true labels fall in the top `q` fraction for each `q` in `fractions`.
pub fn eval_metrics(post: &Posterior, y_true: &[f64], fractions: &[f64]) -> Result<MetricRecord> {
    if y_true.len() != post.len() {
        return Err(crate::Error::Misaligned("posterior and true labels"));
    }
    if post.is_empty() {
        return Err(invalid("no points to evaluate"));
    }
    if let Some(q) = fractions.iter().find(|q| !(**q > 0.0 && **q <= 1.0)) {
        return Err(invalid(format!("fraction {q} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..post.len()).collect();
    order.sort_by(|&a, &b| {
        y_true[b]
            .total_cmp(&y_true[a])
            .then(post.ids[a].cmp(&post.ids[b]))
    });
    let global = subset_metric(post, y_true, &order, 1.0);
    let top = fractions
        .iter()
        .map(|&q| {
            let k = ceil_count(q, order.len());
            subset_metric(post, y_true, &order[..k], q)
        })
        .collect();
    Ok(MetricRecord { global, top })
}
