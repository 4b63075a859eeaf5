//! Seeded synthetic benchmark: clustered embeddings where each cluster is a
//! pathway and a few designated clusters carry an additive phenotype bonus.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{GenePool, PathwayDb};
use crate::error::{invalid, Result};
use crate::util::rng_from_seed;

const JITTER_SD: f64 = 0.3;
const SIGNAL_BONUS: f64 = 2.0;
pub const SYNTH_MODALITY: &str = "embedding";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub n_genes: usize,
    pub d: usize,
    pub n_pathways: usize,
    pub signal_pathways: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

/// Generates a pool and its pathway database.
///
/// Clusters are assigned round-robin and then shuffled, so cluster sizes
/// differ by at most one. Signal clusters are drawn by the seed.
pub fn synth_benchmark(params: &SynthParams) -> Result<(GenePool, PathwayDb)> {
    let SynthParams {
        n_genes,
        d,
        n_pathways,
        signal_pathways,
        noise_sd,
        seed,
    } = *params;
    if n_genes < 50 {
        return Err(invalid(format!(
            "n_genes must be at least 50, got {n_genes}"
        )));
    }
    if d == 0 {
        return Err(invalid("embedding dimension must be positive"));
    }
    if n_pathways == 0 || n_pathways > n_genes {
        return Err(invalid(format!("n_pathways {n_pathways} out of range")));
    }
    if signal_pathways == 0 || signal_pathways > n_pathways {
        return Err(invalid(format!(
            "signal_pathways must lie in [1, {n_pathways}], got {signal_pathways}"
        )));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(invalid(format!(
            "noise_sd must be finite and >= 0, got {noise_sd}"
        )));
    }

    let mut rng = rng_from_seed(seed);
    let centers: Vec<f64> = (0..n_pathways * d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut clusters: Vec<usize> = (0..n_pathways).collect();
    clusters.shuffle(&mut rng);
    let signal: BTreeSet<usize> = clusters[..signal_pathways].iter().copied().collect();
    // Balanced sizes, but id order says nothing about membership.
    let mut membership: Vec<usize> = (0..n_genes).map(|i| i % n_pathways).collect();
    membership.shuffle(&mut rng);

    let width = (n_genes - 1).to_string().len().max(4);
    let ids: Vec<String> = (0..n_genes).map(|i| format!("G{i:0width$}")).collect();
    let mut data = Vec::with_capacity(n_genes * d);
    let mut labels = Vec::with_capacity(n_genes);
    for &c in &membership {
        for j in 0..d {
            let z: f64 = rng.sample(StandardNormal);
            data.push(centers[c * d + j] + JITTER_SD * z);
        }
        let z: f64 = rng.sample(StandardNormal);
        let bonus = if signal.contains(&c) {
            SIGNAL_BONUS
        } else {
            0.0
        };
        labels.push(noise_sd * z + bonus);
    }

    let pname_width = (n_pathways - 1).to_string().len().max(2);
    let mut pathways: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let c = membership[i];
        let tag = if signal.contains(&c) {
            "SIGNAL"
        } else {
            "NULL"
        };
        pathways
            .entry(format!("PATHWAY_{c:0pname_width$}_{tag}"))
            .or_default()
            .insert(id.clone());
    }

    let mut modalities = BTreeMap::new();
    modalities.insert(
        SYNTH_MODALITY.to_string(),
        DMatrix::from_row_slice(n_genes, d, &data),
    );
    let pool = GenePool::new(ids, modalities, labels)?;
    Ok((
        pool,
        PathwayDb {
            pathways,
            universe_hint: Some(n_genes),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{ceil_count, rank_descending};

    fn params(seed: u64, noise_sd: f64) -> SynthParams {
        SynthParams {
            n_genes: 1000,
            d: 8,
            n_pathways: 20,
            signal_pathways: 1,
            noise_sd,
            seed,
        }
    }

    fn signal_members(pool: &GenePool, db: &PathwayDb) -> BTreeSet<usize> {
        db.pathways
            .iter()
            .filter(|(n, _)| n.ends_with("_SIGNAL"))
            .flat_map(|(_, g)| g.iter().map(|id| pool.index_of(id).unwrap()))
            .collect()
    }

    #[test]
    fn deterministic_given_seed() {
        let a = synth_benchmark(&params(5, 0.3)).unwrap();
        let b = synth_benchmark(&params(5, 0.3)).unwrap();
        assert_eq!(a, b);
        let c = synth_benchmark(&params(6, 0.3)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn partition_sizes() {
        let p = SynthParams {
            n_genes: 100,
            d: 3,
            n_pathways: 10,
            signal_pathways: 2,
            noise_sd: 0.1,
            seed: 1,
        };
        let (pool, db) = synth_benchmark(&p).unwrap();
        assert_eq!(pool.len(), 100);
        assert_eq!(db.len(), 10);
        assert!(db.pathways.values().all(|g| g.len() == 10));
        assert_eq!(
            db.pathways
                .keys()
                .filter(|k| k.ends_with("_SIGNAL"))
                .count(),
            2
        );
    }

    #[test]
    fn top_genes_concentrate_in_signal_pathway() {
        for seed in 0..5 {
            let (pool, db) = synth_benchmark(&params(seed, 0.1)).unwrap();
            let signal = signal_members(&pool, &db);
            let k = ceil_count(0.01, pool.len());
            let top = &rank_descending(pool.true_labels())[..k];
            let hits = top.iter().filter(|i| signal.contains(i)).count();
            assert!(hits as f64 >= 0.95 * k as f64, "seed {seed}: {hits}/{k}");
        }
    }

    #[test]
    fn signal_mean_gap() {
        for seed in 0..5 {
            let (pool, db) = synth_benchmark(&params(seed, 0.5)).unwrap();
            let signal = signal_members(&pool, &db);
            let (mut s, mut ns, mut o, mut no) = (0.0, 0, 0.0, 0);
            for (i, &y) in pool.true_labels().iter().enumerate() {
                if signal.contains(&i) {
                    s += y;
                    ns += 1;
                } else {
                    o += y;
                    no += 1;
                }
            }
            assert!(s / ns as f64 - o / no as f64 >= 1.5);
        }
    }

    #[test]
    fn bounds_are_checked() {
        let mut p = params(0, 0.1);
        p.n_genes = 49;
        assert!(synth_benchmark(&p).is_err());
        let mut p = params(0, 0.1);
        p.signal_pathways = 0;
        assert!(synth_benchmark(&p).is_err());
        let mut p = params(0, 0.1);
        p.signal_pathways = 21;
        assert!(synth_benchmark(&p).is_err());
    }
}
