//! The optimization campaign: fit, enrich, weight, select, observe.

mod eval;

use std::collections::BTreeSet;
use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::acquire::{
    bio_augment, ei, greedy_ea_policy, random_policy, select_batch, ts, ucb, AcquisitionKind,
};
use crate::enrich::{build_prior, enrich_indices, top_fraction, Aggregation, PriorWeights};
use crate::error::{invalid, Error, Result};
use crate::genepool::{fuse, GenePool, PathwayDb, PathwayIndex, PoolState};
use crate::surrogate::{
    eval_metrics, EnsembleConfig, GpConfig, MetricRecord, ProbabilisticModel, Surrogate,
    SurrogateKind,
};
use crate::util::derive_seed;

pub use eval::{
    cumulative_topk_recall, labeling_efficiency, mean_curve_efficiency, mean_curve_labels_to_reach,
    regret_factor, true_topk, Efficiency,
};

const STREAM_INIT: u64 = 0;
const STREAM_POLICY: u64 = 1;
const STREAM_SURROGATE: u64 = 2;
const STREAM_THOMPSON: u64 = 3;

/// Fractions at which per-cycle surrogate diagnostics are reported.
pub const DIAGNOSTIC_FRACTIONS: [f64; 3] = [0.01, 0.05, 0.1];

/// Which pathway database feeds the prior.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum PriorSource {
    #[default]
    None,
    Go,
    Hm,
    /// Path to a GMT file, or any other named database.
    Custom(String),
}

impl PriorSource {
    pub fn is_enabled(&self) -> bool {
        !matches!(self, PriorSource::None)
    }

    pub fn label(&self) -> String {
        String::from(self.clone())
    }
}

impl From<String> for PriorSource {
    fn from(s: String) -> Self {
        match s.as_str() {
            "none" => PriorSource::None,
            "go" => PriorSource::Go,
            "hm" => PriorSource::Hm,
            _ => PriorSource::Custom(s),
        }
    }
}

impl From<PriorSource> for String {
    fn from(p: PriorSource) -> String {
        match p {
            PriorSource::None => "none".into(),
            PriorSource::Go => "go".into(),
            PriorSource::Hm => "hm".into(),
            PriorSource::Custom(s) => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub cycles: usize,
    pub batch_size: usize,
    /// Initial random design size; defaults to the batch size.
    pub init_size: Option<usize>,
    pub acquisition: AcquisitionKind,
    pub prior: PriorSource,
    pub beta: f64,
    pub temperature: f64,
    pub kappa: f64,
    pub top_fraction_for_ea: f64,
    pub recall_percentile: f64,
    pub surrogate: SurrogateKind,
    pub agg: Aggregation,
    pub seed: u64,
    /// Modalities fused into the surrogate input; empty means all of them.
    pub features: Vec<String>,
    pub gp: GpConfig,
    pub ensemble: EnsembleConfig,
    /// Evaluate the surrogate on the unlabeled pool each cycle.
    pub track_surrogate_metrics: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cycles: 20,
            batch_size: 32,
            init_size: None,
            acquisition: AcquisitionKind::Ucb,
            prior: PriorSource::None,
            beta: 1.0,
            temperature: 0.1,
            kappa: 1.0,
            top_fraction_for_ea: 0.1,
            recall_percentile: 0.01,
            surrogate: SurrogateKind::Gp,
            agg: Aggregation::Mean,
            seed: 0,
            features: Vec::new(),
            gp: GpConfig::default(),
            ensemble: EnsembleConfig::default(),
            track_surrogate_metrics: false,
        }
    }
}

impl RunConfig {
    pub fn init_size(&self) -> usize {
        self.init_size.unwrap_or(self.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 || self.batch_size == 0 || self.init_size() == 0 {
            return Err(invalid(
                "cycles, batch size and initial design size must be >= 1",
            ));
        }
        for (name, v) in [
            ("top_fraction_for_ea", self.top_fraction_for_ea),
            ("recall_percentile", self.recall_percentile),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if !(self.temperature > 0.0) {
            return Err(invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.kappa >= 0.0) {
            return Err(invalid(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.acquisition == AcquisitionKind::GreedyEa && !self.prior.is_enabled() {
            return Err(invalid("greedy-ea selection requires a prior"));
        }
        if self.acquisition.needs_surrogate() {
            match self.surrogate {
                SurrogateKind::Gp => self.gp.validate()?,
                SurrogateKind::Ensemble => self.ensemble.validate()?,
            }
        }
        Ok(())
    }

    /// Short human-readable label, e.g. `bio-ucb-hm/gp/fusion`.
    pub fn label(&self) -> String {
        let acq = match (self.acquisition, &self.prior) {
            (AcquisitionKind::Random, _) => "random".to_string(),
            (AcquisitionKind::GreedyEa, p) => format!("greedy-ea-{}", prior_tag(p)),
            (a, PriorSource::None) => a.as_str().to_string(),
            (a, p) => format!("bio-{}-{}", a.as_str(), prior_tag(p)),
        };
        format!("{acq}/{}", self.model_label())
    }

    /// Surrogate and feature part of the label, e.g. `gp/fusion`.
    pub fn model_label(&self) -> String {
        let surrogate = match self.surrogate {
            SurrogateKind::Gp => "gp",
            SurrogateKind::Ensemble => "ensemble",
        };
        let features = if self.features.is_empty() {
            "fusion".to_string()
        } else {
            self.features.join("+")
        };
        format!("{surrogate}/{features}")
    }
}

fn prior_tag(p: &PriorSource) -> String {
    match p {
        PriorSource::Custom(path) => std::path::Path::new(path)
            .file_stem()
            .map_or_else(|| path.clone(), |s| s.to_string_lossy().into_owned()),
        other => other.label(),
    }
}

/// Serde helpers writing non-finite floats as strings (`"inf"`, `"nan"`).
mod lenient_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// What happened in one cycle. Cycle 0 is the random initial design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub batch: Vec<String>,
    pub batch_values: Vec<f64>,
    pub labels_used: usize,
    pub cumulative_recall: f64,
    pub n_tested_pathways: usize,
    pub n_significant_pathways: usize,
    #[serde(with = "lenient_f64")]
    pub prior_max_min_ratio: f64,
    /// `ln(max π / min π)`, finite even when the ratio overflows.
    pub prior_log_ratio: f64,
    #[serde(with = "lenient_f64")]
    pub regret_factor: f64,
    pub surrogate_metrics: Option<MetricRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub records: Vec<CycleRecord>,
    /// The pool ran out of unlabeled candidates before the last cycle.
    pub exhausted: bool,
    pub topk_size: usize,
}

impl RunResult {
    pub fn final_recall(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_recall)
    }

    pub fn labels_used(&self) -> usize {
        self.records.last().map_or(0, |r| r.labels_used)
    }

    /// Cycles after the initial design.
    pub fn cycles_run(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn labels_to_reach(&self, target_recall: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.cumulative_recall >= target_recall)
            .map(|r| r.labels_used)
    }

    /// One JSON object per cycle record.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            write_record(r, &mut out)?;
        }
        Ok(())
    }
}

fn write_record<W: Write>(r: &CycleRecord, out: &mut W) -> std::io::Result<()> {
    let line = serde_json::to_string(r).map_err(std::io::Error::other)?;
    writeln!(out, "{line}")
}

struct PriorOutcome {
    prior: PriorWeights,
    n_tested: usize,
    n_significant: usize,
}

fn cycle_prior(
    state: &PoolState,
    index: &PathwayIndex,
    config: &RunConfig,
) -> Result<PriorOutcome> {
    let ids = state.unlabeled_ids();
    if ids.len() < 2 {
        return Ok(PriorOutcome {
            prior: PriorWeights::uniform(ids),
            n_tested: 0,
            n_significant: 0,
        });
    }
    let sample: BTreeSet<usize> = top_fraction(state, config.top_fraction_for_ea)?;
    let table = enrich_indices(&sample, index)?;
    let prior = build_prior(state, &table, index, config.temperature, config.agg)?;
    Ok(PriorOutcome {
        n_tested: table.tested(),
        n_significant: table.significant().count(),
        prior,
    })
}

/// Runs one campaign on `pool`, reading pathways from `db` when the prior is
/// enabled. Deterministic given `config`.
pub fn run(pool: &GenePool, db: &PathwayDb, config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let features = if config.acquisition.needs_surrogate() {
        let names: Vec<String> = if config.features.is_empty() {
            pool.modality_names().map(str::to_string).collect()
        } else {
            config.features.clone()
        };
        fuse(pool, &names)?
    } else {
        DMatrix::zeros(pool.len(), 0)
    };
    let uses_prior = config.prior.is_enabled() && config.acquisition != AcquisitionKind::Random;
    let index = uses_prior.then(|| db.index(pool));
    let topk = true_topk(pool, config.recall_percentile)?;

    let mut state = PoolState::new(pool.len());
    let mut records = Vec::with_capacity(config.cycles + 1);
    let observe = |state: &mut PoolState, batch: &[usize]| -> Result<(Vec<String>, Vec<f64>)> {
        let mut ids = Vec::with_capacity(batch.len());
        let mut values = Vec::with_capacity(batch.len());
        for &g in batch {
            let y = pool.true_label(g);
            state.observe(g, y)?;
            ids.push(pool.id(g).to_string());
            values.push(y);
        }
        Ok((ids, values))
    };

    let m = config.init_size().min(pool.len());
    let init = random_policy(
        &state.unlabeled_ids(),
        m,
        derive_seed(config.seed, 0, STREAM_INIT),
    )?;
    let (batch, batch_values) = observe(&mut state, &init)?;
    records.push(CycleRecord {
        cycle: 0,
        batch,
        batch_values,
        labels_used: state.n_labeled(),
        cumulative_recall: cumulative_topk_recall(state.labeled.keys(), &topk)?,
        n_tested_pathways: 0,
        n_significant_pathways: 0,
        prior_max_min_ratio: 1.0,
        prior_log_ratio: 0.0,
        regret_factor: 1.0,
        surrogate_metrics: None,
    });

    let mut exhausted = false;
    for cycle in 1..=config.cycles {
        state.cycle = cycle;
        let candidates = state.unlabeled_ids();
        if candidates.is_empty() {
            exhausted = true;
            break;
        }
        let b = config.batch_size.min(candidates.len());
        if b < config.batch_size {
            exhausted = true;
        }
        let n_labeled = state.n_labeled();
        let outcome = match &index {
            Some(index) => Some(cycle_prior(&state, index, config)?),
            None => None,
        };

        let mut surrogate_metrics = None;
        let batch = match config.acquisition {
            AcquisitionKind::Random => random_policy(
                &candidates,
                b,
                derive_seed(config.seed, cycle as u64, STREAM_POLICY),
            )?,
            AcquisitionKind::GreedyEa => {
                let outcome = outcome.as_ref().expect("validated: greedy-ea has a prior");
                greedy_ea_policy(&outcome.prior, b)?
            }
            kind => {
                let labeled: Vec<usize> = state.labeled.keys().copied().collect();
                let y: Vec<f64> = state.labeled.values().copied().collect();
                let x_train = features.select_rows(labeled.iter());
                let x_cand = features.select_rows(candidates.iter());
                let wrap = |e: Error| Error::Surrogate {
                    cycle,
                    source: Box::new(e),
                };
                let model = Surrogate::fit(
                    config.surrogate,
                    &x_train,
                    &y,
                    &config.gp,
                    &config.ensemble,
                    derive_seed(config.seed, cycle as u64, STREAM_SURROGATE),
                )
                .map_err(wrap)?;
                let posterior = model.predict(&x_cand, candidates.clone()).map_err(wrap)?;
                if config.track_surrogate_metrics {
                    let truth: Vec<f64> = candidates.iter().map(|&g| pool.true_label(g)).collect();
                    surrogate_metrics =
                        Some(eval_metrics(&posterior, &truth, &DIAGNOSTIC_FRACTIONS)?);
                }
                let mut scores = match kind {
                    AcquisitionKind::Ei => {
                        let y_best = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        ei(&posterior, y_best)?
                    }
                    AcquisitionKind::Ucb => ucb(&posterior, config.kappa)?,
                    _ => ts(
                        &model,
                        &x_cand,
                        candidates.clone(),
                        derive_seed(config.seed, cycle as u64, STREAM_THOMPSON),
                    )
                    .map_err(wrap)?,
                };
                if let Some(outcome) = &outcome {
                    scores = bio_augment(&scores, &outcome.prior, config.beta, n_labeled)?;
                }
                select_batch(&scores, b)?
            }
        };

        let (log_ratio, n_tested, n_significant) = outcome.as_ref().map_or((0.0, 0, 0), |o| {
            (o.prior.log_max_min_ratio(), o.n_tested, o.n_significant)
        });
        let (batch, batch_values) = observe(&mut state, &batch)?;
        records.push(CycleRecord {
            cycle,
            batch,
            batch_values,
            labels_used: state.n_labeled(),
            cumulative_recall: cumulative_topk_recall(state.labeled.keys(), &topk)?,
            n_tested_pathways: n_tested,
            n_significant_pathways: n_significant,
            prior_max_min_ratio: log_ratio.exp(),
            prior_log_ratio: log_ratio,
            regret_factor: eval::regret_factor_from_log_ratio(log_ratio, config.beta, n_labeled),
            surrogate_metrics,
        });
    }
    if exhausted {
        log::warn!(
            "{} (seed {}): pool exhausted after {} labels",
            config.label(),
            config.seed,
            state.n_labeled()
        );
    }

    Ok(RunResult {
        config: config.clone(),
        records,
        exhausted,
        topk_size: topk.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genepool::{synth_benchmark, SynthParams};

    fn bench(n_genes: usize, seed: u64) -> (GenePool, PathwayDb) {
        synth_benchmark(&SynthParams {
            n_genes,
            d: 3,
            n_pathways: 10,
            signal_pathways: 1,
            noise_sd: 0.3,
            seed,
        })
        .unwrap()
    }

    fn config(acquisition: AcquisitionKind, prior: PriorSource) -> RunConfig {
        RunConfig {
            cycles: 4,
            batch_size: 8,
            acquisition,
            prior,
            seed: 11,
            ..RunConfig::default()
        }
    }

    fn batches(r: &RunResult) -> Vec<Vec<String>> {
        r.records.iter().map(|c| c.batch.clone()).collect()
    }

    #[test]
    fn exhaustive_random_run_finds_everything() {
        let (pool, db) = bench(100, 1);
        let cfg = RunConfig {
            cycles: 9,
            batch_size: 10,
            acquisition: AcquisitionKind::Random,
            ..RunConfig::default()
        };
        let r = run(&pool, &db, &cfg).unwrap();
        assert_eq!(r.final_recall(), 1.0);
        assert_eq!(r.labels_used(), 100);
        assert!(!r.exhausted);
    }

    #[test]
    fn no_prior_means_unit_regret_factor() {
        let (pool, db) = bench(120, 2);
        for acq in [
            AcquisitionKind::Ei,
            AcquisitionKind::Ucb,
            AcquisitionKind::Ts,
        ] {
            let r = run(&pool, &db, &config(acq, PriorSource::None)).unwrap();
            assert!(r.records.iter().all(|c| c.regret_factor == 1.0));
            assert!(r.records.iter().all(|c| c.n_tested_pathways == 0));
        }
    }

    #[test]
    fn label_accounting_and_monotone_recall() {
        let (pool, db) = bench(150, 3);
        let mut cfg = config(
            AcquisitionKind::Ucb,
            PriorSource::Custom("synthetic".into()),
        );
        cfg.init_size = Some(5);
        let r = run(&pool, &db, &cfg).unwrap();
        assert_eq!(r.records.len(), 5);
        for (n, rec) in r.records.iter().enumerate() {
            assert_eq!(rec.cycle, n);
            assert_eq!(rec.labels_used, 5 + n * 8);
        }
        for w in r.records.windows(2) {
            assert!(w[1].cumulative_recall >= w[0].cumulative_recall);
        }
        assert!(r.records[1..].iter().all(|c| c.regret_factor >= 1.0));
    }

    #[test]
    fn zero_beta_matches_plain_acquisition() {
        let (pool, db) = bench(150, 4);
        for acq in [
            AcquisitionKind::Ei,
            AcquisitionKind::Ucb,
            AcquisitionKind::Ts,
        ] {
            let plain = run(&pool, &db, &config(acq, PriorSource::None)).unwrap();
            let mut cfg = config(acq, PriorSource::Go);
            cfg.beta = 0.0;
            let bio = run(&pool, &db, &cfg).unwrap();
            assert_eq!(batches(&plain), batches(&bio), "{}", acq.as_str());
        }
    }

    #[test]
    fn replay_is_exact() {
        let (pool, db) = bench(150, 5);
        let mut cfg = config(AcquisitionKind::Ts, PriorSource::Hm);
        cfg.surrogate = SurrogateKind::Ensemble;
        cfg.ensemble.members = 3;
        cfg.ensemble.max_epochs = 20;
        cfg.track_surrogate_metrics = true;
        let a = run(&pool, &db, &cfg).unwrap();
        let b = run(&pool, &db, &a.config).unwrap();
        assert_eq!(a, b);
        assert!(a.records[1].surrogate_metrics.is_some());
        cfg.seed += 1;
        assert_ne!(batches(&a), batches(&run(&pool, &db, &cfg).unwrap()));
    }

    #[test]
    fn exhaustion_is_flagged() {
        let (pool, db) = bench(60, 6);
        let cfg = RunConfig {
            cycles: 10,
            batch_size: 16,
            acquisition: AcquisitionKind::Ucb,
            ..RunConfig::default()
        };
        let r = run(&pool, &db, &cfg).unwrap();
        assert!(r.exhausted);
        assert_eq!(r.labels_used(), 60);
        assert_eq!(r.final_recall(), 1.0);
        assert!(r.cycles_run() < 10);
    }

    #[test]
    fn greedy_ea_needs_prior() {
        let (pool, db) = bench(100, 7);
        let bad = config(AcquisitionKind::GreedyEa, PriorSource::None);
        assert!(matches!(
            run(&pool, &db, &bad),
            Err(Error::InvalidParameter(_))
        ));
        let r = run(
            &pool,
            &db,
            &config(AcquisitionKind::GreedyEa, PriorSource::Go),
        )
        .unwrap();
        assert_eq!(r.labels_used(), 8 + 4 * 8);
    }

    #[test]
    fn surrogate_failure_reports_cycle() {
        let (pool, db) = bench(100, 8);
        let mut cfg = config(AcquisitionKind::Ucb, PriorSource::None);
        cfg.features = vec!["missing".into()];
        assert!(run(&pool, &db, &cfg).is_err());
        let mut cfg = config(AcquisitionKind::Ucb, PriorSource::None);
        cfg.surrogate = SurrogateKind::Ensemble;
        cfg.ensemble.learning_rate = 1e300;
        cfg.ensemble.max_epochs = 5;
        match run(&pool, &db, &cfg) {
            Err(Error::Surrogate { cycle, .. }) => assert_eq!(cycle, 1),
            other => panic!("expected surrogate error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let ok = RunConfig::default();
        assert!(ok.validate().is_ok());
        assert_eq!(ok.init_size(), 32);
        for bad in [
            RunConfig {
                cycles: 0,
                ..ok.clone()
            },
            RunConfig {
                batch_size: 0,
                ..ok.clone()
            },
            RunConfig {
                init_size: Some(0),
                ..ok.clone()
            },
            RunConfig {
                top_fraction_for_ea: 0.0,
                ..ok.clone()
            },
            RunConfig {
                recall_percentile: 1.5,
                ..ok.clone()
            },
            RunConfig {
                temperature: 0.0,
                ..ok.clone()
            },
            RunConfig {
                beta: -1.0,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn labels() {
        let mut cfg = config(AcquisitionKind::Ucb, PriorSource::Hm);
        assert_eq!(cfg.label(), "bio-ucb-hm/gp/fusion");
        cfg.prior = PriorSource::None;
        cfg.features = vec!["a".into(), "b".into()];
        assert_eq!(cfg.label(), "ucb/gp/a+b");
        cfg.acquisition = AcquisitionKind::Random;
        cfg.prior = PriorSource::Custom("dir/reactome.gmt".into());
        assert_eq!(cfg.label(), "random/gp/a+b");
        cfg.acquisition = AcquisitionKind::GreedyEa;
        assert_eq!(cfg.label(), "greedy-ea-reactome/gp/a+b");
    }

    #[test]
    fn config_and_records_round_trip() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"acquisition":"ei","prior":"hm","beta":0.5}"#).unwrap();
        assert_eq!(cfg.prior, PriorSource::Hm);
        assert_eq!(cfg.cycles, 20);
        assert!(serde_json::from_str::<RunConfig>(r#"{"cycels":3}"#).is_err());

        let (pool, db) = bench(100, 9);
        let r = run(&pool, &db, &config(AcquisitionKind::Ucb, PriorSource::Go)).unwrap();
        let mut buf = Vec::new();
        r.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let back: Vec<CycleRecord> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(back, r.records);

        let mut rec = r.records[0].clone();
        rec.prior_max_min_ratio = f64::INFINITY;
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains(r#""prior_max_min_ratio":"inf""#));
        let back: CycleRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back.prior_max_min_ratio, f64::INFINITY);
    }
}
