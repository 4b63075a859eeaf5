//! `enrich`, `eval-surrogate` and `correlate`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use biobo::enrich::{enrich_indices, top_fraction, EnrichmentRow, EnrichmentTable};
use biobo::genepool::{fuse, load_labels, parse_gmt, train_test_split, GenePool, PoolState};
use biobo::surrogate::{eval_metrics, MetricRecord, ProbabilisticModel, Surrogate};
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::output::fmt_f64;
use crate::run::read_run_log;
use crate::spec::{short_hash, ExperimentSpec};
use crate::stats::{pearson, spearman};

/// Enrichment of the top `fraction` of a labeled set.
///
/// The label file defines the background pool. With a run log, only the
/// genes that run labeled (and the values it observed) form the labeled set.
pub struct EnrichInput<'a> {
    pub labels: &'a Path,
    pub gmt: &'a Path,
    pub fraction: f64,
    pub run: Option<&'a Path>,
}

pub struct EnrichOutput {
    pub sample_size: usize,
    pub table: EnrichmentTable,
    /// Digest of the inputs, used as the output header.
    pub hash: String,
}

pub fn enrich(input: &EnrichInput) -> Result<EnrichOutput> {
    let labels = load_labels(input.labels)?;
    let ids: Vec<String> = labels.keys().cloned().collect();
    let values: Vec<f64> = labels.values().copied().collect();
    let n = ids.len();
    // The background pool needs no features.
    let pool = GenePool::new(
        ids,
        BTreeMap::from([("none".to_string(), DMatrix::zeros(n, 0))]),
        values,
    )?;
    let db = parse_gmt(input.gmt)?;

    let mut hasher_input = fs::read(input.labels)?;
    hasher_input.extend(fs::read(input.gmt)?);
    hasher_input.extend(input.fraction.to_le_bytes());

    let mut state = PoolState::new(pool.len());
    match input.run {
        Some(run_path) => {
            hasher_input.extend(fs::read(run_path)?);
            let log = read_run_log(run_path)?;
            for rec in &log.records {
                for (id, &v) in rec.batch.iter().zip(&rec.batch_values) {
                    let idx = pool
                        .index_of(id)
                        .with_context(|| format!("run gene `{id}` is not in the label file"))?;
                    state.observe(idx, v)?;
                }
            }
        }
        None => {
            for i in 0..pool.len() {
                state.observe(i, pool.true_label(i))?;
            }
        }
    }
    let sample = top_fraction(&state, input.fraction)?;
    let table = enrich_indices(&sample, &db.index(&pool))?;
    log::info!(
        "analyzed {} of {} labeled genes; {} pathways tested, {} significant",
        sample.len(),
        state.n_labeled(),
        table.tested(),
        table.significant().count()
    );
    Ok(EnrichOutput {
        sample_size: sample.len(),
        table,
        hash: short_hash(&hasher_input),
    })
}

pub fn write_enrichment<'a, W: Write>(
    hash: &str,
    rows: impl IntoIterator<Item = &'a EnrichmentRow>,
    mut out: W,
) -> Result<()> {
    writeln!(out, "# spec {hash}")?;
    EnrichmentTable::write_csv(rows, out)?;
    Ok(())
}

/// One surrogate evaluated on one seed's held-out split.
#[derive(Debug, Clone)]
pub struct SurrogateEval {
    pub config: String,
    pub seed: u64,
    pub n_train: usize,
    pub metrics: MetricRecord,
}

/// Trains each surrogate × feature set of the grid on the train split and
/// scores it on the test split, for every seed.
pub fn eval_surrogates(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<SurrogateEval>> {
    let models = spec.model_configs();
    let cells: Vec<_> = spec
        .seeds
        .iter()
        .flat_map(|&s| models.iter().map(move |m| (m.clone(), s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let mut evals: Vec<SurrogateEval> = pool.install(|| {
        cells
            .par_iter()
            .map(|(cfg, seed)| -> Result<SurrogateEval> {
                let data = spec.dataset(*seed)?;
                let pool = &data.pool;
                let names: Vec<String> = if cfg.features.is_empty() {
                    pool.modality_names().map(str::to_string).collect()
                } else {
                    cfg.features.clone()
                };
                let x = fuse(pool, &names)?;
                let (train, test) = train_test_split(pool, spec.eval.test_fraction, *seed)?;
                let y: Vec<f64> = train.iter().map(|&i| pool.true_label(i)).collect();
                let model = Surrogate::fit(
                    cfg.surrogate,
                    &x.select_rows(train.iter()),
                    &y,
                    &cfg.gp,
                    &cfg.ensemble,
                    *seed,
                )?;
                let test_ids: Vec<usize> = test.iter().copied().collect();
                let post = model.predict(&x.select_rows(test_ids.iter()), test_ids.clone())?;
                let truth: Vec<f64> = test_ids.iter().map(|&i| pool.true_label(i)).collect();
                Ok(SurrogateEval {
                    config: cfg.model_label(),
                    seed: *seed,
                    n_train: train.len(),
                    metrics: eval_metrics(&post, &truth, &spec.eval.fractions)?,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    evals.sort_by(|a, b| a.config.cmp(&b.config).then(a.seed.cmp(&b.seed)));
    Ok(evals)
}

fn pct(f: f64) -> String {
    format!("{}", (f * 1e6).round() / 1e4)
}

pub fn write_metrics<W: Write>(
    hash: &str,
    fractions: &[f64],
    evals: &[SurrogateEval],
    mut out: W,
) -> Result<()> {
    writeln!(out, "# spec {hash}")?;
    let mut header = vec![
        "config".to_string(),
        "seed".into(),
        "n_train".into(),
        "n_test".into(),
        "ll".into(),
        "rmse".into(),
    ];
    for &f in fractions {
        header.push(format!("ll_top{}", pct(f)));
        header.push(format!("rmse_top{}", pct(f)));
    }
    writeln!(out, "{}", header.join(","))?;
    for e in evals {
        let m = &e.metrics;
        let mut row = vec![
            e.config.clone(),
            e.seed.to_string(),
            e.n_train.to_string(),
            m.global.n.to_string(),
            fmt_f64(m.global.ll),
            fmt_f64(m.global.rmse),
        ];
        for t in &m.top {
            row.push(fmt_f64(t.ll));
            row.push(fmt_f64(t.rmse));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Spearman,
    Pearson,
}

impl Method {
    pub fn apply(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Method::Spearman => spearman(x, y),
            Method::Pearson => pearson(x, y),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Method::Spearman => "spearman",
            Method::Pearson => "pearson",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub metric: String,
    pub method: &'static str,
    pub n: usize,
    pub value: f64,
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>>>()
        .with_context(|| path.display().to_string())?;
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .with_context(|| format!("{} has no `{name}` column", path.display()))
}

const KEY_COLUMNS: [&str; 4] = ["config", "seed", "n_train", "n_test"];

/// Joins final recall with surrogate metrics on `(config, seed)` and
/// correlates recall against every metric column.
pub fn correlate(
    recall_path: &Path,
    metrics_path: &Path,
    method: Method,
    acquisition: Option<&str>,
) -> Result<Vec<Correlation>> {
    let (rh, rrows) = read_csv(recall_path)?;
    let (rc, rs, rv) = (
        column(&rh, "config", recall_path)?,
        column(&rh, "seed", recall_path)?,
        column(&rh, "final_recall", recall_path)?,
    );
    let ra = rh.iter().position(|h| h == "acquisition");
    let mut recall: BTreeMap<(String, String), f64> = BTreeMap::new();
    for row in &rrows {
        if let (Some(want), Some(a)) = (acquisition, ra) {
            if row[a] != want {
                continue;
            }
        }
        let key = (row[rc].clone(), row[rs].clone());
        let v: f64 = row[rv]
            .parse()
            .with_context(|| format!("recall `{}`", row[rv]))?;
        if recall.insert(key.clone(), v).is_some() {
            bail!(
                "several recall rows for config `{}` seed {}; choose one with --acquisition",
                key.0,
                key.1
            );
        }
    }

    let (mh, mrows) = read_csv(metrics_path)?;
    let (mc, ms) = (
        column(&mh, "config", metrics_path)?,
        column(&mh, "seed", metrics_path)?,
    );
    let metric_cols: Vec<usize> = (0..mh.len())
        .filter(|&i| !KEY_COLUMNS.contains(&mh[i].as_str()))
        .collect();
    let mut joined: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut seen = BTreeSet::new();
    for row in &mrows {
        let key = (row[mc].clone(), row[ms].clone());
        if !seen.insert(key.clone()) {
            bail!(
                "duplicate metrics row for config `{}` seed {}",
                key.0,
                key.1
            );
        }
        let Some(&r) = recall.get(&key) else { continue };
        let values = metric_cols
            .iter()
            .map(|&i| {
                row[i]
                    .parse::<f64>()
                    .with_context(|| format!("metric `{}`", row[i]))
            })
            .collect::<Result<Vec<_>>>()?;
        joined.push((r, values));
    }
    if joined.is_empty() {
        bail!("recall and metrics files share no (config, seed) pairs");
    }
    let x: Vec<f64> = joined.iter().map(|j| j.0).collect();
    Ok(metric_cols
        .iter()
        .enumerate()
        .map(|(k, &col)| {
            let y: Vec<f64> = joined.iter().map(|j| j.1[k]).collect();
            Correlation {
                metric: mh[col].clone(),
                method: method.name(),
                n: x.len(),
                value: method.apply(&y, &x),
            }
        })
        .collect())
}

pub fn write_correlations<W: Write>(hash: &str, rows: &[Correlation], mut out: W) -> Result<()> {
    writeln!(out, "# spec {hash}")?;
    writeln!(out, "metric,method,n,correlation")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.metric,
            r.method,
            r.n,
            fmt_f64(r.value)
        )?;
    }
    out.flush()?;
    Ok(())
}
