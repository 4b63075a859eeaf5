//! `run` and `report`: grid execution, per-run logs and seed aggregation.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use biobo::runner::{run, CycleRecord, RunConfig, RunResult};
use rayon::prelude::*;

use crate::output::{create_with_header, fmt_f64};
use crate::spec::{config_hash, Dataset, ExperimentSpec};
use crate::stats::mean_sem;

/// One finished grid cell.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config_hash: String,
    pub label: String,
    pub seed: u64,
    pub result: RunResult,
}

/// Runs every grid cell for every seed on a pool of `jobs` threads
/// (0 = one per core). Output order is config-major, then seed.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<RunOutcome>> {
    let configs = spec.configs();
    let mut datasets: BTreeMap<u64, Arc<Dataset>> = BTreeMap::new();
    if spec.shared_dataset() {
        let shared = Arc::new(spec.dataset(spec.seeds[0])?);
        for &s in &spec.seeds {
            datasets.insert(s, Arc::clone(&shared));
        }
    } else {
        for &s in &spec.seeds {
            datasets.insert(s, Arc::new(spec.dataset(s)?));
        }
    }
    let cells: Vec<(RunConfig, u64)> = configs
        .iter()
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c.clone(), s)))
        .collect();
    log::info!(
        "{} configurations x {} seeds = {} runs",
        configs.len(),
        spec.seeds.len(),
        cells.len()
    );
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    pool.install(|| {
        cells
            .par_iter()
            .map(|(cfg, seed)| {
                let cfg = RunConfig {
                    seed: *seed,
                    ..cfg.clone()
                };
                let data = &datasets[seed];
                let db = data.database(&cfg.prior)?;
                let label = cfg.label();
                let result =
                    run(&data.pool, &db, &cfg).with_context(|| format!("{label}, seed {seed}"))?;
                log::info!(
                    "{label} seed {seed}: final recall {}",
                    result.final_recall()
                );
                Ok(RunOutcome {
                    config_hash: config_hash(&cfg),
                    label,
                    seed: *seed,
                    result,
                })
            })
            .collect()
    })
}

/// Per-cycle seed statistics of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub config: String,
    pub cycle: usize,
    pub n_runs: usize,
    pub mean_recall: f64,
    pub sem: f64,
    pub mean_labels: f64,
}

/// Groups runs by label and summarizes each cycle. Runs that stopped early
/// contribute only to the cycles they reached.
pub fn aggregate<'a>(
    runs: impl IntoIterator<Item = (&'a str, &'a [CycleRecord])>,
) -> Vec<AggregateRow> {
    let mut by_config: BTreeMap<&str, Vec<&[CycleRecord]>> = BTreeMap::new();
    for (label, records) in runs {
        by_config.entry(label).or_default().push(records);
    }
    let mut rows = Vec::new();
    for (config, runs) in by_config {
        let longest = runs.iter().map(|r| r.len()).max().unwrap_or(0);
        for cycle in 0..longest {
            let at: Vec<&CycleRecord> = runs.iter().filter_map(|r| r.get(cycle)).collect();
            let recalls: Vec<f64> = at.iter().map(|r| r.cumulative_recall).collect();
            let (mean_recall, sem) = mean_sem(&recalls);
            let mean_labels =
                at.iter().map(|r| r.labels_used as f64).sum::<f64>() / at.len() as f64;
            rows.push(AggregateRow {
                config: config.to_string(),
                cycle,
                n_runs: at.len(),
                mean_recall,
                sem,
                mean_labels,
            });
        }
    }
    rows
}

fn run_file_name(o: &RunOutcome) -> String {
    format!("{}-seed{}.jsonl", o.config_hash, o.seed)
}

/// Writes per-run JSONL logs plus `summary.csv`, `configs.csv`,
/// `recall.csv`, `aggregate.csv` and the resolved `spec.toml` into `dir`.
pub fn write_run_outputs(dir: &Path, spec: &ExperimentSpec, outcomes: &[RunOutcome]) -> Result<()> {
    let hash = spec.hash();
    let runs_dir = dir.join("runs");
    fs::create_dir_all(&runs_dir)?;
    for o in outcomes {
        let mut w = create_with_header(&runs_dir.join(run_file_name(o)), &hash)?;
        writeln!(w, "# config {} {} seed {}", o.config_hash, o.label, o.seed)?;
        o.result.write_jsonl(&mut w)?;
        w.flush()?;
    }

    let mut w = create_with_header(&dir.join("summary.csv"), &hash)?;
    writeln!(w, "config_hash,seed,final_recall,cycles,labels_used")?;
    for o in outcomes {
        writeln!(
            w,
            "{},{},{},{},{}",
            o.config_hash,
            o.seed,
            fmt_f64(o.result.final_recall()),
            o.result.cycles_run(),
            o.result.labels_used()
        )?;
    }
    w.flush()?;

    let mut w = create_with_header(&dir.join("configs.csv"), &hash)?;
    writeln!(w, "config_hash,config")?;
    let mut seen = std::collections::BTreeSet::new();
    for o in outcomes {
        if seen.insert(&o.config_hash) {
            writeln!(w, "{},{}", o.config_hash, o.label)?;
        }
    }
    w.flush()?;

    let mut w = create_with_header(&dir.join("recall.csv"), &hash)?;
    writeln!(w, "config,acquisition,seed,final_recall")?;
    for o in outcomes {
        let model = o.result.config.model_label();
        let acquisition = o
            .label
            .strip_suffix(&format!("/{model}"))
            .unwrap_or(&o.label);
        writeln!(
            w,
            "{model},{acquisition},{},{}",
            o.seed,
            fmt_f64(o.result.final_recall())
        )?;
    }
    w.flush()?;

    let rows = aggregate(
        outcomes
            .iter()
            .map(|o| (o.label.as_str(), o.result.records.as_slice())),
    );
    let mut w = create_with_header(&dir.join("aggregate.csv"), &hash)?;
    writeln!(w, "config,cycle,n_runs,mean_recall,sem,mean_labels_used")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.config,
            r.cycle,
            r.n_runs,
            fmt_f64(r.mean_recall),
            fmt_f64(r.sem),
            fmt_f64(r.mean_labels)
        )?;
    }
    w.flush()?;

    let text = toml::to_string(spec).context("serializing spec")?;
    let mut w = create_with_header(&dir.join("spec.toml"), &hash)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// A run log read back from disk.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub spec_hash: String,
    pub config_hash: String,
    pub label: String,
    pub seed: u64,
    pub records: Vec<CycleRecord>,
}

pub fn read_run_log(path: &Path) -> Result<RunLog> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let (mut spec_hash, mut meta) = (None, None);
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if let Some(rest) = line.strip_prefix("# spec ") {
            spec_hash = Some(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("# config ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            match parts.as_slice() {
                [hash, label @ .., "seed", seed] if !label.is_empty() => {
                    meta = Some((hash.to_string(), label.join(" "), seed.parse::<u64>()?))
                }
                _ => bail!("{}:{}: malformed config header", path.display(), i + 1),
            }
        } else if !line.trim().is_empty() {
            records.push(
                serde_json::from_str(&line)
                    .with_context(|| format!("{}:{}", path.display(), i + 1))?,
            );
        }
    }
    let Some((config_hash, label, seed)) = meta else {
        bail!("{}: missing config header", path.display());
    };
    Ok(RunLog {
        spec_hash: spec_hash.unwrap_or_default(),
        config_hash,
        label,
        seed,
        records,
    })
}

/// All `*.jsonl` run logs in `dir` or its `runs/` subdirectory, sorted by
/// file name.
pub fn find_run_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let sub = dir.join("runs");
    let dir = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no run logs in {}", dir.display());
    }
    Ok(paths)
}

/// Recomputes per-cycle statistics from the run logs in `dir` and writes
/// them as TSV with columns `cycle, config, mean_recall, sem`.
pub fn write_report<W: Write>(dir: &Path, mut out: W) -> Result<Vec<AggregateRow>> {
    let logs = find_run_logs(dir)?
        .iter()
        .map(|p| read_run_log(p))
        .collect::<Result<Vec<_>>>()?;
    let hashes: std::collections::BTreeSet<&str> =
        logs.iter().map(|l| l.spec_hash.as_str()).collect();
    if hashes.len() > 1 {
        log::warn!("run logs come from {} different specs", hashes.len());
    }
    let rows = aggregate(
        logs.iter()
            .map(|l| (l.label.as_str(), l.records.as_slice())),
    );
    if let [hash] = hashes.into_iter().collect::<Vec<_>>().as_slice() {
        writeln!(out, "# spec {hash}")?;
    }
    writeln!(out, "cycle\tconfig\tmean_recall\tsem")?;
    for r in &rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.cycle,
            r.config,
            fmt_f64(r.mean_recall),
            fmt_f64(r.sem)
        )?;
    }
    out.flush()?;
    Ok(rows)
}
