//! Command-line harness: experiment grids, enrichment reports, surrogate
//! evaluation, correlation analysis and seed aggregation.

pub mod analysis;
pub mod output;
pub mod run;
pub mod spec;
pub mod stats;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Result;
use biobo::genepool::{
    synth_benchmark, write_embeddings, write_gmt, write_labels, SynthParams, SYNTH_MODALITY,
};
use clap::{Args, Parser, Subcommand};

use crate::analysis::{EnrichInput, Method};
use crate::output::fresh_dir;
use crate::spec::{short_hash, ExperimentSpec};

#[derive(Debug, Parser)]
#[command(
    name = "biobo",
    version,
    about = "Biology-informed Bayesian optimization experiments"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Run only this seed instead of the spec's seed list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Root directory for results; each invocation writes a new subdirectory.
    #[arg(long, global = true, env = "BIOBO_OUT", default_value = "results")]
    pub out_dir: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every grid configuration for every seed.
    Run { spec: PathBuf },
    /// Enrichment analysis of the top fraction of a labeled gene set.
    Enrich {
        /// Gene labels (`gene_id,value`); also the background pool.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        gmt: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        /// Use the genes labeled by this run log instead of every gene.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Include non-significant pathways.
        #[arg(long)]
        all: bool,
    },
    /// Held-out LL/RMSE of each surrogate and feature set in the grid.
    EvalSurrogate { spec: PathBuf },
    /// Correlate final recall with surrogate metrics.
    Correlate {
        #[arg(long)]
        recall: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Spearman)]
        method: Method,
        /// Keep only recall rows of this acquisition (e.g. `bio-ucb-hm`).
        #[arg(long)]
        acquisition: Option<String>,
    },
    /// Mean recall and standard error per cycle from a run directory.
    Report { dir: PathBuf },
    /// Write a synthetic benchmark as CSV/GMT files with a matching spec.
    Synth {
        #[arg(long, default_value_t = 1000)]
        n_genes: usize,
        #[arg(long, default_value_t = 2)]
        d: usize,
        #[arg(long, default_value_t = 20)]
        n_pathways: usize,
        #[arg(long, default_value_t = 1)]
        signal_pathways: usize,
        #[arg(long, default_value_t = 0.3)]
        noise_sd: f64,
    },
}

fn load_spec(path: &Path, seed: Option<u64>) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(s) = seed {
        spec.seeds = vec![s];
    }
    Ok(spec)
}

fn finish(dir: &Path) -> Result<PathBuf> {
    println!("{}", dir.display());
    Ok(dir.to_path_buf())
}

/// Executes one command and returns the output directory it created.
pub fn execute(cli: Cli) -> Result<PathBuf> {
    let g = &cli.global;
    match cli.command {
        Command::Run { spec } => {
            let spec = load_spec(&spec, g.seed)?;
            let outcomes = run::run_experiment(&spec, g.jobs)?;
            let dir = fresh_dir(&g.out_dir, "run")?;
            run::write_run_outputs(&dir, &spec, &outcomes)?;
            finish(&dir)
        }
        Command::Enrich {
            labels,
            gmt,
            fraction,
            run,
            all,
        } => {
            let out = analysis::enrich(&EnrichInput {
                labels: &labels,
                gmt: &gmt,
                fraction,
                run: run.as_deref(),
            })?;
            let dir = fresh_dir(&g.out_dir, "enrich")?;
            let file = File::create_new(dir.join("enrichment.csv"))?;
            let rows: Vec<_> = if all {
                out.table.rows.iter().collect()
            } else {
                out.table.significant().collect()
            };
            analysis::write_enrichment(&out.hash, rows, BufWriter::new(file))?;
            finish(&dir)
        }
        Command::EvalSurrogate { spec } => {
            let spec = load_spec(&spec, g.seed)?;
            let evals = analysis::eval_surrogates(&spec, g.jobs)?;
            let dir = fresh_dir(&g.out_dir, "eval-surrogate")?;
            let file = File::create_new(dir.join("metrics.csv"))?;
            analysis::write_metrics(
                &spec.hash(),
                &spec.eval.fractions,
                &evals,
                BufWriter::new(file),
            )?;
            finish(&dir)
        }
        Command::Correlate {
            recall,
            metrics,
            method,
            acquisition,
        } => {
            let rows = analysis::correlate(&recall, &metrics, method, acquisition.as_deref())?;
            let mut bytes = std::fs::read(&recall)?;
            bytes.extend(std::fs::read(&metrics)?);
            bytes.extend(format!("{method:?}{acquisition:?}").as_bytes());
            let dir = fresh_dir(&g.out_dir, "correlate")?;
            let file = File::create_new(dir.join("correlation.csv"))?;
            analysis::write_correlations(&short_hash(&bytes), &rows, BufWriter::new(file))?;
            for r in &rows {
                eprintln!("{}\t{}\t{}", r.metric, r.method, r.value);
            }
            finish(&dir)
        }
        Command::Report { dir: input } => {
            let dir = fresh_dir(&g.out_dir, "report")?;
            let file = File::create_new(dir.join("report.tsv"))?;
            run::write_report(&input, BufWriter::new(file))?;
            finish(&dir)
        }
        Command::Synth {
            n_genes,
            d,
            n_pathways,
            signal_pathways,
            noise_sd,
        } => {
            let params = SynthParams {
                n_genes,
                d,
                n_pathways,
                signal_pathways,
                noise_sd,
                seed: g.seed.unwrap_or(0),
            };
            let (pool, db) = synth_benchmark(&params)?;
            let dir = fresh_dir(&g.out_dir, "synth")?;
            write_embeddings(dir.join("embedding.csv"), &pool, SYNTH_MODALITY)?;
            write_labels(dir.join("labels.csv"), &pool)?;
            write_gmt(dir.join("pathways.gmt"), &db)?;
            let mut w = BufWriter::new(File::create_new(dir.join("spec.toml"))?);
            writeln!(
                w,
                "[data]\nlabels = \"labels.csv\"\n\n[data.embeddings]\n{SYNTH_MODALITY} = \"embedding.csv\"\n\n\
                 [data.pathways]\nhm = \"pathways.gmt\"\n\n[grid]\n\
                 acquisitions = [\"ucb\", \"random\"]\npriors = [\"none\", \"hm\"]\n"
            )?;
            w.flush()?;
            finish(&dir)
        }
    }
}
