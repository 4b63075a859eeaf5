//! TOML experiment description files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use biobo::acquire::AcquisitionKind;
use biobo::genepool::{
    build_pool, load_embeddings, load_labels, parse_gmt, synth_benchmark, GenePool, PathwayDb,
    SynthParams,
};
use biobo::runner::{PriorSource, RunConfig};
use biobo::surrogate::SurrogateKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FUSION: &str = "fusion";

fn default_seeds() -> Vec<u64> {
    (0..7).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub data: Option<DataSpec>,
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub grid: GridSpec,
    /// Overrides applied to every grid cell.
    #[serde(default)]
    pub defaults: RunConfig,
    #[serde(default)]
    pub eval: EvalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// Modality name to embedding CSV.
    pub embeddings: BTreeMap<String, PathBuf>,
    pub labels: PathBuf,
    /// Database name (`go`, `hm`, ...) to GMT file.
    #[serde(default)]
    pub pathways: BTreeMap<String, PathBuf>,
}

/// Generator parameters. Without `seed`, each run seed draws its own
/// benchmark instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_genes: usize,
    pub d: usize,
    pub n_pathways: usize,
    pub signal_pathways: usize,
    pub noise_sd: f64,
    pub seed: Option<u64>,
}

impl SyntheticSpec {
    pub fn params(&self, run_seed: u64) -> SynthParams {
        SynthParams {
            n_genes: self.n_genes,
            d: self.d,
            n_pathways: self.n_pathways,
            signal_pathways: self.signal_pathways,
            noise_sd: self.noise_sd,
            seed: self.seed.unwrap_or(run_seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub acquisitions: Vec<AcquisitionKind>,
    pub priors: Vec<PriorSource>,
    pub surrogates: Vec<SurrogateKind>,
    /// `fusion` or a `+`-joined list of modality names.
    pub features: Vec<String>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            acquisitions: vec![AcquisitionKind::Ucb],
            priors: vec![PriorSource::None],
            surrogates: vec![SurrogateKind::Gp],
            features: vec![FUSION.into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub test_fraction: f64,
    pub fractions: Vec<f64>,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            fractions: vec![0.01, 0.05, 0.1],
        }
    }
}

fn parse_features(f: &str) -> Vec<String> {
    if f == FUSION {
        Vec::new()
    } else {
        f.split('+').map(str::to_string).collect()
    }
}

/// A pool together with the pathway databases available as priors.
pub struct Dataset {
    pub pool: GenePool,
    pub databases: BTreeMap<String, PathwayDb>,
}

impl Dataset {
    /// The database a prior reads from. The synthetic benchmark has a single
    /// database that serves every prior name.
    pub fn database(&self, prior: &PriorSource) -> Result<PathwayDb> {
        if !prior.is_enabled() {
            return Ok(PathwayDb::default());
        }
        if let Some(db) = self.databases.get(SYNTHETIC_DB) {
            return Ok(db.clone());
        }
        let name = prior.label();
        if let Some(db) = self.databases.get(&name) {
            return Ok(db.clone());
        }
        if let PriorSource::Custom(path) = prior {
            let db = parse_gmt(path).with_context(|| format!("loading prior `{path}`"))?;
            return Ok(db.restrict_to(&self.pool));
        }
        bail!("no pathway database configured for prior `{name}`")
    }
}

const SYNTHETIC_DB: &str = "synthetic";

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).context("parsing experiment spec")?;
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut spec = Self::from_toml(&text).with_context(|| path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(data) = &mut spec.data {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            data.embeddings.values_mut().for_each(fix);
            fix(&mut data.labels);
            data.pathways.values_mut().for_each(fix);
        }
        for prior in &mut spec.grid.priors {
            if let PriorSource::Custom(p) = prior {
                if spec
                    .data
                    .as_ref()
                    .is_none_or(|d| !d.pathways.contains_key(p.as_str()))
                    && Path::new(p).is_relative()
                {
                    *p = base.join(&*p).to_string_lossy().into_owned();
                }
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.synthetic) {
            (Some(_), Some(_)) => bail!("spec has both [data] and [synthetic]; pick one"),
            (None, None) => bail!("spec needs either [data] or [synthetic]"),
            _ => {}
        }
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        let g = &self.grid;
        if g.acquisitions.is_empty()
            || g.priors.is_empty()
            || g.surrogates.is_empty()
            || g.features.is_empty()
        {
            bail!("every grid axis needs at least one value");
        }
        if let Some(data) = &self.data {
            if data.embeddings.is_empty() {
                bail!("[data.embeddings] is empty");
            }
            for f in &g.features {
                for m in parse_features(f) {
                    if !data.embeddings.contains_key(&m) {
                        bail!("feature set `{f}` names unknown modality `{m}`");
                    }
                }
            }
        }
        if self.synthetic.is_some() {
            for f in &g.features {
                let ok = f == FUSION || f == biobo::genepool::SYNTH_MODALITY;
                if !ok {
                    bail!("synthetic data has a single modality; feature set `{f}` is unknown");
                }
            }
        }
        if self
            .seeds
            .iter()
            .collect::<std::collections::BTreeSet<_>>()
            .len()
            != self.seeds.len()
        {
            bail!("seeds must be distinct");
        }
        let configs = self.configs();
        if configs.is_empty() {
            bail!("grid yields no runnable configuration (greedy-ea needs a prior)");
        }
        for cfg in configs {
            cfg.validate()?;
        }
        Ok(())
    }

    /// Grid cells in a fixed order, without seeds. Cells that differ only in
    /// settings their acquisition ignores are collapsed.
    pub fn configs(&self) -> Vec<RunConfig> {
        let g = &self.grid;
        let mut out: Vec<RunConfig> = Vec::new();
        for &acquisition in &g.acquisitions {
            for prior in &g.priors {
                for &surrogate in &g.surrogates {
                    for features in &g.features {
                        let mut cfg = RunConfig {
                            acquisition,
                            prior: prior.clone(),
                            surrogate,
                            features: parse_features(features),
                            ..self.defaults.clone()
                        };
                        match acquisition {
                            AcquisitionKind::Random => cfg.prior = PriorSource::None,
                            AcquisitionKind::GreedyEa if !prior.is_enabled() => continue,
                            _ => {}
                        }
                        if !acquisition.needs_surrogate() {
                            cfg.surrogate = g.surrogates[0];
                            cfg.features = parse_features(&g.features[0]);
                        }
                        if !out.contains(&cfg) {
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        out
    }

    /// Surrogate × feature combinations, for surrogate evaluation.
    pub fn model_configs(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &surrogate in &self.grid.surrogates {
            for features in &self.grid.features {
                out.push(RunConfig {
                    surrogate,
                    features: parse_features(features),
                    ..self.defaults.clone()
                });
            }
        }
        out
    }

    /// Loads the dataset for `seed`. Real data does not depend on the seed.
    pub fn dataset(&self, seed: u64) -> Result<Dataset> {
        if let Some(syn) = &self.synthetic {
            let (pool, db) = synth_benchmark(&syn.params(seed))?;
            return Ok(Dataset {
                pool,
                databases: BTreeMap::from([(SYNTHETIC_DB.to_string(), db)]),
            });
        }
        let data = self.data.as_ref().expect("validated");
        let tables = data
            .embeddings
            .iter()
            .map(|(name, path)| {
                load_embeddings(path, name).with_context(|| format!("modality `{name}`"))
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = load_labels(&data.labels)?;
        let (pool, _) = build_pool(&tables, &labels, &PathwayDb::default())?;
        let mut databases = BTreeMap::new();
        for (name, path) in &data.pathways {
            let db = parse_gmt(path).with_context(|| format!("pathway database `{name}`"))?;
            databases.insert(name.clone(), db.restrict_to(&pool));
        }
        Ok(Dataset { pool, databases })
    }

    /// Whether every seed sees the same dataset.
    pub fn shared_dataset(&self) -> bool {
        self.synthetic.as_ref().is_none_or(|s| s.seed.is_some())
    }

    /// Short digest of the resolved spec.
    pub fn hash(&self) -> String {
        short_hash(&serde_json::to_vec(self).expect("spec serializes"))
    }
}

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

/// Digest of a run configuration, seed excluded.
pub fn config_hash(cfg: &RunConfig) -> String {
    let cfg = RunConfig {
        seed: 0,
        ..cfg.clone()
    };
    short_hash(&serde_json::to_vec(&cfg).expect("config serializes"))[..12].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYNTH: &str = r#"
        [synthetic]
        n_genes = 100
        d = 2
        n_pathways = 5
        signal_pathways = 1
        noise_sd = 0.3
    "#;

    #[test]
    fn defaults() {
        let spec = ExperimentSpec::from_toml(SYNTH).unwrap();
        assert_eq!(spec.seeds, (0..7).collect::<Vec<_>>());
        assert_eq!(spec.defaults, RunConfig::default());
        assert_eq!(spec.configs().len(), 1);
        assert_eq!(spec.eval.fractions, vec![0.01, 0.05, 0.1]);
    }

    #[test]
    fn exactly_one_source() {
        assert!(ExperimentSpec::from_toml("seeds = [1]").is_err());
        let both =
            format!("{SYNTH}\n[data]\nlabels = \"l.csv\"\n[data.embeddings]\na = \"a.csv\"\n");
        assert!(ExperimentSpec::from_toml(&both).is_err());
    }

    #[test]
    fn rejects_bad_grids() {
        for extra in [
            "[grid]\nacquisitions = []",
            "[grid]\nfeatures = [\"other\"]",
            "[grid]\nacquisitions = [\"greedy-ea\"]",
            "[defaults]\ncycles = 0",
            "[defaults]\nbogus = 1",
        ] {
            let text = format!("{SYNTH}\n{extra}");
            assert!(ExperimentSpec::from_toml(&text).is_err(), "{extra}");
        }
        let dup = format!("seeds = [1, 1]\n{SYNTH}");
        assert!(ExperimentSpec::from_toml(&dup).is_err());
    }

    #[test]
    fn grid_collapses_ignored_axes() {
        let text = format!(
            "{SYNTH}\n[grid]\nacquisitions = [\"ucb\", \"random\", \"greedy-ea\"]\n\
             priors = [\"none\", \"hm\"]\nsurrogates = [\"gp\", \"ensemble\"]\n"
        );
        let spec = ExperimentSpec::from_toml(&text).unwrap();
        let labels: Vec<String> = spec.configs().iter().map(RunConfig::label).collect();
        assert_eq!(
            labels,
            [
                "ucb/gp/fusion",
                "ucb/ensemble/fusion",
                "bio-ucb-hm/gp/fusion",
                "bio-ucb-hm/ensemble/fusion",
                "random/gp/fusion",
                "greedy-ea-hm/gp/fusion",
            ]
        );
        assert_eq!(spec.model_configs().len(), 2);
    }

    #[test]
    fn hashes_are_stable_and_seed_free() {
        let spec = ExperimentSpec::from_toml(SYNTH).unwrap();
        assert_eq!(
            spec.hash(),
            ExperimentSpec::from_toml(SYNTH).unwrap().hash()
        );
        assert_eq!(spec.hash().len(), 16);
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 9,
            ..a.clone()
        };
        let c = RunConfig {
            beta: 0.5,
            ..a.clone()
        };
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_ne!(config_hash(&a), config_hash(&c));
    }

    #[test]
    fn synthetic_seed_follows_run_seed_unless_fixed() {
        let spec = ExperimentSpec::from_toml(SYNTH).unwrap();
        assert!(!spec.shared_dataset());
        assert_eq!(spec.synthetic.as_ref().unwrap().params(4).seed, 4);
        let fixed = ExperimentSpec::from_toml(&format!("{SYNTH}seed = 11\n")).unwrap();
        assert!(fixed.shared_dataset());
        assert_eq!(fixed.synthetic.as_ref().unwrap().params(4).seed, 11);
    }
}
