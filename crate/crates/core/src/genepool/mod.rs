//! Candidate pool data model: gene identifiers, per-modality embeddings,
//! hidden labels and pathway membership.
//!
//! Every [`GenePool`] keeps its ids sorted lexicographically, so a row index
//! doubles as the id-order tie-breaker used throughout the crate.

mod io;
mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::util::{ceil_count, rank_descending, rng_from_seed};

pub use io::{load_embeddings, load_labels, parse_gmt, write_embeddings, write_gmt, write_labels};
pub use synth::{synth_benchmark, SynthParams, SYNTH_MODALITY};

/// One modality read from disk, keyed by gene id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub modality: String,
    pub dim: usize,
    pub rows: BTreeMap<String, Vec<f64>>,
}

/// Observed phenotype per gene id.
pub type LabelTable = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct GenePool {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    modalities: BTreeMap<String, DMatrix<f64>>,
    labels: Vec<f64>,
}

impl GenePool {
    /// Builds a pool from aligned rows. Rows are re-sorted by id.
    pub fn new(
        ids: Vec<String>,
        modalities: BTreeMap<String, DMatrix<f64>>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        let n = ids.len();
        if n == 0 {
            return Err(invalid("gene pool must not be empty"));
        }
        if labels.len() != n {
            return Err(invalid(format!("{} labels for {} ids", labels.len(), n)));
        }
        if modalities.is_empty() {
            return Err(invalid("gene pool needs at least one modality"));
        }
        for (name, m) in &modalities {
            if m.nrows() != n {
                return Err(invalid(format!(
                    "modality `{name}` has {} rows for {n} ids",
                    m.nrows()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("modality `{name}` has non-finite entries")));
            }
        }
        if let Some(i) = labels.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("label of `{}` is not finite", ids[i])));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        for w in order.windows(2) {
            if ids[w[0]] == ids[w[1]] {
                return Err(Error::DuplicateId(ids[w[0]].clone()));
            }
        }

        let sorted_ids: Vec<String> = order.iter().map(|&i| ids[i].clone()).collect();
        let sorted_labels = order.iter().map(|&i| labels[i]).collect();
        let modalities = modalities
            .into_iter()
            .map(|(name, m)| (name, m.select_rows(order.iter())))
            .collect();
        let index = sorted_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        Ok(Self {
            ids: sorted_ids,
            index,
            modalities,
            labels: sorted_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, idx: usize) -> &str {
        &self.ids[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn modality_names(&self) -> impl Iterator<Item = &str> {
        self.modalities.keys().map(String::as_str)
    }

    pub fn modality(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.modalities.get(name)
    }

    /// Ground-truth phenotype. Only the label oracle and evaluation code
    /// should read this; acquisition policies see observed values only.
    pub fn true_label(&self, idx: usize) -> f64 {
        self.labels[idx]
    }

    pub fn true_labels(&self) -> &[f64] {
        &self.labels
    }

    /// Splits the pool back into per-modality tables and a label table.
    pub fn to_tables(&self) -> (Vec<EmbeddingTable>, LabelTable) {
        let tables = self
            .modalities
            .iter()
            .map(|(name, m)| EmbeddingTable {
                modality: name.clone(),
                dim: m.ncols(),
                rows: self
                    .ids
                    .iter()
                    .enumerate()
                    .map(|(i, id)| (id.clone(), m.row(i).iter().copied().collect()))
                    .collect(),
            })
            .collect();
        let labels = self
            .ids
            .iter()
            .cloned()
            .zip(self.labels.iter().copied())
            .collect();
        (tables, labels)
    }
}

/// Named gene sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PathwayDb {
    pub pathways: BTreeMap<String, BTreeSet<String>>,
    pub universe_hint: Option<usize>,
}

impl PathwayDb {
    pub fn len(&self) -> usize {
        self.pathways.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pathways.is_empty()
    }

    pub fn contains(&self, pathway: &str, gene: &str) -> bool {
        self.pathways
            .get(pathway)
            .is_some_and(|genes| genes.contains(gene))
    }

    /// Keeps only genes in the pool and drops pathways left empty.
    pub fn restrict_to(&self, pool: &GenePool) -> PathwayDb {
        let pathways = self
            .pathways
            .iter()
            .filter_map(|(name, genes)| {
                let kept: BTreeSet<String> = genes
                    .iter()
                    .filter(|g| pool.index_of(g).is_some())
                    .cloned()
                    .collect();
                (!kept.is_empty()).then(|| (name.clone(), kept))
            })
            .collect();
        PathwayDb {
            pathways,
            universe_hint: Some(pool.len()),
        }
    }

    /// Index-based view of the database over `pool`. Genes outside the pool
    /// are ignored and empty pathways are dropped.
    pub fn index(&self, pool: &GenePool) -> PathwayIndex {
        let mut names = Vec::new();
        let mut members = Vec::new();
        let mut gene_pathways = vec![Vec::new(); pool.len()];
        for (name, genes) in &self.pathways {
            let mut idx: Vec<usize> = genes.iter().filter_map(|g| pool.index_of(g)).collect();
            if idx.is_empty() {
                continue;
            }
            idx.sort_unstable();
            let p = names.len();
            for &g in &idx {
                gene_pathways[g].push(p);
            }
            names.push(name.clone());
            members.push(idx);
        }
        PathwayIndex {
            universe: pool.len(),
            names,
            members,
            gene_pathways,
        }
    }
}

/// Pathway membership resolved to pool row indices.
#[derive(Debug, Clone)]
pub struct PathwayIndex {
    pub universe: usize,
    pub names: Vec<String>,
    pub members: Vec<Vec<usize>>,
    pub gene_pathways: Vec<Vec<usize>>,
}

impl PathwayIndex {
    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Labeled/unlabeled partition of the pool during a campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    pub labeled: BTreeMap<usize, f64>,
    pub unlabeled: BTreeSet<usize>,
    pub cycle: usize,
}

impl PoolState {
    pub fn new(pool_size: usize) -> Self {
        Self {
            labeled: BTreeMap::new(),
            unlabeled: (0..pool_size).collect(),
            cycle: 0,
        }
    }

    /// Moves `idx` to the labeled set with its observed value.
    pub fn observe(&mut self, idx: usize, value: f64) -> Result<()> {
        if !self.unlabeled.remove(&idx) {
            return Err(invalid(format!("candidate {idx} is not unlabeled")));
        }
        self.labeled.insert(idx, value);
        Ok(())
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn unlabeled_ids(&self) -> Vec<usize> {
        self.unlabeled.iter().copied().collect()
    }
}

/// Intersects modalities, labels and pathways into a consistent pool.
pub fn build_pool(
    tables: &[EmbeddingTable],
    labels: &LabelTable,
    pathways: &PathwayDb,
) -> Result<(GenePool, PathwayDb)> {
    if tables.is_empty() {
        return Err(invalid("at least one embedding modality is required"));
    }
    if labels.is_empty() {
        return Err(invalid("label table is empty"));
    }
    let mut seen = BTreeSet::new();
    for t in tables {
        if !seen.insert(t.modality.as_str()) {
            return Err(invalid(format!("modality `{}` given twice", t.modality)));
        }
    }

    let ids: Vec<String> = labels
        .keys()
        .filter(|id| tables.iter().all(|t| t.rows.contains_key(*id)))
        .cloned()
        .collect();
    if ids.is_empty() {
        return Err(Error::EmptyIntersection);
    }

    let modalities = tables
        .iter()
        .map(|t| {
            let mut data = Vec::with_capacity(ids.len() * t.dim);
            for id in &ids {
                let row = &t.rows[id];
                if row.len() != t.dim {
                    return Err(invalid(format!(
                        "modality `{}`: row `{id}` has width {}, expected {}",
                        t.modality,
                        row.len(),
                        t.dim
                    )));
                }
                data.extend_from_slice(row);
            }
            Ok((
                t.modality.clone(),
                DMatrix::from_row_slice(ids.len(), t.dim, &data),
            ))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    let label_values = ids.iter().map(|id| labels[id]).collect();

    let pool = GenePool::new(ids, modalities, label_values)?;
    let db = pathways.restrict_to(&pool);
    Ok((pool, db))
}

/// Row-wise L2 normalization of each named modality, concatenated in order.
/// All-zero rows stay zero.
pub fn fuse(pool: &GenePool, modality_names: &[String]) -> Result<DMatrix<f64>> {
    if modality_names.is_empty() {
        return Err(invalid("fusion needs at least one modality"));
    }
    let blocks = modality_names
        .iter()
        .map(|name| {
            pool.modality(name)
                .ok_or_else(|| Error::UnknownModality(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let width: usize = blocks.iter().map(|m| m.ncols()).sum();
    let mut out = DMatrix::zeros(pool.len(), width);
    let mut offset = 0;
    for block in blocks {
        for (i, row) in block.row_iter().enumerate() {
            let norm = row.norm();
            let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
            for (j, v) in row.iter().enumerate() {
                out[(i, offset + j)] = v * scale;
            }
        }
        offset += block.ncols();
    }
    Ok(out)
}

/// Seeded train/test partition. The test set receives its proportional
/// share of the pool's top-10% genes by true label.
pub fn train_test_split(
    pool: &GenePool,
    test_fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<usize>, BTreeSet<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(invalid(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = pool.len();
    if n < 2 {
        return Err(invalid("need at least 2 genes to split"));
    }
    let order = rank_descending(pool.true_labels());
    let n_top = ceil_count(0.1, n);
    let mut top: Vec<usize> = order[..n_top].to_vec();
    let mut rest: Vec<usize> = order[n_top..].to_vec();
    top.sort_unstable();
    rest.sort_unstable();

    let n_test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let top_test = ((test_fraction * n_top as f64).round() as usize).min(n_test);
    let rest_test = (n_test - top_test).min(rest.len());

    let mut rng = rng_from_seed(seed);
    top.shuffle(&mut rng);
    rest.shuffle(&mut rng);
    let test: BTreeSet<usize> = top[..top_test]
        .iter()
        .chain(&rest[..rest_test])
        .copied()
        .collect();
    let train = (0..n).filter(|i| !test.contains(i)).collect();
    Ok((train, test))
}
