//! Enrichment analysis over a pathway database and its conversion into a
//! prior over unlabeled candidates.

mod prior;
mod stats;

use std::collections::BTreeSet;
use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::genepool::{GenePool, PathwayDb, PathwayIndex, PoolState};
use crate::util::ceil_count;

pub use prior::{build_prior, Aggregation, PriorWeights, SIGNIFICANCE_LEVEL};
pub use stats::{
    bonferroni, combined_score, hypergeom_ln_p, hypergeom_p, odds_ratio, ContingencyTable,
};

/// One tested pathway.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnrichmentRow {
    pub pathway: String,
    pub overlap: usize,
    pub pathway_size: usize,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub odds_ratio: f64,
    pub combined_score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnrichmentTable {
    /// Sorted by combined score descending, then pathway name.
    pub rows: Vec<EnrichmentRow>,
    /// Pathways skipped because they share no gene with the sample; they are
    /// not counted in the Bonferroni denominator.
    pub skipped_zero_overlap: usize,
}

impl EnrichmentTable {
    pub fn tested(&self) -> usize {
        self.rows.len()
    }

    pub fn significant(&self) -> impl Iterator<Item = &EnrichmentRow> {
        self.rows
            .iter()
            .filter(|r| r.p_adjusted < SIGNIFICANCE_LEVEL)
    }

    pub fn row(&self, pathway: &str) -> Option<&EnrichmentRow> {
        self.rows.iter().find(|r| r.pathway == pathway)
    }

    /// Writes the table as CSV:
    /// `pathway,overlap,pathway_size,p_value,p_adjusted,odds_ratio,combined_score`.
    pub fn write_csv<'a, W: Write>(
        rows: impl IntoIterator<Item = &'a EnrichmentRow>,
        out: W,
    ) -> std::io::Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        w.write_record([
            "pathway",
            "overlap",
            "pathway_size",
            "p_value",
            "p_adjusted",
            "odds_ratio",
            "combined_score",
        ])?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()
    }
}

/// Tests every pathway of `index` that overlaps `sample` (pool row indices).
pub fn enrich_indices(sample: &BTreeSet<usize>, index: &PathwayIndex) -> Result<EnrichmentTable> {
    if sample.is_empty() {
        return Err(invalid("enrichment sample is empty"));
    }
    if let Some(&max) = sample.last() {
        if max >= index.universe {
            return Err(invalid(format!("sample index {max} outside the pool")));
        }
    }
    let universe = index.universe;
    let s = sample.len();

    let mut tested = Vec::new();
    let mut skipped = 0;
    for (name, members) in index.names.iter().zip(&index.members) {
        let overlap = members.iter().filter(|g| sample.contains(g)).count();
        if overlap == 0 {
            skipped += 1;
            continue;
        }
        let ln_p = hypergeom_ln_p(universe, members.len(), s, overlap)?;
        let table = ContingencyTable::from_counts(universe, members.len(), s, overlap)?;
        let odds = odds_ratio(&table);
        tested.push((name, overlap, members.len(), ln_p, odds));
    }

    let p_values: Vec<f64> = tested
        .iter()
        .map(|t| t.3.exp().clamp(f64::MIN_POSITIVE, 1.0))
        .collect();
    let adjusted = bonferroni(&p_values)?;
    let mut rows: Vec<EnrichmentRow> = tested
        .into_iter()
        .zip(p_values.into_iter().zip(adjusted))
        .map(
            |((name, overlap, size, ln_p, odds), (p, p_adj))| EnrichmentRow {
                pathway: name.clone(),
                overlap,
                pathway_size: size,
                p_value: p,
                p_adjusted: p_adj,
                odds_ratio: odds,
                combined_score: stats::combined_score_ln(odds, ln_p),
            },
        )
        .collect();
    rows.sort_by(|a, b| {
        b.combined_score
            .total_cmp(&a.combined_score)
            .then_with(|| a.pathway.cmp(&b.pathway))
    });
    log::debug!(
        "enrichment: |S|={s}, tested {} pathways, skipped {skipped} with zero overlap",
        rows.len()
    );
    Ok(EnrichmentTable {
        rows,
        skipped_zero_overlap: skipped,
    })
}

/// Enrichment of the gene set `sample` against `db`, with the pool as the
/// background.
pub fn run_enrichment(
    sample: &BTreeSet<String>,
    pool: &GenePool,
    db: &PathwayDb,
) -> Result<EnrichmentTable> {
    let idx = sample
        .iter()
        .map(|id| {
            pool.index_of(id)
                .ok_or_else(|| invalid(format!("gene `{id}` is not in the pool")))
        })
        .collect::<Result<BTreeSet<usize>>>()?;
    enrich_indices(&idx, &db.index(pool))
}

/// The `⌈fraction·L⌉` labeled genes with the highest observed values, ties
/// broken by id order.
pub fn top_fraction(state: &PoolState, fraction: f64) -> Result<BTreeSet<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(invalid(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if state.labeled.is_empty() {
        return Err(invalid("no labeled genes"));
    }
    let mut labeled: Vec<(usize, f64)> = state.labeled.iter().map(|(&i, &v)| (i, v)).collect();
    labeled.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let k = ceil_count(fraction, labeled.len());
    Ok(labeled[..k].iter().map(|&(i, _)| i).collect())
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use nalgebra::DMatrix;

    use super::*;

    fn pool(n: usize) -> GenePool {
        let ids = (0..n).map(|i| format!("G{i:02}")).collect();
        let mut mods = BTreeMap::new();
        mods.insert("m".to_string(), DMatrix::from_element(n, 1, 0.0));
        GenePool::new(ids, mods, vec![0.0; n]).unwrap()
    }

    fn db(entries: &[(&str, &[usize])]) -> PathwayDb {
        PathwayDb {
            pathways: entries
                .iter()
                .map(|(n, g)| {
                    (
                        n.to_string(),
                        g.iter().map(|i| format!("G{i:02}")).collect(),
                    )
                })
                .collect(),
            universe_hint: None,
        }
    }

    fn ids(idx: &[usize]) -> BTreeSet<String> {
        idx.iter().map(|i| format!("G{i:02}")).collect()
    }

    #[test]
    fn pathway_equal_to_sample() {
        let p = pool(20);
        let t = run_enrichment(&ids(&[0, 1, 2, 3]), &p, &db(&[("P", &[0, 1, 2, 3])])).unwrap();
        assert_eq!(t.rows.len(), 1);
        let r = &t.rows[0];
        assert_eq!((r.overlap, r.pathway_size), (4, 4));
        assert!((r.p_value - 1.0 / 4845.0).abs() < 1e-15);
        assert!((r.p_value - 2.064e-4).abs() < 1e-7);
        assert_eq!(r.p_adjusted, r.p_value);
        assert!((r.combined_score + r.odds_ratio * r.p_value.ln()).abs() < 1e-12);
    }

    #[test]
    fn disjoint_pathways_are_skipped_and_not_counted() {
        let p = pool(20);
        let t = run_enrichment(
            &ids(&[0, 1]),
            &p,
            &db(&[("A", &[0, 5]), ("B", &[10, 11]), ("C", &[12])]),
        )
        .unwrap();
        assert_eq!(t.tested(), 1);
        assert_eq!(t.skipped_zero_overlap, 2);
        assert_eq!(t.rows[0].p_adjusted, t.rows[0].p_value);
    }

    #[test]
    fn equal_scores_are_ordered_by_name() {
        let p = pool(20);
        let t = run_enrichment(&ids(&[0, 1]), &p, &db(&[("Z", &[0, 5]), ("A", &[1, 6])])).unwrap();
        assert_eq!(t.rows[0].combined_score, t.rows[1].combined_score);
        assert_eq!(t.rows[0].pathway, "A");
        assert_eq!(t.rows[1].pathway, "Z");
        assert!(t.rows.iter().all(|r| r.p_adjusted >= r.p_value));
    }

    #[test]
    fn empty_sample_is_an_error() {
        let p = pool(5);
        assert!(run_enrichment(&BTreeSet::new(), &p, &db(&[("A", &[0])])).is_err());
        assert!(run_enrichment(&ids(&[42]), &p, &db(&[("A", &[0])])).is_err());
    }

    fn state(values: &[(usize, f64)]) -> PoolState {
        let mut s = PoolState::new(30);
        for &(i, v) in values {
            s.observe(i, v).unwrap();
        }
        s
    }

    #[test]
    fn top_fraction_rules() {
        let s = state(&(0..20).map(|i| (i, i as f64)).collect::<Vec<_>>());
        assert_eq!(
            top_fraction(&s, 0.1).unwrap(),
            [18, 19].into_iter().collect()
        );
        let s = state(&(0..5).map(|i| (i, i as f64)).collect::<Vec<_>>());
        assert_eq!(top_fraction(&s, 0.1).unwrap(), [4].into_iter().collect());
        let s = state(&[(3, 1.0), (7, 5.0), (1, 5.0), (2, 0.0)]);
        assert_eq!(top_fraction(&s, 0.25).unwrap(), [1].into_iter().collect());
        assert!(top_fraction(&PoolState::new(3), 0.1).is_err());
        assert!(top_fraction(&s, 0.0).is_err());
    }

    #[test]
    fn csv_has_table_columns() {
        let p = pool(20);
        let t = run_enrichment(&ids(&[0, 1]), &p, &db(&[("A", &[0, 5])])).unwrap();
        let mut buf = Vec::new();
        EnrichmentTable::write_csv(&t.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "pathway,overlap,pathway_size,p_value,p_adjusted,odds_ratio,combined_score"
        );
        assert!(lines.next().unwrap().starts_with("A,1,2,"));

        let mut buf = Vec::new();
        EnrichmentTable::write_csv(t.significant(), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }
}
