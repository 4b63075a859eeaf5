//! Over-representation statistics: hypergeometric upper tail, odds ratio,
//! Bonferroni adjustment and the combined score.

use statrs::function::factorial::ln_binomial;

use crate::error::{invalid, Result};

/// Natural log of the hypergeometric upper-tail probability
/// `P(X >= overlap)` for `X ~ Hypergeom(universe, pathway_size, sample_size)`.
///
/// Terms are summed in log space, so the result stays finite for p-values far
/// below the smallest normal `f64`.
pub fn hypergeom_ln_p(
    universe: usize,
    pathway_size: usize,
    sample_size: usize,
    overlap: usize,
) -> Result<f64> {
    if pathway_size > universe || sample_size > universe {
        return Err(invalid(format!(
            "pathway size {pathway_size} and sample size {sample_size} must not exceed universe {universe}"
        )));
    }
    let upper = pathway_size.min(sample_size);
    if overlap > upper {
        return Err(invalid(format!(
            "overlap {overlap} exceeds min(pathway size, sample size) = {upper}"
        )));
    }
    // Smallest overlap with non-zero probability.
    let support_lo = (sample_size + pathway_size).saturating_sub(universe);
    if overlap <= support_lo {
        return Ok(0.0);
    }

    let (g, p, s) = (universe as u64, pathway_size as u64, sample_size as u64);
    let ln_total = ln_binomial(g, s);
    let terms: Vec<f64> = (overlap as u64..=upper as u64)
        .map(|i| ln_binomial(p, i) + ln_binomial(g - p, s - i) - ln_total)
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    Ok((max + sum.ln()).min(0.0))
}

/// Hypergeometric upper-tail p-value, clamped to `(0, 1]`.
pub fn hypergeom_p(
    universe: usize,
    pathway_size: usize,
    sample_size: usize,
    overlap: usize,
) -> Result<f64> {
    let ln_p = hypergeom_ln_p(universe, pathway_size, sample_size, overlap)?;
    Ok(ln_p.exp().clamp(f64::MIN_POSITIVE, 1.0))
}

/// 2×2 overlap table between a gene set `S` and a pathway `P` over a
/// background `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `|S ∩ P|`
    pub a: u64,
    /// `|S| - a`
    pub b: u64,
    /// `|P| - a`
    pub c: u64,
    /// `|G| - |S| - |P| + a`
    pub d: u64,
}

impl ContingencyTable {
    pub fn from_counts(
        universe: usize,
        pathway_size: usize,
        sample_size: usize,
        overlap: usize,
    ) -> Result<Self> {
        if overlap > pathway_size.min(sample_size)
            || sample_size + pathway_size > universe + overlap
        {
            return Err(invalid(format!(
                "inconsistent counts: |G|={universe} |P|={pathway_size} |S|={sample_size} a={overlap}"
            )));
        }
        Ok(Self {
            a: overlap as u64,
            b: (sample_size - overlap) as u64,
            c: (pathway_size - overlap) as u64,
            d: (universe + overlap - sample_size - pathway_size) as u64,
        })
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }
}

/// `(a·d)/(b·c)`, with 0.5 added to every cell when any cell is zero.
pub fn odds_ratio(t: &ContingencyTable) -> f64 {
    let (mut a, mut b, mut c, mut d) = (t.a as f64, t.b as f64, t.c as f64, t.d as f64);
    if t.a == 0 || t.b == 0 || t.c == 0 || t.d == 0 {
        a += 0.5;
        b += 0.5;
        c += 0.5;
        d += 0.5;
    }
    (a * d) / (b * c)
}

/// `min(1, p·m)` with `m` the number of p-values.
pub fn bonferroni(p_values: &[f64]) -> Result<Vec<f64>> {
    let m = p_values.len() as f64;
    p_values
        .iter()
        .map(|&p| {
            if p > 0.0 && p <= 1.0 {
                Ok((p * m).min(1.0))
            } else {
                Err(invalid(format!("p-value {p} outside (0, 1]")))
            }
        })
        .collect()
}

/// `-o · ln(p)`.
pub fn combined_score(odds_ratio: f64, p_value: f64) -> f64 {
    combined_score_ln(odds_ratio, p_value.ln())
}

pub(crate) fn combined_score_ln(odds_ratio: f64, ln_p: f64) -> f64 {
    if odds_ratio == 0.0 || ln_p == 0.0 {
        return 0.0;
    }
    -odds_ratio * ln_p
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Counts size-`s` subsets of a `g`-element universe by overlap with the
    /// first `p` elements, returning (count with overlap >= a, total).
    fn enumerate(g: usize, p: usize, s: usize, a: usize) -> (u64, u64) {
        let pathway_mask: u32 = (1u32 << p) - 1;
        let (mut hit, mut total) = (0u64, 0u64);
        for mask in 0u32..(1u32 << g) {
            if mask.count_ones() as usize != s {
                continue;
            }
            total += 1;
            if (mask & pathway_mask).count_ones() as usize >= a {
                hit += 1;
            }
        }
        (hit, total)
    }

    #[test]
    fn tail_from_zero_is_one() {
        assert_eq!(hypergeom_p(10, 4, 5, 0).unwrap(), 1.0);
    }

    #[test]
    fn hand_cases_against_enumeration() {
        assert_eq!(enumerate(10, 4, 5, 3), (66, 252));
        assert!((hypergeom_p(10, 4, 5, 3).unwrap() - 66.0 / 252.0).abs() < 1e-14);
        assert_eq!(enumerate(5, 2, 2, 2), (1, 10));
        assert!((hypergeom_p(5, 2, 2, 2).unwrap() - 0.1).abs() < 1e-14);
    }

    #[test]
    fn single_term_tail() {
        // Pathway equal to the sample: p = 1 / C(20, 4) = 1/4845.
        let p = hypergeom_p(20, 4, 4, 4).unwrap();
        assert!((p - 1.0 / 4845.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_p_values_stay_in_log_space() {
        let ln_p = hypergeom_ln_p(10_000, 200, 200, 187).unwrap();
        assert!(ln_p.is_finite() && ln_p < -700.0);
        assert_eq!(
            hypergeom_p(10_000, 200, 200, 187).unwrap(),
            f64::MIN_POSITIVE
        );
    }

    #[test]
    fn bounds_are_enforced() {
        assert!(hypergeom_p(10, 11, 2, 0).is_err());
        assert!(hypergeom_p(10, 4, 5, 5).is_err());
    }

    #[test]
    fn odds_ratio_cases() {
        let t = |a, b, c, d| ContingencyTable { a, b, c, d };
        assert!((odds_ratio(&t(3, 2, 1, 4)) - 6.0).abs() < 1e-15);
        assert!((odds_ratio(&t(2, 2, 2, 2)) - 1.0).abs() < 1e-15);
        let corrected = (2.5 * 5.5) / (0.5 * 1.5);
        assert!((odds_ratio(&t(2, 0, 1, 5)) - corrected).abs() < 1e-12);
        assert!((corrected - 18.333_333_333_333_332).abs() < 1e-12);
    }

    #[test]
    fn contingency_from_counts() {
        let t = ContingencyTable::from_counts(10, 4, 5, 3).unwrap();
        assert_eq!((t.a, t.b, t.c, t.d), (3, 2, 1, 4));
        assert_eq!(t.total(), 10);
        assert!(ContingencyTable::from_counts(10, 8, 8, 2).is_err());
    }

    #[test]
    fn bonferroni_cases() {
        assert_eq!(bonferroni(&[0.01]).unwrap(), vec![0.01]);
        assert_eq!(bonferroni(&[0.01, 0.2]).unwrap(), vec![0.02, 0.4]);
        assert_eq!(bonferroni(&[0.6, 0.7]).unwrap(), vec![1.0, 1.0]);
        assert!(bonferroni(&[0.0]).is_err());
        assert!(bonferroni(&[1.5]).is_err());
    }

    #[test]
    fn combined_score_cases() {
        // -ln(0.261905) = 1.3397734, so the product rounds to 8.0386.
        assert!((combined_score(6.0, 0.261905) - 8.038_640_618).abs() < 1e-8);
        assert!((combined_score(6.0, 0.261905) - 8.0389).abs() < 1e-3);
        assert!(
            (combined_score(6.0, 66.0 / 252.0) - (-6.0 * (66.0f64 / 252.0).ln())).abs() < 1e-15
        );
        assert_eq!(combined_score(3.0, 1.0), 0.0);
        assert_eq!(combined_score(0.0, 0.01), 0.0);
    }

    proptest! {
        #[test]
        fn tail_is_non_increasing_in_overlap(g in 1usize..60, pf in 0.0f64..1.0, sf in 0.0f64..1.0) {
            let p = (pf * g as f64) as usize;
            let s = (sf * g as f64) as usize;
            let mut prev = 1.0;
            for a in 0..=p.min(s) {
                let v = hypergeom_p(g, p, s, a).unwrap();
                prop_assert!(v <= prev + 1e-15);
                prop_assert!(v > 0.0 && v <= 1.0);
                prev = v;
            }
        }

        #[test]
        fn combined_score_monotone(o in 0.01f64..100.0, p in 1e-12f64..0.999, k in 1.01f64..3.0) {
            prop_assert!(combined_score(o * k, p) > combined_score(o, p));
            prop_assert!(combined_score(o, p / k) > combined_score(o, p));
        }

        #[test]
        fn matches_enumeration_for_small_universes(g in 1usize..=10, pf in 0.0f64..1.0, sf in 0.0f64..1.0, af in 0.0f64..1.0) {
            let p = (pf * (g + 1) as f64) as usize;
            let s = (sf * (g + 1) as f64) as usize;
            let a = (af * (p.min(s) + 1) as f64) as usize;
            let (hit, total) = enumerate(g, p, s, a);
            let expected = hit as f64 / total as f64;
            let got = hypergeom_p(g, p, s, a).unwrap();
            prop_assert!((got - expected).abs() < 1e-12, "{g} {p} {s} {a}: {got} vs {expected}");
        }
    }
}
