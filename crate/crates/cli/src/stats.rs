//! Small descriptive statistics used by the reporting commands.

/// Mean and standard error of the mean (sample standard deviation over
/// `sqrt(n)`). The error is 0 for a single value or identical values.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    if let Some(&first) = values.first() {
        // Identical runs give exactly their common value, not a rounded sum.
        if values.iter().all(|&v| v == first) {
            return (first, 0.0);
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Pearson correlation. `NaN` when either input is constant or shorter
/// than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "correlation inputs differ in length");
    if x.len() < 2 {
        return f64::NAN;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&average_ranks(x), &average_ranks(y))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn sem_cases() {
        assert_eq!(mean_sem(&[0.4; 7]), (0.4, 0.0));
        assert_eq!(mean_sem(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sem(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        // sample sd = sqrt(5/3), sem = sd / 2
        assert!((s - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 30.0, 20.0]), vec![1.0, 3.0, 2.0]);
        assert_eq!(
            average_ranks(&[1.0, 2.0, 2.0, 3.0]),
            vec![1.0, 2.5, 2.5, 4.0]
        );
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn identity_and_cubic() {
        let x = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let cubed: Vec<f64> = x.iter().map(|v: &f64| v.powi(3)).collect();
        assert_eq!(pearson(&x, &x), 1.0);
        assert_eq!(spearman(&x, &x), 1.0);
        assert_eq!(spearman(&x, &cubed), 1.0);
        let p = pearson(&x, &cubed);
        // sum x^4 / sqrt(sum x^2 * sum x^6) = 34 / sqrt(10 * 130)
        assert!((p - 34.0 / 1300f64.sqrt()).abs() < 1e-15);
        assert!(p < 1.0);
    }

    #[test]
    fn shuffle_matches_rank_formula() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [3.0, 1.0, 5.0, 2.0, 4.0];
        // d = (-2, 1, -2, 2, 1), sum d^2 = 14, rho = 1 - 6*14/(5*24) = 0.3
        let rho = spearman(&x, &y);
        assert!((rho - 0.3).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_nan());
    }

    proptest! {
        #[test]
        fn spearman_matches_formula_without_ties(perm in Just((0..8).collect::<Vec<usize>>()).prop_shuffle()) {
            let x: Vec<f64> = (0..8).map(f64::from).collect();
            let y: Vec<f64> = perm.iter().map(|&v| v as f64).collect();
            let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
            let formula = 1.0 - 6.0 * d2 / (8.0 * 63.0);
            prop_assert!((spearman(&x, &y) - formula).abs() < 1e-12);
        }

        #[test]
        fn correlations_are_bounded(v in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..30)) {
            let (x, y): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            for r in [pearson(&x, &y), spearman(&x, &y)] {
                prop_assert!(r.is_nan() || (-1.0..=1.0).contains(&r));
            }
        }
    }
}
