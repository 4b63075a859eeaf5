//! Exact GP regression with a squared-exponential kernel.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use super::{check_width, ProbabilisticModel, SD_FLOOR};
use crate::error::{invalid, Error, Result};
use crate::util::rng_from_seed;

const MAX_JITTER_DOUBLINGS: usize = 6;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub enum Lengthscale {
    /// Median pairwise Euclidean distance between training inputs.
    #[default]
    MedianHeuristic,
    Fixed(f64),
}

impl Serialize for Lengthscale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Lengthscale::MedianHeuristic => s.serialize_str("median-heuristic"),
            Lengthscale::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Lengthscale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Visitor;
        impl de::Visitor<'_> for Visitor {
            type Value = Lengthscale;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive number or \"median-heuristic\"")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Lengthscale, E> {
                match v {
                    "median-heuristic" => Ok(Lengthscale::MedianHeuristic),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Lengthscale, E> {
                Ok(Lengthscale::Fixed(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Lengthscale, E> {
                Ok(Lengthscale::Fixed(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Lengthscale, E> {
                Ok(Lengthscale::Fixed(v as f64))
            }
        }
        d.deserialize_any(Visitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub lengthscale: Lengthscale,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub jitter: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            lengthscale: Lengthscale::MedianHeuristic,
            signal_variance: 1.0,
            noise_variance: 0.1,
            jitter: 1e-8,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("GP {name} must be positive, got {v}")))
            }
        };
        if let Lengthscale::Fixed(l) = self.lengthscale {
            positive("lengthscale", l)?;
        }
        positive("signal_variance", self.signal_variance)?;
        positive("noise_variance", self.noise_variance)?;
        positive("jitter", self.jitter)
    }
}

/// Fitted GP. Targets are centered on their training mean.
#[derive(Debug, Clone)]
pub struct GpModel {
    x_train: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    alpha: DVector<f64>,
    y_mean: f64,
    lengthscale: f64,
    jitter: f64,
    config: GpConfig,
}

fn sq_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols())
        .map(|k| {
            let d = a[(i, k)] - b[(j, k)];
            d * d
        })
        .sum()
}

/// Median of pairwise Euclidean distances between rows; 1.0 when undefined
/// (fewer than two rows, or all rows identical).
pub(crate) fn median_pairwise_distance(x: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(x, i, x, j).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

impl GpModel {
    fn kernel(&self, a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
        let l2 = self.lengthscale * self.lengthscale;
        self.config.signal_variance * (-sq_dist(a, i, b, j) / (2.0 * l2)).exp()
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Diagonal jitter actually used, after any escalation.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n_train(&self) -> usize {
        self.x_train.nrows()
    }

    fn cross_kernel(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.x_train.nrows();
        DMatrix::from_fn(n, x.nrows(), |i, j| self.kernel(&self.x_train, i, x, j))
    }
}

/// Fits a GP on rows of `x` with targets `y`.
pub fn fit_gp(x: &DMatrix<f64>, y: &[f64], config: &GpConfig) -> Result<GpModel> {
    config.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(invalid("GP needs at least one training point"));
    }
    if y.len() != n {
        return Err(invalid(format!("{} targets for {n} rows", y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("GP training data must be finite"));
    }

    let lengthscale = match config.lengthscale {
        Lengthscale::Fixed(l) => l,
        Lengthscale::MedianHeuristic => median_pairwise_distance(x),
    };
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let mut model = GpModel {
        x_train: x.clone(),
        chol_lower: DMatrix::zeros(0, 0),
        alpha: DVector::zeros(0),
        y_mean,
        lengthscale,
        jitter: config.jitter,
        config: config.clone(),
    };
    let k = DMatrix::from_fn(n, n, |i, j| model.kernel(x, i, x, j));

    let mut jitter = config.jitter;
    for attempt in 0..=MAX_JITTER_DOUBLINGS {
        let mut a = k.clone();
        for i in 0..n {
            a[(i, i)] += config.noise_variance + jitter;
        }
        if let Some(chol) = a.cholesky() {
            model.alpha = chol.solve(&yc);
            model.chol_lower = chol.unpack();
            model.jitter = jitter;
            return Ok(model);
        }
        if attempt < MAX_JITTER_DOUBLINGS {
            jitter *= 2.0;
            log::debug!("GP Cholesky failed, retrying with jitter {jitter:e}");
        }
    }
    Err(Error::Cholesky { jitter })
}

impl ProbabilisticModel for GpModel {
    fn input_dim(&self) -> usize {
        self.x_train.ncols()
    }

    fn predict_moments(&self, x: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        check_width(self.input_dim(), x)?;
        let k_star = self.cross_kernel(x);
        let mean: Vec<f64> = (k_star.tr_mul(&self.alpha))
            .iter()
            .map(|v| v + self.y_mean)
            .collect();
        let v = self
            .chol_lower
            .solve_lower_triangular(&k_star)
            .ok_or_else(|| invalid("singular Cholesky factor"))?;
        let sd = v
            .column_iter()
            .map(|col| {
                let latent = (self.config.signal_variance - col.norm_squared()).max(0.0);
                (latent + self.config.noise_variance).sqrt().max(SD_FLOOR)
            })
            .collect();
        Ok((mean, sd))
    }

    /// Independent-marginal draw: `mean + sd ⊙ z`.
    fn sample(&self, x: &DMatrix<f64>, seed: u64) -> Result<Vec<f64>> {
        let (mean, sd) = self.predict_moments(x)?;
        let mut rng = rng_from_seed(seed);
        Ok(mean
            .iter()
            .zip(&sd)
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Dense reference: explicit inverse by Gauss-Jordan elimination.
    fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut m: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = r.clone();
                row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))
                .unwrap();
            m.swap(c, p);
            let piv = m[c][c];
            for v in m[c].iter_mut() {
                *v /= piv;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    let pivot_row = m[c].clone();
                    for (v, pv) in m[r].iter_mut().zip(pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
        m.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    fn dense_oracle(xs: &[f64], ys: &[f64], xq: f64, cfg: &GpConfig, ell: f64) -> (f64, f64) {
        let k = |a: f64, b: f64| cfg.signal_variance * (-(a - b).powi(2) / (2.0 * ell * ell)).exp();
        let n = xs.len();
        let ybar = ys.iter().sum::<f64>() / n as f64;
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        k(xs[i], xs[j])
                            + if i == j {
                                cfg.noise_variance + cfg.jitter
                            } else {
                                0.0
                            }
                    })
                    .collect()
            })
            .collect();
        let inv = invert(&a);
        let ks: Vec<f64> = xs.iter().map(|&x| k(x, xq)).collect();
        let mut mean = ybar;
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                mean += ks[i] * inv[i][j] * (ys[j] - ybar);
                quad += ks[i] * inv[i][j] * ks[j];
            }
        }
        (
            mean,
            (cfg.signal_variance - quad + cfg.noise_variance).sqrt(),
        )
    }

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn interpolates_single_point() {
        let cfg = GpConfig {
            noise_variance: 1e-6,
            ..GpConfig::default()
        };
        let m = fit_gp(&col(&[0.5]), &[3.0], &cfg).unwrap();
        let (mean, _) = m.predict_moments(&col(&[0.5])).unwrap();
        assert!((mean[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let cfg = GpConfig {
            lengthscale: Lengthscale::Fixed(0.5),
            ..GpConfig::default()
        };
        let m = fit_gp(&col(&[0.0, 0.3, 0.7]), &[1.0, 2.0, 4.0], &cfg).unwrap();
        let (mean, sd) = m.predict_moments(&col(&[100.0])).unwrap();
        assert!((mean[0] - 7.0 / 3.0).abs() < 1e-12);
        assert!((sd[0].powi(2) - (cfg.signal_variance + cfg.noise_variance)).abs() < 1e-12);
    }

    #[test]
    fn matches_dense_formula_three_points() {
        let xs = [-1.0, 0.2, 1.5];
        let ys = [0.3, -0.7, 2.0];
        let cfg = GpConfig::default();
        let m = fit_gp(&col(&xs), &ys, &cfg).unwrap();
        // Pairwise distances 1.2, 2.5, 1.3 -> median 1.3.
        assert!((m.lengthscale() - 1.3).abs() < 1e-15);
        let queries = [-2.0, -1.0, 0.0, 0.9, 3.0];
        let (mean, sd) = m.predict_moments(&col(&queries)).unwrap();
        for (i, &q) in queries.iter().enumerate() {
            let (om, osd) = dense_oracle(&xs, &ys, q, &cfg, 1.3);
            assert!((mean[i] - om).abs() < 1e-8, "mean at {q}");
            assert!((sd[i] - osd).abs() < 1e-8, "sd at {q}");
        }
    }

    #[test]
    fn sd_at_training_input_is_small() {
        let cfg = GpConfig {
            noise_variance: 1e-6,
            jitter: 1e-8,
            lengthscale: Lengthscale::Fixed(1.0),
            ..GpConfig::default()
        };
        let m = fit_gp(&col(&[0.0, 1.0]), &[1.0, -1.0], &cfg).unwrap();
        let (_, sd) = m.predict_moments(&col(&[0.0, 1.0])).unwrap();
        // Latent variance at a training input is at most the noise level.
        let bound = (2.0 * (cfg.noise_variance + cfg.jitter)).sqrt() + 1e-6;
        assert!(sd.iter().all(|&s| s <= bound), "{sd:?} vs {bound}");
    }

    #[test]
    fn errors() {
        let cfg = GpConfig::default();
        assert!(fit_gp(&DMatrix::zeros(0, 1), &[], &cfg).is_err());
        let m = fit_gp(&col(&[0.0, 1.0]), &[0.0, 1.0], &cfg).unwrap();
        assert!(matches!(
            m.predict_moments(&DMatrix::zeros(1, 2)),
            Err(Error::WidthMismatch {
                expected: 1,
                found: 2
            })
        ));
        let bad = GpConfig {
            noise_variance: 0.0,
            ..GpConfig::default()
        };
        assert!(fit_gp(&col(&[0.0]), &[0.0], &bad).is_err());
    }

    #[test]
    fn duplicate_inputs_still_factorize() {
        let cfg = GpConfig {
            noise_variance: 1e-12,
            jitter: 1e-14,
            lengthscale: Lengthscale::Fixed(1.0),
            ..GpConfig::default()
        };
        let m = fit_gp(&col(&[0.0, 0.0, 0.0]), &[1.0, 1.0, 1.0], &cfg).unwrap();
        assert!(m.jitter() >= cfg.jitter);
    }

    #[test]
    fn sampling_is_seeded() {
        let m = fit_gp(&col(&[0.0, 1.0]), &[0.0, 1.0], &GpConfig::default()).unwrap();
        let x = col(&[0.2, 2.0, 5.0]);
        assert_eq!(m.sample(&x, 11).unwrap(), m.sample(&x, 11).unwrap());
        assert_ne!(m.sample(&x, 11).unwrap(), m.sample(&x, 12).unwrap());
    }

    #[test]
    fn sample_mean_converges_to_posterior_mean() {
        let m = fit_gp(
            &col(&[0.0, 1.0, 2.5]),
            &[0.0, 1.0, -1.0],
            &GpConfig::default(),
        )
        .unwrap();
        let x = col(&[0.5, 3.0]);
        let (mean, sd) = m.predict_moments(&x).unwrap();
        let n = 10_000;
        let mut acc = [0.0; 2];
        for seed in 0..n {
            let s = m.sample(&x, seed).unwrap();
            acc[0] += s[0];
            acc[1] += s[1];
        }
        for j in 0..2 {
            let emp = acc[j] / n as f64;
            assert!((emp - mean[j]).abs() < 3.0 * sd[j] / (n as f64).sqrt());
        }
    }

    proptest! {
        #[test]
        fn variance_bounded_by_prior(
            xs in proptest::collection::vec(-3.0f64..3.0, 1..8),
            q in -6.0f64..6.0,
        ) {
            let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
            let cfg = GpConfig::default();
            let m = fit_gp(&col(&xs), &ys, &cfg).unwrap();
            let (_, sd) = m.predict_moments(&col(&[q])).unwrap();
            prop_assert!(sd[0].powi(2) <= cfg.signal_variance + cfg.noise_variance + 1e-6);
        }

        #[test]
        fn permutation_invariant(
            pts in proptest::collection::vec((-3.0f64..3.0, -2.0f64..2.0), 2..7),
            rot in 0usize..7,
        ) {
            let cfg = GpConfig::default();
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let mut order: Vec<usize> = (0..xs.len()).collect();
            order.rotate_left(rot % xs.len());
            order.reverse();
            let xp: Vec<f64> = order.iter().map(|&i| xs[i]).collect();
            let yp: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
            let q = col(&[-1.0, 0.0, 2.0]);
            let a = fit_gp(&col(&xs), &ys, &cfg).unwrap().predict_moments(&q).unwrap();
            let b = fit_gp(&col(&xp), &yp, &cfg).unwrap().predict_moments(&q).unwrap();
            for j in 0..3 {
                prop_assert!((a.0[j] - b.0[j]).abs() < 1e-8);
                prop_assert!((a.1[j] - b.1[j]).abs() < 1e-8);
            }
        }
    }
}
