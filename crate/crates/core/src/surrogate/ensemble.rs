//! Deep ensemble of ReLU MLPs trained with Adam and early stopping.
//!
//! Each member sees standardized targets; predictions are mapped back to the
//! original scale before the member spread is computed.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_width, ProbabilisticModel, SD_FLOOR};
use crate::error::{invalid, Error, Result};
use crate::util::rng_from_seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden_width: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub observation_noise_sd: f64,
    pub validation_fraction: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 10,
            hidden_width: 64,
            depth: 2,
            activation: Activation::Relu,
            learning_rate: 0.001,
            weight_decay: 0.0001,
            max_epochs: 200,
            patience: 30,
            batch_size: 256,
            observation_noise_sd: 0.5,
            validation_fraction: 0.1,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members < 2 {
            return Err(invalid("ensemble needs at least 2 members"));
        }
        if self.hidden_width == 0 || self.depth == 0 || self.batch_size == 0 || self.max_epochs == 0
        {
            return Err(invalid(
                "ensemble widths, depth, batch size and epochs must be positive",
            ));
        }
        if !(self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.observation_noise_sd > 0.0)
        {
            return Err(invalid("ensemble rates and noise must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(invalid("validation fraction must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    w: DMatrix<f64>,
    b: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    layers: Vec<Layer>,
}

struct AdamState {
    m: Vec<(DMatrix<f64>, DVector<f64>)>,
    v: Vec<(DMatrix<f64>, DVector<f64>)>,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Mlp {
    fn new(input: usize, cfg: &EnsembleConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(cfg.hidden_width, cfg.depth));
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound)),
                    b: DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Self { layers }
    }

    /// Forward pass on column-major batch `a0` (features × batch). Returns
    /// every layer's activation, input first.
    fn forward(&self, a0: DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let mut acts = vec![a0];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * acts.last().unwrap();
            for mut c in z.column_iter_mut() {
                c += &layer.b;
            }
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    fn predict(&self, x_t: &DMatrix<f64>) -> Vec<f64> {
        self.forward(x_t.clone())
            .pop()
            .unwrap()
            .iter()
            .copied()
            .collect()
    }

    /// One Adam step on the batch; returns the batch MSE before the update.
    fn step(
        &mut self,
        x_t: DMatrix<f64>,
        y: &[f64],
        cfg: &EnsembleConfig,
        adam: &mut AdamState,
    ) -> f64 {
        let n = y.len() as f64;
        let acts = self.forward(x_t);
        let out = acts.last().unwrap();
        let mut delta = DMatrix::from_fn(1, y.len(), |_, j| out[(0, j)] - y[j]);
        let loss = delta.iter().map(|d| d * d).sum::<f64>() / n;
        delta *= 2.0 / n;

        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let a_prev = &acts[l];
            let gw = &delta * a_prev.transpose();
            let gb = DVector::from_iterator(delta.nrows(), delta.row_iter().map(|r| r.sum()));
            if l > 0 {
                let mut back = self.layers[l].w.tr_mul(&delta);
                back.zip_apply(a_prev, |g, a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                delta = back;
            }
            grads.push((gw, gb));
        }
        grads.reverse();

        adam.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(adam.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(adam.t);
        let lr = cfg.learning_rate;
        let wd = cfg.weight_decay;
        for (l, (mut gw, mut gb)) in grads.into_iter().enumerate() {
            let layer = &mut self.layers[l];
            gw += &layer.w * wd;
            gb += &layer.b * wd;
            let (mw, mb) = &mut adam.m[l];
            let (vw, vb) = &mut adam.v[l];
            update(
                layer.w.as_mut_slice(),
                gw.as_slice(),
                mw.as_mut_slice(),
                vw.as_mut_slice(),
                lr,
                bc1,
                bc2,
            );
            update(
                layer.b.as_mut_slice(),
                gb.as_slice(),
                mb.as_mut_slice(),
                vb.as_mut_slice(),
                lr,
                bc1,
                bc2,
            );
        }
        loss
    }
}

fn update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Rows of `x` selected by `idx`, transposed to features × batch.
fn batch(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.ncols(), idx.len(), |f, j| x[(idx[j], f)])
}

#[derive(Debug, Clone)]
pub struct EnsembleModel {
    members: Vec<Mlp>,
    input_dim: usize,
    y_mean: f64,
    y_scale: f64,
    observation_noise_sd: f64,
}

fn train_member(
    x: &DMatrix<f64>,
    y_std: &[f64],
    cfg: &EnsembleConfig,
    member: usize,
    seed: u64,
) -> Result<Mlp> {
    let mut rng = rng_from_seed(seed);
    let mut net = Mlp::new(x.ncols(), cfg, &mut rng);
    let n = y_std.len();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = (cfg.validation_fraction * n as f64).floor() as usize;
    let n_val = if n - n_val < 1 { 0 } else { n_val };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_x = batch(x, val_idx);
    let val_y: Vec<f64> = val_idx.iter().map(|&i| y_std[i]).collect();

    let shapes = |l: &Layer| {
        (
            DMatrix::zeros(l.w.nrows(), l.w.ncols()),
            DVector::zeros(l.b.len()),
        )
    };
    let mut adam = AdamState {
        m: net.layers.iter().map(shapes).collect(),
        v: net.layers.iter().map(shapes).collect(),
        t: 0,
    };

    let mut best = (f64::INFINITY, net.clone());
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        for chunk in train_idx.chunks(cfg.batch_size) {
            let yb: Vec<f64> = chunk.iter().map(|&i| y_std[i]).collect();
            let loss = net.step(batch(x, chunk), &yb, cfg, &mut adam);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { member, epoch });
            }
        }
        if n_val == 0 {
            continue;
        }
        let pred = net.predict(&val_x);
        let val_loss = pred
            .iter()
            .zip(&val_y)
            .map(|(p, t)| (p - t).powi(2))
            .sum::<f64>()
            / n_val as f64;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { member, epoch });
        }
        if val_loss < best.0 {
            best = (val_loss, net.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(if n_val == 0 { net } else { best.1 })
}

/// Trains `config.members` independently initialized networks. Member `i`
/// uses seed `seed + i`, so results do not depend on thread scheduling.
pub fn fit_ensemble(
    x: &DMatrix<f64>,
    y: &[f64],
    config: &EnsembleConfig,
    seed: u64,
) -> Result<EnsembleModel> {
    config.validate()?;
    let n = x.nrows();
    if n < 2 {
        return Err(invalid("ensemble needs at least 2 training points"));
    }
    if y.len() != n {
        return Err(invalid(format!("{} targets for {n} rows", y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(invalid("ensemble training data must be finite"));
    }
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64;
    let y_scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
    let y_std: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_scale).collect();

    let members = (0..config.members)
        .into_par_iter()
        .map(|i| train_member(x, &y_std, config, i, seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel {
        members,
        input_dim: x.ncols(),
        y_mean,
        y_scale,
        observation_noise_sd: config.observation_noise_sd,
    })
}

impl EnsembleModel {
    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    fn member_predictions(&self, x: &DMatrix<f64>) -> Result<Vec<Vec<f64>>> {
        check_width(self.input_dim, x)?;
        let x_t = x.transpose();
        Ok(self
            .members
            .iter()
            .map(|m| {
                m.predict(&x_t)
                    .into_iter()
                    .map(|v| v * self.y_scale + self.y_mean)
                    .collect()
            })
            .collect())
    }
}

impl ProbabilisticModel for EnsembleModel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn predict_moments(&self, x: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
        let preds = self.member_predictions(x)?;
        let k = preds.len() as f64;
        let noise_var = self.observation_noise_sd.powi(2);
        let (mut mean, mut sd) = (Vec::with_capacity(x.nrows()), Vec::with_capacity(x.nrows()));
        for j in 0..x.nrows() {
            let mu = preds.iter().map(|p| p[j]).sum::<f64>() / k;
            let var = preds.iter().map(|p| (p[j] - mu).powi(2)).sum::<f64>() / k;
            mean.push(mu);
            sd.push((var + noise_var).sqrt().max(SD_FLOOR));
        }
        Ok((mean, sd))
    }

    /// Predictions of one member chosen uniformly by `seed`.
    fn sample(&self, x: &DMatrix<f64>, seed: u64) -> Result<Vec<f64>> {
        let member = rng_from_seed(seed).random_range(0..self.members.len());
        Ok(self.member_predictions(x)?.swap_remove(member))
    }
}
