//! Exact t-SNE.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cluster::squared_euclidean;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest input the quadratic method accepts.
pub const MAX_POINTS: usize = 5_000;
const SEARCH_STEPS: usize = 50;
const ENTROPY_TOL: f64 = 1e-5;
const P_FLOOR: f64 = 1e-12;
const MIN_GAIN: f64 = 0.01;
const KL_EVERY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and the initial momentum.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        let positive = [
            self.perplexity,
            self.learning_rate,
            self.early_exaggeration,
            self.initial_momentum,
            self.final_momentum,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.iterations == 0 {
            return Err(Error::Config("t-SNE settings must be positive".into()));
        }
        if self.perplexity * 3.0 >= n as f64 {
            return Err(Error::Config(format!(
                "t-SNE perplexity {} must be below N/3 = {:.3}",
                self.perplexity,
                n as f64 / 3.0
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// `[N, 2]`, centred.
    pub embedding: Tensor<f64>,
    /// `(iteration, KL(P‖Q))`, sampled every 50 iterations and at the end.
    pub kl_history: Vec<(usize, f64)>,
}

impl TsneResult {
    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        self.kl_history.iter().find(|(i, _)| *i == iteration).map(|&(_, kl)| kl)
    }

    pub fn final_kl(&self) -> f64 {
        self.kl_history.last().map_or(f64::NAN, |&(_, kl)| kl)
    }
}

/// Row `i` of the conditional affinities `p_{j|i}` for squared distances
/// `dist2` (self excluded), with the Gaussian precision found by bisection so
/// that the entropy is `ln(perplexity)`. Returns `(row, precision, entropy)`.
pub fn conditional_row(dist2: &[f64], i: usize, perplexity: f64) -> (Vec<f64>, f64, f64) {
    let target = perplexity.ln();
    let (mut beta, mut lo, mut hi) = (1.0f64, f64::NEG_INFINITY, f64::INFINITY);
    let mut row = vec![0.0; dist2.len()];
    let mut entropy = 0.0;
    // subtract the nearest distance so exp() cannot underflow the whole row
    let shift = dist2
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    for _ in 0..SEARCH_STEPS {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for (j, (&d, p)) in dist2.iter().zip(row.iter_mut()).enumerate() {
            *p = if j == i { 0.0 } else { (-(d - shift) * beta).exp() };
            sum += *p;
            weighted += (d - shift) * *p;
        }
        entropy = sum.ln() + beta * weighted / sum;
        row.iter_mut().for_each(|p| *p /= sum);
        let diff = entropy - target;
        if diff.abs() < ENTROPY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = if lo.is_finite() { 0.5 * (beta + lo) } else { beta / 2.0 };
        }
    }
    (row, beta, entropy)
}

fn joint_affinities(x: &Tensor<f64>, perplexity: f64) -> Vec<f64> {
    let n = x.rows();
    let mut dist2 = vec![0.0; n];
    let mut cond = vec![0.0; n * n];
    for i in 0..n {
        for (j, d) in dist2.iter_mut().enumerate() {
            *d = squared_euclidean(x.row(i), x.row(j));
        }
        let (row, _, _) = conditional_row(&dist2, i, perplexity);
        cond[i * n..(i + 1) * n].copy_from_slice(&row);
    }
    let mut p = vec![0.0; n * n];
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) * scale).max(P_FLOOR);
            }
        }
    }
    p
}

fn kl_divergence(p: &[f64], y: &[f64], n: usize) -> f64 {
    let mut num = vec![0.0; n * n];
    let mut z = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let q = 1.0 / (1.0 + sq2(y, i, j));
            num[i * n + j] = q;
            z += 2.0 * q;
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let q = (num[i * n + j] / z).max(P_FLOOR);
            for pij in [p[i * n + j], p[j * n + i]] {
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

fn sq2(y: &[f64], i: usize, j: usize) -> f64 {
    let (dx, dy) = (y[2 * i] - y[2 * j], y[2 * i + 1] - y[2 * j + 1]);
    dx * dx + dy * dy
}

fn centre(y: &mut [f64]) {
    let n = (y.len() / 2).max(1) as f64;
    let (mx, my) = y.chunks(2).fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    for p in y.chunks_mut(2) {
        p[0] -= mx / n;
        p[1] -= my / n;
    }
}

/// Project the rows of `x` to 2-D.
pub fn tsne(x: &Tensor<f64>, cfg: &TsneConfig) -> Result<TsneResult> {
    if x.rank() != 2 {
        return Err(Error::dim(format!("t-SNE needs an [N, D] matrix, got {:?}", x.shape())));
    }
    let n = x.rows();
    if n > MAX_POINTS {
        return Err(Error::Config(format!("exact t-SNE is limited to {MAX_POINTS} points, got {n}")));
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("t-SNE needs at least 2 points, got {n}")));
    }
    cfg.validate(n)?;

    let p = joint_affinities(x, cfg.perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<f64> = (0..2 * n).map(|_| init.sample(&mut rng)).collect();
    let mut velocity = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut grad = vec![0.0; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut kl_history = Vec::new();

    for iter in 0..cfg.iterations {
        let early = iter < cfg.exaggeration_iters;
        let exaggeration = if early { cfg.early_exaggeration } else { 1.0 };
        let momentum = if early { cfg.initial_momentum } else { cfg.final_momentum };

        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let q = 1.0 / (1.0 + sq2(&y, i, j));
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let coeff = (exaggeration * p[i * n + j] - w / z) * w;
                gx += coeff * (y[2 * i] - y[2 * j]);
                gy += coeff * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        for ((g, v), gain) in grad.iter().zip(velocity.iter_mut()).zip(gains.iter_mut()) {
            *gain = if (*g > 0.0) != (*v > 0.0) { *gain + 0.2 } else { *gain * 0.8 };
            *gain = gain.max(MIN_GAIN);
            *v = momentum * *v - cfg.learning_rate * *gain * g;
        }
        y.iter_mut().zip(&velocity).for_each(|(yi, v)| *yi += v);
        centre(&mut y);

        let done = iter + 1;
        if done % KL_EVERY == 0 || done == cfg.iterations {
            kl_history.push((done, kl_divergence(&p, &y, n)));
        }
    }
    Ok(TsneResult {
        embedding: Tensor::new(&[n, 2], y)?,
        kl_history,
    })
}
