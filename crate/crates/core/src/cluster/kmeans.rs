use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_matrix, squared_euclidean};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the summed squared centroid movement falls below this.
    pub tol: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 10,
            seed: 0,
            max_iter: 300,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `[k, D]`.
    pub centroids: Tensor<f64>,
    /// Every value in `0..k`; every cluster non-empty.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    /// Lloyd iterations performed.
    pub iterations: usize,
    /// Inertia after each assignment step; non-increasing.
    pub inertia_history: Vec<f64>,
}

fn nearest(row: &[f64], centroids: &Tensor<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = squared_euclidean(row, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: first centre uniform, then each next centre drawn with
/// probability proportional to squared distance from the chosen set.
fn init_plus_plus(x: &Tensor<f64>, k: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = x.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut closest: Vec<f64> = (0..n).map(|i| squared_euclidean(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in closest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // all remaining mass is zero: any point, repair handles duplicates
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, c) in closest.iter_mut().enumerate() {
            *c = c.min(squared_euclidean(x.row(i), x.row(next)));
        }
    }
    x.select_rows(&chosen).expect("indices in range")
}

/// Assign every row to its nearest centroid; returns inertia.
fn assign(x: &Tensor<f64>, centroids: &Tensor<f64>, labels: &mut [usize], dists: &mut [f64]) -> f64 {
    let mut inertia = 0.0;
    for i in 0..x.rows() {
        let (c, d) = nearest(x.row(i), centroids);
        labels[i] = c;
        dists[i] = d;
        inertia += d;
    }
    inertia
}

/// Give every empty cluster the point farthest from its current centroid
/// (taken from clusters with more than one member).
fn repair_empty(k: usize, labels: &mut [usize], dists: &mut [f64]) -> bool {
    let mut counts = vec![0usize; k];
    for &l in labels.iter() {
        counts[l] += 1;
    }
    let mut repaired = false;
    for c in 0..k {
        if counts[c] > 0 {
            continue;
        }
        let far = (0..labels.len())
            .filter(|&i| counts[labels[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if dists[b] >= dists[i] => Some(b),
                _ => Some(i),
            })
            .expect("n >= k leaves a cluster with spare members");
        counts[labels[far]] -= 1;
        counts[c] = 1;
        labels[far] = c;
        dists[far] = 0.0;
        repaired = true;
    }
    repaired
}

fn centroids_of(x: &Tensor<f64>, labels: &[usize], k: usize) -> Tensor<f64> {
    let d = x.row_len();
    let mut sums = Tensor::zeros(&[k, d]);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums.row_mut(l).iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        let inv = 1.0 / count.max(1) as f64;
        sums.row_mut(c).iter_mut().for_each(|s| *s *= inv);
    }
    sums
}

/// Single-initialisation KMeans: k-means++ seeding then Lloyd iterations.
pub fn kmeans_fit(x: &Tensor<f64>, cfg: &KMeansConfig) -> Result<KMeansResult> {
    let (n, _) = check_matrix(x, "kmeans")?;
    let k = cfg.k;
    if k == 0 {
        return Err(Error::Config("kmeans: k must be positive".into()));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("kmeans: {n} samples for k={k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = init_plus_plus(x, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        let mut inertia = assign(x, &centroids, &mut labels, &mut dists);
        if repair_empty(k, &mut labels, &mut dists) {
            inertia = dists.iter().sum();
        }
        history.push(inertia);
        iterations += 1;
        let updated = centroids_of(x, &labels, k);
        let shift: f64 = updated.data().iter().zip(centroids.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        centroids = updated;
        if shift < cfg.tol {
            break;
        }
    }

    // final assignment against the final centroids
    let mut inertia = assign(x, &centroids, &mut labels, &mut dists);
    if repair_empty(k, &mut labels, &mut dists) {
        centroids = centroids_of(x, &labels, k);
        inertia = (0..n).map(|i| squared_euclidean(x.row(i), centroids.row(labels[i]))).sum();
    }
    history.push(inertia);
    Ok(KMeansResult {
        centroids,
        assignments: labels,
        inertia,
        iterations,
        inertia_history: history,
    })
}

/// CSV with header `index,cluster`.
pub fn assignments_csv(assignments: &[usize]) -> String {
    let mut out = String::from("index,cluster\n");
    for (i, c) in assignments.iter().enumerate() {
        let _ = writeln!(out, "{i},{c}");
    }
    out
}
