use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::compact_labels;
use crate::cluster::squared_euclidean;
use crate::error::{Error, Result};
use crate::tensor::kernels::gemm;
use crate::tensor::Tensor;

/// Reported in place of an index whose denominator vanished.
pub const DEGENERATE_SENTINEL: f64 = 1e12;

const BLOCK_ROWS: usize = 256;

/// A score together with whether a zero denominator forced the sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardedScore {
    pub value: f64,
    pub degenerate: bool,
}

fn prepare(x: &Tensor<f64>, labels: &[usize], what: &str) -> Result<(Vec<usize>, usize)> {
    if x.rank() != 2 {
        return Err(Error::dim(format!("{what} needs an [N, D] matrix, got {:?}", x.shape())));
    }
    if x.rows() != labels.len() {
        return Err(Error::Contract(format!("{what}: {} rows but {} labels", x.rows(), labels.len())));
    }
    let (compact, k) = compact_labels(labels);
    if k < 2 {
        return Err(Error::UndefinedMetric(format!("{what} needs at least 2 clusters, got {k}")));
    }
    Ok((compact, k))
}

fn centroids(x: &Tensor<f64>, labels: &[usize], k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let d = x.row_len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        sums[l].iter_mut().zip(x.row(i)).for_each(|(s, v)| *s += v);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c as f64);
    }
    (sums, counts)
}

/// Mean silhouette coefficient with Euclidean distance. Samples in singleton
/// clusters score 0. Pairwise distances are formed blockwise through GEMM.
pub fn silhouette(x: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let (labels, k) = prepare(x, labels, "silhouette")?;
    let (n, d) = (x.rows(), x.row_len());
    let norms: Vec<f64> = (0..n).map(|i| x.row(i).iter().map(|v| v * v).sum()).collect();
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);

    let mut gram = vec![0.0; BLOCK_ROWS * n];
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for start in (0..n).step_by(BLOCK_ROWS) {
        let rows = BLOCK_ROWS.min(n - start);
        let block = &x.data()[start * d..(start + rows) * d];
        let g = &mut gram[..rows * n];
        gemm(rows, d, n, block, false, x.data(), true, 0.0, g);
        for r in 0..rows {
            let i = start + r;
            sums.iter_mut().for_each(|s| *s = 0.0);
            let gi = &g[r * n..(r + 1) * n];
            for j in 0..n {
                if j != i {
                    let d2 = (norms[i] + norms[j] - 2.0 * gi[j]).max(0.0);
                    sums[labels[j]] += d2.sqrt();
                }
            }
            let own = labels[i];
            if counts[own] < 2 {
                continue;
            }
            let a = sums[own] / (counts[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && counts[c] > 0)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                total += (b - a) / m;
            }
        }
    }
    Ok(total / n as f64)
}

/// Silhouette over a seeded uniform subset of `sample_size` rows.
pub fn silhouette_sampled(x: &Tensor<f64>, labels: &[usize], sample_size: usize, seed: u64) -> Result<f64> {
    if sample_size >= labels.len() {
        return silhouette(x, labels);
    }
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), labels.len(), sample_size).into_vec();
    idx.sort_unstable();
    let sub: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    silhouette(&x.select_rows(&idx)?, &sub)
}

/// Davies-Bouldin index with σ = mean Euclidean member-to-centroid distance.
/// Coincident centroids yield [`DEGENERATE_SENTINEL`] for that pair.
pub fn davies_bouldin(x: &Tensor<f64>, labels: &[usize]) -> Result<GuardedScore> {
    let (labels, k) = prepare(x, labels, "davies_bouldin")?;
    let (cent, counts) = centroids(x, &labels, k);
    let mut spread = vec![0.0; k];
    for (i, &l) in labels.iter().enumerate() {
        spread[l] += squared_euclidean(x.row(i), &cent[l]).sqrt();
    }
    spread.iter_mut().zip(&counts).for_each(|(s, &c)| *s /= c as f64);
    let mut degenerate = false;
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in (0..k).filter(|&j| j != i) {
            let sep = squared_euclidean(&cent[i], &cent[j]).sqrt();
            let ratio = if sep > 0.0 {
                (spread[i] + spread[j]) / sep
            } else {
                degenerate = true;
                DEGENERATE_SENTINEL
            };
            worst = worst.max(ratio);
        }
        total += worst;
    }
    let value = if degenerate { DEGENERATE_SENTINEL } else { total / k as f64 };
    Ok(GuardedScore { value, degenerate })
}

/// Calinski-Harabasz variance ratio. Zero within-cluster scatter yields
/// [`DEGENERATE_SENTINEL`].
pub fn calinski_harabasz(x: &Tensor<f64>, labels: &[usize]) -> Result<GuardedScore> {
    let (labels, k) = prepare(x, labels, "calinski_harabasz")?;
    let n = labels.len();
    if k >= n {
        return Err(Error::UndefinedMetric(format!("calinski_harabasz needs k < N (k={k}, N={n})")));
    }
    let (cent, counts) = centroids(x, &labels, k);
    let d = x.row_len();
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let between: f64 = (0..k).map(|c| counts[c] as f64 * squared_euclidean(&cent[c], &mean)).sum();
    let within: f64 = (0..n).map(|i| squared_euclidean(x.row(i), &cent[labels[i]])).sum();
    if within == 0.0 {
        return Ok(GuardedScore {
            value: DEGENERATE_SENTINEL,
            degenerate: true,
        });
    }
    Ok(GuardedScore {
        value: (between / (k - 1) as f64) / (within / (n - k) as f64),
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::random_tensor;
    use rand::Rng;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]) * (a[i] - b[i]);
        }
        s.sqrt()
    }

    fn loop_silhouette(x: &Tensor<f64>, l: &[usize]) -> f64 {
        let n = l.len();
        let mut total = 0.0;
        for i in 0..n {
            let same: Vec<usize> = (0..n).filter(|&j| j != i && l[j] == l[i]).collect();
            if same.is_empty() {
                continue;
            }
            let a = same.iter().map(|&j| dist(x.row(i), x.row(j))).sum::<f64>() / same.len() as f64;
            let mut b = f64::INFINITY;
            let mut others: Vec<usize> = l.iter().copied().filter(|&c| c != l[i]).collect();
            others.sort_unstable();
            others.dedup();
            for c in others {
                let members: Vec<usize> = (0..n).filter(|&j| l[j] == c).collect();
                let m = members.iter().map(|&j| dist(x.row(i), x.row(j))).sum::<f64>() / members.len() as f64;
                b = b.min(m);
            }
            if a.max(b) > 0.0 {
                total += (b - a) / a.max(b);
            }
        }
        total / n as f64
    }

    fn loop_centroid(x: &Tensor<f64>, l: &[usize], c: usize) -> Vec<f64> {
        let members: Vec<usize> = (0..l.len()).filter(|&j| l[j] == c).collect();
        (0..x.row_len())
            .map(|f| members.iter().map(|&j| x.row(j)[f]).sum::<f64>() / members.len() as f64)
            .collect()
    }

    fn loop_db(x: &Tensor<f64>, l: &[usize], k: usize) -> f64 {
        let cents: Vec<Vec<f64>> = (0..k).map(|c| loop_centroid(x, l, c)).collect();
        let sig: Vec<f64> = (0..k)
            .map(|c| {
                let m: Vec<usize> = (0..l.len()).filter(|&j| l[j] == c).collect();
                m.iter().map(|&j| dist(x.row(j), &cents[c])).sum::<f64>() / m.len() as f64
            })
            .collect();
        let mut s = 0.0;
        for i in 0..k {
            let mut best = 0.0f64;
            for j in 0..k {
                if i != j {
                    best = best.max((sig[i] + sig[j]) / dist(&cents[i], &cents[j]));
                }
            }
            s += best;
        }
        s / k as f64
    }

    fn loop_ch(x: &Tensor<f64>, l: &[usize], k: usize) -> f64 {
        let n = l.len();
        let all: Vec<usize> = vec![0; n];
        let mu = loop_centroid(x, &all, 0);
        let mut b = 0.0;
        let mut w = 0.0;
        for c in 0..k {
            let cent = loop_centroid(x, l, c);
            let size = l.iter().filter(|&&v| v == c).count() as f64;
            b += size * dist(&cent, &mu).powi(2);
            for j in (0..n).filter(|&j| l[j] == c) {
                w += dist(x.row(j), &cent).powi(2);
            }
        }
        (b / (k - 1) as f64) / (w / (n - k) as f64)
    }

    /// Random instance with every cluster in `0..k` non-empty.
    fn instance(seed: u64) -> (Tensor<f64>, Vec<usize>, usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(12..=50);
        let k = rng.random_range(2..=6);
        let d = rng.random_range(1..=5);
        let x = random_tensor(&[n, d], seed + 100);
        let mut l: Vec<usize> = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
        l.rotate_left(rng.random_range(0..n));
        (x, l, k)
    }

    #[test]
    fn silhouette_hand_example() {
        let x = Tensor::new(&[4, 1], vec![0.0, 1.0, 10.0, 11.0]).unwrap();
        let s = silhouette(&x, &[0, 0, 1, 1]).unwrap();
        // outer points: a = 1, b = 10.5; inner points: a = 1, b = 9.5
        let want = (2.0 * (9.5 / 10.5) + 2.0 * (8.5 / 9.5)) / 4.0;
        assert!((s - want).abs() < 1e-12, "{s}");
    }

    #[test]
    fn silhouette_coincident_far_clusters() {
        let x = Tensor::new(&[4, 2], vec![0.0, 0.0, 0.0, 0.0, 1e3, 0.0, 1e3, 0.0]).unwrap();
        assert!(silhouette(&x, &[0, 0, 1, 1]).unwrap() > 0.99);
    }

    #[test]
    fn single_cluster_is_undefined() {
        let x = random_tensor(&[5, 2], 1);
        assert!(matches!(silhouette(&x, &[3; 5]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(davies_bouldin(&x, &[0; 5]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(calinski_harabasz(&x, &[0; 5]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(calinski_harabasz(&x, &[0, 1, 2, 3, 4]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn internal_metrics_match_loop_oracles() {
        for seed in 0..25 {
            let (x, l, k) = instance(seed);
            let s = silhouette(&x, &l).unwrap();
            assert!((s - loop_silhouette(&x, &l)).abs() < 1e-6, "seed {seed}");
            let db = davies_bouldin(&x, &l).unwrap();
            assert!(!db.degenerate);
            assert!((db.value - loop_db(&x, &l, k)).abs() < 1e-6, "seed {seed}");
            let ch = calinski_harabasz(&x, &l).unwrap().value;
            let want = loop_ch(&x, &l, k);
            assert!(((ch - want) / want).abs() < 1e-4, "seed {seed}");
        }
    }

    #[test]
    fn random_labels_give_small_silhouette() {
        let x = random_tensor(&[50, 4], 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let l: Vec<usize> = (0..50).map(|_| rng.random_range(0..3)).collect();
        assert!(silhouette(&x, &l).unwrap().abs() < 0.2);
    }

    #[test]
    fn db_limits_and_guard() {
        let tight = Tensor::new(&[4, 1], vec![0.0, 0.001, 100.0, 100.001]).unwrap();
        assert!(davies_bouldin(&tight, &[0, 0, 1, 1]).unwrap().value < 1e-4);
        // interleaved halves of the same blob
        let x = random_tensor(&[40, 2], 9);
        let l: Vec<usize> = (0..40).map(|i| i % 2).collect();
        assert!(davies_bouldin(&x, &l).unwrap().value > 2.0);
        let same = Tensor::new(&[4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let g = davies_bouldin(&same, &[0, 0, 1, 1]).unwrap();
        assert!(g.degenerate && g.value == DEGENERATE_SENTINEL);
    }

    #[test]
    fn ch_zero_within_scatter_is_flagged() {
        let x = Tensor::new(&[4, 1], vec![0.0, 0.0, 5.0, 5.0]).unwrap();
        let g = calinski_harabasz(&x, &[0, 0, 1, 1]).unwrap();
        assert!(g.degenerate && g.value.is_finite());
    }

    #[test]
    fn sampled_silhouette_is_deterministic() {
        let (x, l, _) = instance(3);
        let a = silhouette_sampled(&x, &l, 10, 5).unwrap();
        assert_eq!(a, silhouette_sampled(&x, &l, 10, 5).unwrap());
        assert_eq!(silhouette_sampled(&x, &l, 1000, 5).unwrap(), silhouette(&x, &l).unwrap());
    }

    fn random_orthogonal(d: usize, seed: u64) -> Vec<Vec<f64>> {
        // Gram-Schmidt on a random square matrix
        let m = random_tensor(&[d, d], seed);
        let mut q: Vec<Vec<f64>> = Vec::new();
        for i in 0..d {
            let mut v = m.row(i).to_vec();
            for u in &q {
                let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            q.push(v);
        }
        q
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn invariant_under_relabel_and_rotation(seed in 0u64..10_000) {
            let (x, l, k) = instance(seed);
            let shift: Vec<usize> = (0..k).map(|c| (c * 7 + 3) % k + 10).collect();
            let relabeled: Vec<usize> = l.iter().map(|&c| shift[c]).collect();
            let d = x.row_len();
            let q = random_orthogonal(d, seed + 1);
            let rows: Vec<Vec<f64>> = (0..x.rows())
                .map(|i| (0..d).map(|r| q[r].iter().zip(x.row(i)).map(|(a, b)| a * b).sum()).collect())
                .collect();
            let xr = Tensor::from_rows(&rows).unwrap();
            let s = silhouette(&x, &l).unwrap();
            let db = davies_bouldin(&x, &l).unwrap().value;
            let ch = calinski_harabasz(&x, &l).unwrap().value;
            for (xx, ll) in [(&x, &relabeled), (&xr, &l)] {
                proptest::prop_assert!((silhouette(xx, ll).unwrap() - s).abs() < 1e-5);
                proptest::prop_assert!((davies_bouldin(xx, ll).unwrap().value - db).abs() < 1e-5);
                proptest::prop_assert!(((calinski_harabasz(xx, ll).unwrap().value - ch) / ch).abs() < 1e-5);
            }
        }
    }
}
