use super::check_same_len;
use crate::error::{Error, Result};

/// Minimum-cost assignment of every row to a distinct column (rows ≤ columns),
/// by the O(n²m) shortest-augmenting-path method with potentials. Returns the
/// column chosen for each row.
pub fn linear_sum_assignment(cost: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = cost.len();
    if n == 0 {
        return Ok(vec![]);
    }
    let m = cost[0].len();
    if cost.iter().any(|r| r.len() != m) || n > m {
        return Err(Error::dim(format!("assignment needs a rectangular n×m cost with n ≤ m ({n} rows)")));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::Contract("assignment costs must be finite".into()));
    }
    // 1-based internally; column 0 is a virtual start
    let (mut u, mut v) = (vec![0.0; n + 1], vec![0.0; m + 1]);
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[r0 - 1][j - 1] - u[r0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = col0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    col1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        while col0 != 0 {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `mapping[cluster] = class`, a bijection on `0..k`.
    pub mapping: Vec<usize>,
    pub accuracy: f64,
}

/// Match cluster ids to classes maximising agreement, and report the
/// fraction of samples whose mapped cluster equals their class.
pub fn hungarian_align(truth: &[usize], clusters: &[usize], k: usize) -> Result<Alignment> {
    check_same_len(truth.len(), clusters.len())?;
    if truth.is_empty() {
        return Err(Error::Contract("alignment needs at least one sample".into()));
    }
    if let Some(bad) = truth.iter().chain(clusters).find(|&&l| l >= k) {
        return Err(Error::Contract(format!("label {bad} outside 0..{k}")));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &c) in truth.iter().zip(clusters) {
        counts[c][t] += 1;
    }
    let cost: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|&c| -(c as f64)).collect()).collect();
    let mapping = linear_sum_assignment(&cost)?;
    let hits: u64 = mapping.iter().enumerate().map(|(c, &t)| counts[c][t]).sum();
    Ok(Alignment {
        mapping,
        accuracy: hits as f64 / truth.len() as f64,
    })
}
