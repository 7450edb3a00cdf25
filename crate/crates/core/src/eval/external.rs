use serde::{Deserialize, Serialize};

use super::{check_same_len, compact_labels};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiVariant {
    /// Mutual information over the arithmetic mean of the two entropies.
    #[default]
    Arithmetic,
    /// Mutual information over the geometric mean of the two entropies.
    Geometric,
}

struct Contingency {
    n: u64,
    cells: Vec<Vec<u64>>,
    rows: Vec<u64>,
    cols: Vec<u64>,
}

fn contingency(a: &[usize], b: &[usize]) -> Contingency {
    let (a, ka) = compact_labels(a);
    let (b, kb) = compact_labels(b);
    let mut cells = vec![vec![0u64; kb]; ka];
    for (&i, &j) in a.iter().zip(&b) {
        cells[i][j] += 1;
    }
    let rows = cells.iter().map(|r| r.iter().sum()).collect();
    let cols = (0..kb).map(|j| cells.iter().map(|r| r[j]).sum()).collect();
    Contingency {
        n: a.len() as u64,
        cells,
        rows,
        cols,
    }
}

fn entropy(counts: &[u64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalised mutual information (natural log). A zero normaliser gives 0.
pub fn nmi(truth: &[usize], pred: &[usize], variant: NmiVariant) -> Result<f64> {
    check_same_len(truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::Contract("nmi needs at least one sample".into()));
    }
    let t = contingency(truth, pred);
    let n = t.n as f64;
    let mut mi = 0.0;
    for (i, row) in t.cells.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * ((n * c) / (t.rows[i] as f64 * t.cols[j] as f64)).ln();
            }
        }
    }
    let (hu, hv) = (entropy(&t.rows, n), entropy(&t.cols, n));
    let norm = match variant {
        NmiVariant::Arithmetic => 0.5 * (hu + hv),
        NmiVariant::Geometric => (hu * hv).sqrt(),
    };
    if norm <= 0.0 {
        return Ok(0.0);
    }
    Ok((mi / norm).clamp(0.0, 1.0))
}

fn pairs(c: u64) -> i128 {
    let c = c as i128;
    c * (c - 1) / 2
}

/// Adjusted Rand index from exact pair counts. When both partitions are
/// trivial in the same way the index is 1 by convention.
pub fn ari(truth: &[usize], pred: &[usize]) -> Result<f64> {
    check_same_len(truth.len(), pred.len())?;
    if truth.len() < 2 {
        return Err(Error::Contract("ari needs at least two samples".into()));
    }
    let t = contingency(truth, pred);
    let index: i128 = t.cells.iter().flatten().map(|&c| pairs(c)).sum();
    let sa: i128 = t.rows.iter().map(|&c| pairs(c)).sum();
    let sb: i128 = t.cols.iter().map(|&c| pairs(c)).sum();
    let total = pairs(t.n);
    // (index - sa·sb/total) / ((sa+sb)/2 - sa·sb/total), scaled by 2·total
    let num = 2 * (index * total - sa * sb);
    let den = (sa + sb) * total - 2 * sa * sb;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}
