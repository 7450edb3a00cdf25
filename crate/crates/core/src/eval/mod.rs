//! Clustering quality metrics.
//!
//! Internal indices (silhouette, Davies-Bouldin, Calinski-Harabasz) look at
//! the geometry of `X`; external ones (NMI, ARI, aligned accuracy) compare a
//! predicted partition with ground-truth labels. Every metric depends only on
//! the partition, not on the particular cluster ids.

mod external;
mod hungarian;
mod internal;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use external::{ari, nmi, NmiVariant};
pub use hungarian::{hungarian_align, linear_sum_assignment, Alignment};
pub use internal::{calinski_harabasz, davies_bouldin, silhouette, silhouette_sampled, GuardedScore, DEGENERATE_SENTINEL};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Relabel arbitrary ids to `0..k` in increasing id order.
pub(crate) fn compact_labels(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        ids.entry(l).or_insert(0usize);
    }
    for (i, v) in ids.values_mut().enumerate() {
        *v = i;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

pub(crate) fn check_same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!("label vectors differ in length ({a} vs {b})")));
    }
    Ok(())
}

/// One clustering run scored with every metric. Serialises to JSON with
/// exactly these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub silhouette: f64,
    pub davies_bouldin: f64,
    pub calinski_harabasz: f64,
    pub nmi: f64,
    pub ari: f64,
    pub aligned_accuracy: f64,
    pub n_samples: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub k: usize,
    pub nmi_variant: NmiVariant,
    /// Silhouette on a seeded random subset of this size (`None`: all rows).
    pub silhouette_sample: Option<usize>,
    pub seed: u64,
}

impl MetricsReport {
    pub fn compute(x: &Tensor<f64>, clusters: &[usize], truth: &[usize], opts: &ReportOptions) -> Result<Self> {
        check_same_len(clusters.len(), truth.len())?;
        let silhouette = match opts.silhouette_sample {
            Some(s) if s < clusters.len() => silhouette_sampled(x, clusters, s, opts.seed)?,
            _ => silhouette(x, clusters)?,
        };
        let db = davies_bouldin(x, clusters)?;
        let ch = calinski_harabasz(x, clusters)?;
        for (name, g) in [("davies_bouldin", db), ("calinski_harabasz", ch)] {
            if g.degenerate {
                log::warn!("{name} hit a zero denominator; reporting sentinel {}", g.value);
            }
        }
        Ok(Self {
            silhouette,
            davies_bouldin: db.value,
            calinski_harabasz: ch.value,
            nmi: nmi(truth, clusters, opts.nmi_variant)?,
            ari: ari(truth, clusters)?,
            aligned_accuracy: hungarian_align(truth, clusters, opts.k)?.accuracy,
            n_samples: clusters.len(),
            k: opts.k,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serialises") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Ranges hold and every value is finite.
    pub fn is_valid(&self) -> bool {
        let finite = [
            self.silhouette,
            self.davies_bouldin,
            self.calinski_harabasz,
            self.nmi,
            self.ari,
            self.aligned_accuracy,
        ]
        .iter()
        .all(|v| v.is_finite());
        finite
            && (-1.0..=1.0).contains(&self.silhouette)
            && self.davies_bouldin >= 0.0
            && self.calinski_harabasz >= 0.0
            && (0.0..=1.0).contains(&self.nmi)
            && (-1.0..=1.0).contains(&self.ari)
            && (0.0..=1.0).contains(&self.aligned_accuracy)
    }
}
