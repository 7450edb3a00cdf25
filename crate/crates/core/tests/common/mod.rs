//! Shared by the integration targets.

#![allow(dead_code)]

use std::path::PathBuf;

use latent_cluster::cli::DATA_DIR_ENV;
use latent_cluster::data::MnistDir;

/// MNIST directory from `$LATENT_CLUSTER_DATA_DIR`, else `<workspace>/data/mnist`,
/// provided all four IDX files are present.
pub fn mnist_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from),
        Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")),
    ];
    candidates.into_iter().flatten().find(|d| MnistDir(d.clone()).missing().is_empty())
}

/// Drop the wall-clock column so logs from separate runs can be compared.
pub fn log_without_seconds(csv: &str) -> String {
    csv.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}
