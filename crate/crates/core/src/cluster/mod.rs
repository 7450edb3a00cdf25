//! KMeans over embeddings or pixels, and the PCA baseline projection.
//!
//! Feature matrices are rank-2 `Tensor<f64>` (`[N, D]`). Distances are
//! squared Euclidean throughout.

mod kmeans;
mod pca;

pub use kmeans::{assignments_csv, kmeans_fit, KMeansConfig, KMeansResult};
pub use pca::{pca_fit_transform, PcaModel};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_matrix(x: &Tensor<f64>, what: &str) -> Result<(usize, usize)> {
    if x.rank() != 2 {
        return Err(Error::dim(format!("{what} needs an [N, D] matrix, got {:?}", x.shape())));
    }
    Ok((x.shape()[0], x.shape()[1]))
}
