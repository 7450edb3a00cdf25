use nalgebra::{DMatrix, SymmetricEigen};

use super::check_matrix;
use crate::error::{Error, Result};
use crate::tensor::kernels::gemm;
use crate::tensor::Tensor;

/// Eigenvalues below this fraction of the largest are treated as zero rank.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    /// `[D]`.
    pub mean: Vec<f64>,
    /// `[m, D]`, orthonormal rows ordered by decreasing variance.
    pub components: Tensor<f64>,
    /// Sample variance (denominator `N - 1`) along each component.
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    fn centred(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (_, d) = check_matrix(x, "pca transform")?;
        if d != self.mean.len() {
            return Err(Error::dim(format!("pca: model has D={}, input has D={d}", self.mean.len())));
        }
        let mut c = x.clone();
        for row in c.data_mut().chunks_mut(d) {
            row.iter_mut().zip(&self.mean).for_each(|(v, m)| *v -= m);
        }
        Ok(c)
    }

    /// `(x - mean) · componentsᵀ` → `[N, m]`.
    pub fn transform(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let c = self.centred(x)?;
        let (n, d, m) = (c.rows(), self.mean.len(), self.n_components());
        let mut out = vec![0.0; n * m];
        gemm(n, d, m, c.data(), false, self.components.data(), true, 0.0, &mut out);
        Tensor::new(&[n, m], out)
    }

    /// `y · components + mean` → `[N, D]`.
    pub fn inverse_transform(&self, y: &Tensor<f64>) -> Result<Tensor<f64>> {
        let (n, m) = check_matrix(y, "pca inverse")?;
        if m != self.n_components() {
            return Err(Error::dim(format!("pca: expected {} components, got {m}", self.n_components())));
        }
        let d = self.mean.len();
        let mut out = vec![0.0; n * d];
        gemm(n, m, d, y.data(), false, self.components.data(), false, 0.0, &mut out);
        for row in out.chunks_mut(d) {
            row.iter_mut().zip(&self.mean).for_each(|(v, mu)| *v += mu);
        }
        Tensor::new(&[n, d], out)
    }
}

/// Fit PCA on the rows of `x` and project them. If the data has rank below
/// `n_components`, only the available directions are kept.
pub fn pca_fit_transform(x: &Tensor<f64>, n_components: usize) -> Result<(Tensor<f64>, PcaModel)> {
    let (n, d) = check_matrix(x, "pca")?;
    if n_components == 0 {
        return Err(Error::Config("pca: n_components must be positive".into()));
    }
    if n <= n_components {
        return Err(Error::InsufficientData(format!("pca: {n} samples for {n_components} components")));
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let proto = PcaModel {
        mean,
        components: Tensor::zeros(&[0, d]),
        explained_variance: vec![],
    };
    let centred = proto.centred(x)?;

    let mut cov = vec![0.0; d * d];
    gemm(d, n, d, centred.data(), true, centred.data(), false, 0.0, &mut cov);
    let scale = 1.0 / (n - 1) as f64;
    cov.iter_mut().for_each(|v| *v *= scale);
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let available = order
        .iter()
        .take_while(|&&i| eig.eigenvalues[i] > RANK_TOL * top && top > 0.0)
        .count();
    let m = n_components.min(available).min(d);
    if m < n_components {
        log::warn!("pca: data rank {available} < {n_components}; keeping {m} components");
    }

    let mut components = Vec::with_capacity(m * d);
    let mut explained_variance = Vec::with_capacity(m);
    for &i in &order[..m] {
        let col = eig.eigenvectors.column(i);
        // sign convention: largest-magnitude entry positive
        let pivot = (0..d).fold(0, |best, j| if col[j].abs() > col[best].abs() { j } else { best });
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        components.extend(col.iter().map(|v| sign * v));
        explained_variance.push(eig.eigenvalues[i]);
    }
    let model = PcaModel {
        components: Tensor::new(&[m, d], components)?,
        explained_variance,
        ..proto
    };
    let projected = model.transform(x)?;
    Ok((projected, model))
}
