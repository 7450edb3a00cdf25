//! Differentiable layer kernels recorded on a [`Tape`].

use crate::error::{Error, Result};
use crate::tensor::kernels::{col2im, gemm, im2col, ConvGeom};
use crate::tensor::{Backward, BackwardCtx, Element, Tape, Tensor, Var};

/// Norms below this are treated as zero by [`l2_normalize_rows`].
pub const NORM_EPS: f64 = 1e-12;

fn dims4(t: &[usize], what: &str) -> Result<[usize; 4]> {
    <[usize; 4]>::try_from(t).map_err(|_| Error::dim(format!("{what} must be rank 4, got {t:?}")))
}

fn channel_sums<T: Element>(grad: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); c];
    for b in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (b * c + ch) * hw;
            *o += grad[base..base + hw].iter().fold(T::zero(), |s, &g| s + g);
        }
    }
    out
}

struct Conv2dOp {
    geom: ConvGeom,
    batch: usize,
    out_ch: usize,
}

impl<T: Element> Backward<T> for Conv2dOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let g = &self.geom;
        let (x, w) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let out_len = self.out_ch * ncols;
        let mut dx = ctx.needs_grad[0].then(|| vec![T::zero(); x.len()]);
        let mut dw = ctx.needs_grad[1].then(|| vec![T::zero(); w.len()]);
        let mut cols = vec![T::zero(); rows * ncols];
        for b in 0..self.batch {
            let dout = &ctx.grad[b * out_len..(b + 1) * out_len];
            if let Some(dw) = dw.as_mut() {
                im2col(&x[b * g.image_len()..(b + 1) * g.image_len()], g, &mut cols);
                gemm(self.out_ch, ncols, rows, dout, false, &cols, true, T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                gemm(rows, self.out_ch, ncols, w, true, dout, false, T::zero(), &mut cols);
                col2im(&cols, g, &mut dx[b * g.image_len()..(b + 1) * g.image_len()]);
            }
        }
        let db = ctx.needs_grad[2].then(|| channel_sums(ctx.grad, self.batch, self.out_ch, ncols));
        vec![dx, dw, db]
    }
}

/// Cross-correlation of `x[N, C, H, W]` with `weight[O, C, K, K]` plus
/// `bias[O]`.
pub fn conv2d<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    weight: Var,
    bias: Var,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let [n, c, h, w] = dims4(tape.shape(x), "conv2d input")?;
    let [o, wc, k, k2] = dims4(tape.shape(weight), "conv2d weight")?;
    if wc != c {
        return Err(Error::dim(format!(
            "conv2d: input has {c} channels, weight expects {wc}"
        )));
    }
    if k != k2 || h + 2 * pad < k || w + 2 * pad < k {
        return Err(Error::dim(format!(
            "conv2d: kernel {k}x{k2} does not fit {h}x{w} with padding {pad}"
        )));
    }
    if tape.shape(bias) != [o] {
        return Err(Error::dim(format!("conv2d: bias must be [{o}]")));
    }
    let geom = ConvGeom::conv(c, h, w, k, stride, pad);
    let (rows, ncols) = (geom.col_rows(), geom.col_cols());
    let (xs, ws, bs) = (tape.value(x).data(), tape.value(weight).data(), tape.value(bias).data());
    let mut out = vec![T::zero(); n * o * ncols];
    let mut cols = vec![T::zero(); rows * ncols];
    for b in 0..n {
        im2col(&xs[b * geom.image_len()..(b + 1) * geom.image_len()], &geom, &mut cols);
        let dst = &mut out[b * o * ncols..(b + 1) * o * ncols];
        for (ch, plane) in dst.chunks_exact_mut(ncols).enumerate() {
            plane.fill(bs[ch]);
        }
        gemm(o, rows, ncols, ws, false, &cols, false, T::one(), dst);
    }
    let out = Tensor::new(&[n, o, geom.out_h, geom.out_w], out)?;
    Ok(tape.record(&[x, weight, bias], out, Conv2dOp { geom, batch: n, out_ch: o }))
}

struct ConvTranspose2dOp {
    /// Image side is the transposed-conv *output*; patch grid is its input.
    geom: ConvGeom,
    batch: usize,
    in_ch: usize,
}

impl<T: Element> Backward<T> for ConvTranspose2dOp {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let g = &self.geom;
        let (x, w) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let in_len = self.in_ch * ncols;
        let mut dx = ctx.needs_grad[0].then(|| vec![T::zero(); x.len()]);
        let mut dw = ctx.needs_grad[1].then(|| vec![T::zero(); w.len()]);
        let mut cols = vec![T::zero(); rows * ncols];
        if dx.is_some() || dw.is_some() {
            for b in 0..self.batch {
                im2col(&ctx.grad[b * g.image_len()..(b + 1) * g.image_len()], g, &mut cols);
                if let Some(dx) = dx.as_mut() {
                    let dst = &mut dx[b * in_len..(b + 1) * in_len];
                    gemm(self.in_ch, rows, ncols, w, false, &cols, false, T::zero(), dst);
                }
                if let Some(dw) = dw.as_mut() {
                    let xb = &x[b * in_len..(b + 1) * in_len];
                    gemm(self.in_ch, ncols, rows, xb, false, &cols, true, T::one(), dw);
                }
            }
        }
        let db = ctx.needs_grad[2].then(|| {
            channel_sums(ctx.grad, self.batch, g.channels, g.in_h * g.in_w)
        });
        vec![dx, dw, db]
    }
}

/// Transposed convolution of `x[N, I, H, W]` with `weight[I, O, K, K]` plus
/// `bias[O]`. Output spatial size is `(H - 1)·stride - 2·pad + K + output_pad`.
pub fn conv_transpose2d<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    weight: Var,
    bias: Var,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Result<Var> {
    let [n, c, h, w] = dims4(tape.shape(x), "conv_transpose2d input")?;
    let [wc, o, k, k2] = dims4(tape.shape(weight), "conv_transpose2d weight")?;
    if wc != c {
        return Err(Error::dim(format!(
            "conv_transpose2d: input has {c} channels, weight expects {wc}"
        )));
    }
    if k != k2 || h == 0 || w == 0 || output_pad >= stride.max(1) {
        return Err(Error::dim("conv_transpose2d: invalid geometry"));
    }
    if tape.shape(bias) != [o] {
        return Err(Error::dim(format!("conv_transpose2d: bias must be [{o}]")));
    }
    let out_size = |x: usize| ((x - 1) * stride + k + output_pad).checked_sub(2 * pad);
    let (Some(oh), Some(ow)) = (out_size(h), out_size(w)) else {
        return Err(Error::dim("conv_transpose2d: padding exceeds output"));
    };
    let geom = ConvGeom {
        channels: o,
        in_h: oh,
        in_w: ow,
        out_h: h,
        out_w: w,
        kernel: k,
        stride,
        pad,
    };
    let (rows, ncols) = (geom.col_rows(), geom.col_cols());
    let (xs, ws, bs) = (tape.value(x).data(), tape.value(weight).data(), tape.value(bias).data());
    let mut out = vec![T::zero(); n * geom.image_len()];
    let mut cols = vec![T::zero(); rows * ncols];
    for b in 0..n {
        let xb = &xs[b * c * ncols..(b + 1) * c * ncols];
        gemm(rows, c, ncols, ws, true, xb, false, T::zero(), &mut cols);
        let dst = &mut out[b * geom.image_len()..(b + 1) * geom.image_len()];
        for (ch, plane) in dst.chunks_exact_mut(oh * ow).enumerate() {
            plane.fill(bs[ch]);
        }
        col2im(&cols, &geom, dst);
    }
    let out = Tensor::new(&[n, o, oh, ow], out)?;
    Ok(tape.record(&[x, weight, bias], out, ConvTranspose2dOp { geom, batch: n, in_ch: c }))
}

/// Which statistics batch norm normalises with.
#[derive(Debug, Clone, Copy)]
pub enum NormStats<'a, T> {
    /// Current batch statistics.
    Batch,
    /// Stored running statistics.
    Running { mean: &'a [T], var: &'a [T] },
}

/// Per-channel statistics observed in a training-mode batch-norm pass.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (`M - 1` denominator) variance, as used for running stats.
    pub var_unbiased: Vec<T>,
}

struct BatchNormOp<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    batch: usize,
    channels: usize,
    plane: usize,
    train: bool,
}

impl<T: Element> Backward<T> for BatchNormOp<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let gamma = ctx.inputs[1].data();
        let (n, c, hw) = (self.batch, self.channels, self.plane);
        let mut dgamma = vec![T::zero(); c];
        let mut dbeta = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * hw;
                for i in base..base + hw {
                    dbeta[ch] += ctx.grad[i];
                    dgamma[ch] += ctx.grad[i] * self.xhat[i];
                }
            }
        }
        let dx = ctx.needs_grad[0].then(|| {
            let mut dx = vec![T::zero(); ctx.grad.len()];
            let m = T::from_usize(n * hw).expect("count");
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * hw;
                    let scale = gamma[ch] * self.inv_std[ch];
                    for i in base..base + hw {
                        dx[i] = if self.train {
                            // d/dx of gamma·(x - mean)·inv_std with batch mean/var
                            scale / m * (m * ctx.grad[i] - dbeta[ch] - self.xhat[i] * dgamma[ch])
                        } else {
                            scale * ctx.grad[i]
                        };
                    }
                }
            }
            dx
        });
        vec![
            dx,
            ctx.needs_grad[1].then_some(dgamma),
            ctx.needs_grad[2].then_some(dbeta),
        ]
    }
}

/// Per-channel normalisation of `x[N, C, H, W]` followed by the affine map
/// `gamma · x̂ + beta`. In [`NormStats::Batch`] mode the observed batch
/// statistics are returned so the caller can update running estimates.
pub fn batch_norm2d<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: NormStats<'_, T>,
    eps: f64,
) -> Result<(Var, Option<BatchStats<T>>)> {
    let [n, c, h, w] = dims4(tape.shape(x), "batch_norm2d input")?;
    if tape.shape(gamma) != [c] || tape.shape(beta) != [c] {
        return Err(Error::dim(format!("batch_norm2d: gamma/beta must be [{c}]")));
    }
    let hw = h * w;
    let m = n * hw;
    let xs = tape.value(x).data();
    let (gs, bs) = (tape.value(gamma).data(), tape.value(beta).data());

    let (mean, var, observed) = match stats {
        NormStats::Batch => {
            if m < 2 {
                return Err(Error::DegenerateBatch(format!(
                    "batch norm needs at least 2 values per channel, got {m}"
                )));
            }
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ch in 0..c {
                let mut s = 0.0;
                for b in 0..n {
                    let base = (b * c + ch) * hw;
                    s += xs[base..base + hw].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                mean[ch] = s / m as f64;
                let mut ss = 0.0;
                for b in 0..n {
                    let base = (b * c + ch) * hw;
                    ss += xs[base..base + hw]
                        .iter()
                        .map(|v| (v.as_f64() - mean[ch]).powi(2))
                        .sum::<f64>();
                }
                var[ch] = ss / m as f64;
            }
            let observed = BatchStats {
                mean: mean.iter().map(|&v| T::lit(v)).collect(),
                var_unbiased: var.iter().map(|&v| T::lit(v * m as f64 / (m - 1) as f64)).collect(),
            };
            (mean, var, Some(observed))
        }
        NormStats::Running { mean, var } => {
            if mean.len() != c || var.len() != c {
                return Err(Error::dim(format!("batch_norm2d: running stats must have {c} entries")));
            }
            let f = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
            (f(mean), f(var), None)
        }
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::lit(1.0 / (v + eps).sqrt())).collect();
    let mean_t: Vec<T> = mean.iter().map(|&v| T::lit(v)).collect();
    let mut xhat = vec![T::zero(); xs.len()];
    let mut out = vec![T::zero(); xs.len()];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            for i in base..base + hw {
                xhat[i] = (xs[i] - mean_t[ch]) * inv_std[ch];
                out[i] = gs[ch] * xhat[i] + bs[ch];
            }
        }
    }
    let out = Tensor::new(&[n, c, h, w], out)?;
    let op = BatchNormOp {
        xhat,
        inv_std,
        batch: n,
        channels: c,
        plane: hw,
        train: observed.is_some(),
    };
    Ok((tape.record(&[x, gamma, beta], out, op), observed))
}

/// `x[N, in] · weight[in, out] + bias[out]`.
pub fn linear<T: Element>(tape: &mut Tape<T>, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let y = tape.matmul(x, weight)?;
    tape.add_row_bias(y, bias)
}

struct L2NormalizeOp<T> {
    norms: Vec<T>,
    dim: usize,
}

impl<T: Element> Backward<T> for L2NormalizeOp<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let y = ctx.output.data();
        let d = self.dim;
        vec![ctx.needs_grad[0].then(|| {
            let mut dx = vec![T::zero(); y.len()];
            for (r, &norm) in self.norms.iter().enumerate() {
                if norm.as_f64() < NORM_EPS {
                    continue;
                }
                let (yr, gr) = (&y[r * d..(r + 1) * d], &ctx.grad[r * d..(r + 1) * d]);
                let dot = yr.iter().zip(gr).fold(T::zero(), |s, (&a, &b)| s + a * b);
                for j in 0..d {
                    dx[r * d + j] = (gr[j] - yr[j] * dot) / norm;
                }
            }
            dx
        })]
    }
}

/// Scale each row of `z[N, D]` to unit Euclidean norm. Rows with norm below
/// [`NORM_EPS`] become zero.
pub fn l2_normalize_rows<T: Element>(tape: &mut Tape<T>, z: Var) -> Result<Var> {
    let t = tape.value(z);
    let &[n, d] = t.shape() else {
        return Err(Error::dim(format!("l2_normalize_rows needs rank 2, got {:?}", t.shape())));
    };
    let mut out = t.data().to_vec();
    let mut norms = Vec::with_capacity(n);
    for row in out.chunks_exact_mut(d.max(1)).take(n) {
        let norm = row.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
        norms.push(norm);
        if norm.as_f64() < NORM_EPS {
            row.fill(T::zero());
        } else {
            row.iter_mut().for_each(|v| *v = *v / norm);
        }
    }
    let out = Tensor::new(&[n, d], out)?;
    Ok(tape.record(&[z], out, L2NormalizeOp { norms, dim: d }))
}
