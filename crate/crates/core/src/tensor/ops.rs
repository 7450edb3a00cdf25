//! Differentiable primitive operations on a [`Tape`].

use super::kernels::gemm;
use super::tape::{Backward, BackwardCtx};
use super::{check_same_shape, Element, Tape, Tensor, Var};
use crate::error::{Error, Result};

fn zip_map<T: Element>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn need<T>(ctx: &BackwardCtx<'_, impl Element>, i: usize, f: impl FnOnce() -> Vec<T>) -> Option<Vec<T>> {
    ctx.needs_grad[i].then(f)
}

struct MatMul {
    m: usize,
    k: usize,
    n: usize,
}

impl<T: Element> Backward<T> for MatMul {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let Self { m, k, n } = *self;
        vec![
            // dA = dC · Bᵀ
            need(ctx, 0, || {
                let mut da = vec![T::zero(); m * k];
                gemm(m, n, k, ctx.grad, false, b, true, T::zero(), &mut da);
                da
            }),
            // dB = Aᵀ · dC
            need(ctx, 1, || {
                let mut db = vec![T::zero(); k * n];
                gemm(k, m, n, a, true, ctx.grad, false, T::zero(), &mut db);
                db
            }),
        ]
    }
}

struct Add;
impl<T: Element> Backward<T> for Add {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![need(ctx, 0, || ctx.grad.to_vec()), need(ctx, 1, || ctx.grad.to_vec())]
    }
}

struct Sub;
impl<T: Element> Backward<T> for Sub {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![
            need(ctx, 0, || ctx.grad.to_vec()),
            need(ctx, 1, || ctx.grad.iter().map(|&g| -g).collect()),
        ]
    }
}

struct Mul;
impl<T: Element> Backward<T> for Mul {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        vec![
            need(ctx, 0, || zip_map(ctx.grad, b, |g, y| g * y)),
            need(ctx, 1, || zip_map(ctx.grad, a, |g, x| g * x)),
        ]
    }
}

struct Scale<T>(T);
impl<T: Element> Backward<T> for Scale<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![need(ctx, 0, || ctx.grad.iter().map(|&g| g * self.0).collect())]
    }
}

struct Identity;
impl<T: Element> Backward<T> for Identity {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![need(ctx, 0, || ctx.grad.to_vec())]
    }
}

struct Relu;
impl<T: Element> Backward<T> for Relu {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = ctx.inputs[0].data();
        vec![need(ctx, 0, || {
            zip_map(ctx.grad, x, |g, x| if x > T::zero() { g } else { T::zero() })
        })]
    }
}

struct Sigmoid;
impl<T: Element> Backward<T> for Sigmoid {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let y = ctx.output.data();
        vec![need(ctx, 0, || zip_map(ctx.grad, y, |g, y| g * y * (T::one() - y)))]
    }
}

struct Square;
impl<T: Element> Backward<T> for Square {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let x = ctx.inputs[0].data();
        let two = T::lit(2.0);
        vec![need(ctx, 0, || zip_map(ctx.grad, x, |g, x| g * two * x))]
    }
}

struct Sqrt;
impl<T: Element> Backward<T> for Sqrt {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let y = ctx.output.data();
        let half = T::lit(0.5);
        vec![need(ctx, 0, || zip_map(ctx.grad, y, |g, y| g * half / y))]
    }
}

/// Broadcast a scalar upstream gradient, times `factor`, to every element.
struct Fill<T> {
    len: usize,
    factor: T,
}
impl<T: Element> Backward<T> for Fill<T> {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        let g = ctx.grad[0] * self.factor;
        vec![need(ctx, 0, || vec![g; self.len])]
    }
}

struct SumRows {
    cols: usize,
}
impl<T: Element> Backward<T> for SumRows {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![need(ctx, 0, || {
            ctx.grad
                .iter()
                .flat_map(|&g| std::iter::repeat(g).take(self.cols))
                .collect()
        })]
    }
}

struct AddRowBias {
    cols: usize,
}
impl<T: Element> Backward<T> for AddRowBias {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![
            need(ctx, 0, || ctx.grad.to_vec()),
            need(ctx, 1, || {
                let mut db = vec![T::zero(); self.cols];
                for row in ctx.grad.chunks_exact(self.cols) {
                    db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
                db
            }),
        ]
    }
}

struct SliceRows {
    start: usize,
    row_len: usize,
    total: usize,
}
impl<T: Element> Backward<T> for SliceRows {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        vec![need(ctx, 0, || {
            let mut g = vec![T::zero(); self.total];
            let off = self.start * self.row_len;
            g[off..off + ctx.grad.len()].copy_from_slice(ctx.grad);
            g
        })]
    }
}

impl<T: Element> Tape<T> {
    /// `[M,K] · [K,N] → [M,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (&[m, k], &[k2, n]) = (ta.shape(), tb.shape()) else {
            return Err(Error::dim(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        };
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dims differ: [{m},{k}] · [{k2},{n}]"
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, T::zero(), &mut out);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.record(&[a, b], out, MatMul { m, k, n }))
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same_shape(ta, tb, name)?;
        Tensor::new(ta.shape(), zip_map(ta.data(), tb.data(), f))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.record(&[a, b], out, Add))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.record(&[a, b], out, Sub))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.record(&[a, b], out, Mul))
    }

    pub fn scalar_mul(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        self.record(&[a], out, Scale(s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x + s);
        self.record(&[a], out, Identity)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.record(&[a], out, Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| {
            if x >= T::zero() {
                T::one() / (T::one() + (-x).exp())
            } else {
                let e = x.exp();
                e / (T::one() + e)
            }
        });
        self.record(&[a], out, Sigmoid)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.record(&[a], out, Square)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.sqrt());
        self.record(&[a], out, Sqrt)
    }

    /// Sum of all elements → scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (len, total) = (t.numel(), t.sum_all());
        self.record(&[a], Tensor::scalar(total), Fill { len, factor: T::one() })
    }

    /// Mean of all elements → scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let len = t.numel();
        if len == 0 {
            return Err(Error::EmptyBatch);
        }
        let inv = T::one() / T::from_usize(len).expect("len");
        let total = t.sum_all() * inv;
        Ok(self.record(&[a], Tensor::scalar(total), Fill { len, factor: inv }))
    }

    /// `[N, D] → [N]`, summing each row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let &[n, d] = t.shape() else {
            return Err(Error::dim(format!("sum_rows needs rank 2, got {:?}", t.shape())));
        };
        let out: Vec<T> = if d == 0 {
            vec![T::zero(); n]
        } else {
            t.data()
                .chunks_exact(d)
                .map(|r| r.iter().fold(T::zero(), |s, &x| s + x))
                .collect()
        };
        let out = Tensor::new(&[n], out)?;
        Ok(self.record(&[a], out, SumRows { cols: d }))
    }

    /// `x[N, D] + b[D]` broadcast over rows.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        let &[_, d] = tx.shape() else {
            return Err(Error::dim(format!("add_row_bias needs rank-2 input, got {:?}", tx.shape())));
        };
        if tb.shape() != [d] {
            return Err(Error::dim(format!(
                "bias shape {:?} does not match {d} columns",
                tb.shape()
            )));
        }
        let bias = tb.data();
        let out: Vec<T> = tx
            .data()
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &c)| v + c))
            .collect();
        let out = Tensor::new(tx.shape(), out)?;
        Ok(self.record(&[x, b], out, AddRowBias { cols: d }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.record(&[a], out, Identity))
    }

    /// Leading-axis range `[start, end)`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (row_len, total) = (t.row_len(), t.numel());
        let out = t.slice_rows(start, end)?;
        Ok(self.record(&[a], out, SliceRows { start, row_len, total }))
    }
}
