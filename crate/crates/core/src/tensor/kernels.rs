//! Low-level numeric kernels shared by tensor ops and layers.

use super::Element;

/// `c = op(a) · op(b) + beta · c`.
///
/// `a` is stored `[m, k]` (or `[k, m]` when `trans_a`), `b` is stored
/// `[k, n]` (or `[n, k]` when `trans_b`), `c` is `[m, n]`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Element>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths asserted above; strides describe the stated layouts and
    // `c` is a distinct mutable borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a square-kernel 2-D convolution, seen from the "image" side
/// (`in_*`) and the "patch grid" side (`out_*`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Patch grid for a strided, padded convolution over an `h × w` image.
    pub fn conv(channels: usize, h: usize, w: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let out = |x: usize| (x + 2 * pad - kernel) / stride + 1;
        Self {
            channels,
            in_h: h,
            in_w: w,
            out_h: out(h),
            out_w: out(w),
            kernel,
            stride,
            pad,
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.in_h * self.in_w
    }

    #[inline]
    fn source(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

/// Unfold one `[C, H, W]` image into a `[C·K·K, OH·OW]` patch matrix.
pub fn im2col<T: Element>(image: &[T], g: &ConvGeom, cols: &mut [T]) {
    debug_assert_eq!(image.len(), g.image_len());
    debug_assert_eq!(cols.len(), g.col_rows() * g.col_cols());
    let ncols = g.col_cols();
    for c in 0..g.channels {
        let plane = &image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oh in 0..g.out_h {
                    let src_h = g.source(oh, ki, g.in_h);
                    for ow in 0..g.out_w {
                        dst[oh * g.out_w + ow] = match (src_h, g.source(ow, kj, g.in_w)) {
                            (Some(h), Some(w)) => plane[h * g.in_w + w],
                            _ => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back onto an image.
pub fn col2im<T: Element>(cols: &[T], g: &ConvGeom, image: &mut [T]) {
    debug_assert_eq!(image.len(), g.image_len());
    debug_assert_eq!(cols.len(), g.col_rows() * g.col_cols());
    let ncols = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut image[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oh in 0..g.out_h {
                    let Some(h) = g.source(oh, ki, g.in_h) else {
                        continue;
                    };
                    for ow in 0..g.out_w {
                        if let Some(w) = g.source(ow, kj, g.in_w) {
                            plane[h * g.in_w + w] += src[oh * g.out_w + ow];
                        }
                    }
                }
            }
        }
    }
}
