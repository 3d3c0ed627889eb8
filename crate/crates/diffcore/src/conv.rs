//! Convolution kernels over raw row-major buffers (im2col + GEMM).
//!
//! Semantics are cross-correlation: the kernel is not flipped.

use crate::real::Real;

/// Square-kernel geometry shared by a convolution and its transpose.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    /// Extents of the "image" side (conv input / transposed-conv output).
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_len(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

/// Unfold `image` `[C,H,W]` into `cols` `[C*k*k, Ho*Wo]`.
pub fn im2col<T: Real>(image: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (h, w, k, s, p) = (
        g.height as isize,
        g.width as isize,
        g.kernel,
        g.stride as isize,
        g.padding as isize,
    );
    debug_assert_eq!(cols.len(), g.col_rows() * ho * wo);
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let y = oy as isize * s - p + ki as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if y < 0 || y >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let x = ox as isize * s - p + kj as isize;
                        *out = if x < 0 || x >= w { T::zero() } else { src[x as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` back into `image` (not cleared).
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, image: &mut [T]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let (h, w, k, s, p) = (
        g.height as isize,
        g.width as isize,
        g.kernel,
        g.stride as isize,
        g.padding as isize,
    );
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let y = oy as isize * s - p + ki as isize;
                    if y < 0 || y >= h {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for ox in 0..wo {
                        let x = ox as isize * s - p + kj as isize;
                        if x >= 0 && x < w {
                            dst[x as usize] = dst[x as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `out[O, L] = w[O, R] * cols[R, L]`, overwriting `out`.
fn matmul<T: Real>(o: usize, r: usize, l: usize, w: &[T], cols: &[T], out: &mut [T], beta: T) {
    T::gemm(
        o,
        r,
        l,
        T::one(),
        w,
        r as isize,
        1,
        cols,
        l as isize,
        1,
        beta,
        out,
        l as isize,
        1,
    );
}

/// Batched conv2d forward. `x` is `[N, C, H, W]`, `w` is `[O, C, k, k]`,
/// returns `[N, O, Ho, Wo]`.
pub fn conv2d_forward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    w: &[T],
    out_channels: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let (rows, len) = (g.col_rows(), g.col_len());
    let in_plane = g.channels * g.height * g.width;
    let mut cols = vec![T::zero(); rows * len];
    let mut out = vec![T::zero(); n * out_channels * len];
    for b in 0..n {
        im2col(&x[b * in_plane..(b + 1) * in_plane], g, &mut cols);
        let dst = &mut out[b * out_channels * len..(b + 1) * out_channels * len];
        matmul(out_channels, rows, len, w, &cols, dst, T::zero());
        if let Some(bias) = bias {
            for (o, chunk) in dst.chunks_mut(len).enumerate() {
                let bv = bias[o];
                chunk.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    out
}

/// Gradients of conv2d. Returns `(dx, dw, dbias)`; each is computed only if
/// requested.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Real>(
    x: &[T],
    n: usize,
    g: &ConvGeom,
    w: &[T],
    out_channels: usize,
    dout: &[T],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (rows, len) = (g.col_rows(), g.col_len());
    let in_plane = g.channels * g.height * g.width;
    let mut dx = want_dx.then(|| vec![T::zero(); n * in_plane]);
    let mut dw = want_dw.then(|| vec![T::zero(); out_channels * rows]);
    let mut db = want_db.then(|| vec![T::zero(); out_channels]);
    let mut cols = vec![T::zero(); rows * len];
    for b in 0..n {
        let go = &dout[b * out_channels * len..(b + 1) * out_channels * len];
        if let Some(dw) = dw.as_mut() {
            im2col(&x[b * in_plane..(b + 1) * in_plane], g, &mut cols);
            // dw[O, R] += go[O, L] * cols[R, L]^T
            T::gemm(
                out_channels,
                len,
                rows,
                T::one(),
                go,
                len as isize,
                1,
                &cols,
                1,
                len as isize,
                T::one(),
                dw,
                rows as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcols[R, L] = w[O, R]^T * go[O, L]
            T::gemm(
                rows,
                out_channels,
                len,
                T::one(),
                w,
                1,
                rows as isize,
                go,
                len as isize,
                1,
                T::zero(),
                &mut cols,
                len as isize,
                1,
            );
            col2im(&cols, g, &mut dx[b * in_plane..(b + 1) * in_plane]);
        }
        if let Some(db) = db.as_mut() {
            for (o, chunk) in go.chunks(len).enumerate() {
                db[o] = db[o] + chunk.iter().copied().sum::<T>();
            }
        }
    }
    (dx, dw, db)
}

/// Batched transposed conv2d forward. `x` is `[N, Cin, H, W]` where `H, W`
/// equal `g.out_height(), g.out_width()`; `w` is `[Cin, Cout, k, k]` with
/// `Cout == g.channels`; returns `[N, Cout, g.height, g.width]`.
pub fn conv_transpose2d_forward<T: Real>(
    x: &[T],
    n: usize,
    in_channels: usize,
    g: &ConvGeom,
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (rows, len) = (g.col_rows(), g.col_len());
    let out_plane = g.channels * g.height * g.width;
    let mut cols = vec![T::zero(); rows * len];
    let mut out = vec![T::zero(); n * out_plane];
    for b in 0..n {
        let xb = &x[b * in_channels * len..(b + 1) * in_channels * len];
        // cols[R, L] = w[Cin, R]^T * x[Cin, L]
        T::gemm(
            rows,
            in_channels,
            len,
            T::one(),
            w,
            1,
            rows as isize,
            xb,
            len as isize,
            1,
            T::zero(),
            &mut cols,
            len as isize,
            1,
        );
        let dst = &mut out[b * out_plane..(b + 1) * out_plane];
        col2im(&cols, g, dst);
        if let Some(bias) = bias {
            let hw = g.height * g.width;
            for (c, chunk) in dst.chunks_mut(hw).enumerate() {
                let bv = bias[c];
                chunk.iter_mut().for_each(|v| *v = *v + bv);
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub fn conv_transpose2d_backward<T: Real>(
    x: &[T],
    n: usize,
    in_channels: usize,
    g: &ConvGeom,
    w: &[T],
    dout: &[T],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let (rows, len) = (g.col_rows(), g.col_len());
    let out_plane = g.channels * g.height * g.width;
    let mut dx = want_dx.then(|| vec![T::zero(); n * in_channels * len]);
    let mut dw = want_dw.then(|| vec![T::zero(); in_channels * rows]);
    let mut db = want_db.then(|| vec![T::zero(); g.channels]);
    let mut cols = vec![T::zero(); rows * len];
    for b in 0..n {
        let go = &dout[b * out_plane..(b + 1) * out_plane];
        if want_dx || want_dw {
            im2col(go, g, &mut cols);
        }
        if let Some(dx) = dx.as_mut() {
            // dx[Cin, L] = w[Cin, R] * cols[R, L]
            matmul(
                in_channels,
                rows,
                len,
                w,
                &cols,
                &mut dx[b * in_channels * len..(b + 1) * in_channels * len],
                T::zero(),
            );
        }
        if let Some(dw) = dw.as_mut() {
            let xb = &x[b * in_channels * len..(b + 1) * in_channels * len];
            // dw[Cin, R] += x[Cin, L] * cols[R, L]^T
            T::gemm(
                in_channels,
                len,
                rows,
                T::one(),
                xb,
                len as isize,
                1,
                &cols,
                1,
                len as isize,
                T::one(),
                dw,
                rows as isize,
                1,
            );
        }
        if let Some(db) = db.as_mut() {
            let hw = g.height * g.width;
            for (c, chunk) in go.chunks(hw).enumerate() {
                db[c] = db[c] + chunk.iter().copied().sum::<T>();
            }
        }
    }
    (dx, dw, db)
}
