//! Convolution kernels lowered to matrix products via im2col.

use super::{Real, Shape};

#[allow(clippy::too_many_arguments)]
pub(crate) fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    rsa: isize,
    csa: isize,
    b_len: usize,
    rsb: isize,
    csb: isize,
    c_len: usize,
    rsc: isize,
    csc: isize,
) {
    fn last(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
        assert!(rs >= 0 && cs >= 0, "negative strides are not supported");
        if rows == 0 || cols == 0 {
            return 0;
        }
        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
    }
    assert!(last(m, k, rsa, csa) <= a_len, "gemm: A out of bounds");
    assert!(last(k, n, rsb, csb) <= b_len, "gemm: B out of bounds");
    assert!(last(m, n, rsc, csc) <= c_len, "gemm: C out of bounds");
}

/// Geometry of one strided, zero-padded sliding window pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Window {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.k) / self.stride + 1
    }

    pub fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.out_h() * self.out_w()
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Offset of input row `oy * stride + ky - pad`, or `None` when it falls in the padding.
    #[inline]
    fn src(&self, o: usize, kk: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + kk) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfolds one `(channels, h, w)` plane stack into a `(channels*k*k, oh*ow)` matrix.
pub(crate) fn im2col<T: Real>(input: &[T], win: &Window, cols: &mut [T]) {
    let (oh, ow) = (win.out_h(), win.out_w());
    let plane = win.h * win.w;
    debug_assert_eq!(cols.len(), win.rows() * oh * ow);
    for c in 0..win.channels {
        let src = &input[c * plane..(c + 1) * plane];
        for ky in 0..win.k {
            for kx in 0..win.k {
                let row = (c * win.k + ky) * win.k + kx;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    match win.src(oy, ky, win.h) {
                        None => line.fill(T::zero()),
                        Some(y) => {
                            for (ox, v) in line.iter_mut().enumerate() {
                                *v = match win.src(ox, kx, win.w) {
                                    Some(x) => src[y * win.w + x],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto the planes.
pub(crate) fn col2im<T: Real>(cols: &[T], win: &Window, out: &mut [T]) {
    let (oh, ow) = (win.out_h(), win.out_w());
    let plane = win.h * win.w;
    for c in 0..win.channels {
        let dst = &mut out[c * plane..(c + 1) * plane];
        for ky in 0..win.k {
            for kx in 0..win.k {
                let row = (c * win.k + ky) * win.k + kx;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let Some(y) = win.src(oy, ky, win.h) else {
                        continue;
                    };
                    for ox in 0..ow {
                        if let Some(x) = win.src(ox, kx, win.w) {
                            dst[y * win.w + x] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn unfold<'a, T: Real>(input: &'a [T], win: &Window, scratch: &'a mut Vec<T>) -> &'a [T] {
    if win.is_pointwise() {
        input
    } else {
        scratch.resize(win.rows() * win.cols(), T::zero());
        im2col(input, win, scratch);
        scratch
    }
}

/// Cross-correlation of `x` with `weight (c_out, c_in, k, k)`; bias is added by the caller.
pub(crate) fn conv2d_forward<T: Real>(
    x: &[T],
    xs: Shape,
    weight: &[T],
    c_out: usize,
    win: &Window,
) -> Vec<T> {
    let (rows, cols) = (win.rows(), win.cols());
    let mut out = vec![T::zero(); xs.n * c_out * cols];
    let mut scratch = Vec::new();
    for n in 0..xs.n {
        let xn = &x[n * xs.c * xs.plane()..(n + 1) * xs.c * xs.plane()];
        let unfolded = unfold(xn, win, &mut scratch);
        let on = &mut out[n * c_out * cols..(n + 1) * c_out * cols];
        T::gemm(
            c_out,
            rows,
            cols,
            T::one(),
            weight,
            rows as isize,
            1,
            unfolded,
            cols as isize,
            1,
            T::zero(),
            on,
            cols as isize,
            1,
        );
    }
    out
}

/// Returns `(d input, d weight)` for [`conv2d_forward`], each only when requested.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    xs: Shape,
    weight: &[T],
    c_out: usize,
    win: &Window,
    dout: &[T],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (rows, cols) = (win.rows(), win.cols());
    let in_len = xs.c * xs.plane();
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); weight.len()]);
    let mut scratch = Vec::new();
    let mut dcols = Vec::new();
    for n in 0..xs.n {
        let dn = &dout[n * c_out * cols..(n + 1) * c_out * cols];
        if let Some(dw) = dw.as_mut() {
            let xn = &x[n * in_len..(n + 1) * in_len];
            let unfolded = unfold(xn, win, &mut scratch);
            // dW += dOut_n * cols_n^T
            T::gemm(
                c_out,
                cols,
                rows,
                T::one(),
                dn,
                cols as isize,
                1,
                unfolded,
                1,
                cols as isize,
                T::one(),
                dw,
                rows as isize,
                1,
            );
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_len..(n + 1) * in_len];
            if win.is_pointwise() {
                T::gemm(
                    rows,
                    c_out,
                    cols,
                    T::one(),
                    weight,
                    1,
                    rows as isize,
                    dn,
                    cols as isize,
                    1,
                    T::zero(),
                    dxn,
                    cols as isize,
                    1,
                );
            } else {
                dcols.resize(rows * cols, T::zero());
                T::gemm(
                    rows,
                    c_out,
                    cols,
                    T::one(),
                    weight,
                    1,
                    rows as isize,
                    dn,
                    cols as isize,
                    1,
                    T::zero(),
                    &mut dcols,
                    cols as isize,
                    1,
                );
                col2im(&dcols, win, dxn);
            }
        }
    }
    (dx, dw)
}

/// Transposed convolution with `weight (c_in, c_out, k, k)` and no padding.
///
/// `win` describes the *output* geometry seen as the input of the matching
/// forward convolution: `channels = c_out`, `h`/`w` the upsampled size.
pub(crate) fn conv_transpose2d_forward<T: Real>(
    x: &[T],
    xs: Shape,
    weight: &[T],
    win: &Window,
) -> Vec<T> {
    let (rows, cols) = (win.rows(), win.cols());
    debug_assert_eq!(cols, xs.plane());
    let out_len = win.channels * win.h * win.w;
    let mut out = vec![T::zero(); xs.n * out_len];
    let mut buf = vec![T::zero(); rows * cols];
    for n in 0..xs.n {
        let xn = &x[n * xs.c * cols..(n + 1) * xs.c * cols];
        // cols = W^T (rows x c_in) * x_n (c_in x hw)
        T::gemm(
            rows,
            xs.c,
            cols,
            T::one(),
            weight,
            1,
            rows as isize,
            xn,
            cols as isize,
            1,
            T::zero(),
            &mut buf,
            cols as isize,
            1,
        );
        col2im(&buf, win, &mut out[n * out_len..(n + 1) * out_len]);
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward<T: Real>(
    x: &[T],
    xs: Shape,
    weight: &[T],
    win: &Window,
    dout: &[T],
    need_dx: bool,
    need_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>) {
    let (rows, cols) = (win.rows(), win.cols());
    let out_len = win.channels * win.h * win.w;
    let in_len = xs.c * cols;
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut dw = need_dw.then(|| vec![T::zero(); weight.len()]);
    let mut dcols = vec![T::zero(); rows * cols];
    for n in 0..xs.n {
        im2col(&dout[n * out_len..(n + 1) * out_len], win, &mut dcols);
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                xs.c,
                rows,
                cols,
                T::one(),
                weight,
                rows as isize,
                1,
                &dcols,
                cols as isize,
                1,
                T::zero(),
                &mut dx[n * in_len..(n + 1) * in_len],
                cols as isize,
                1,
            );
        }
        if let Some(dw) = dw.as_mut() {
            T::gemm(
                xs.c,
                cols,
                rows,
                T::one(),
                &x[n * in_len..(n + 1) * in_len],
                cols as isize,
                1,
                &dcols,
                1,
                cols as isize,
                T::one(),
                dw,
                rows as isize,
                1,
            );
        }
    }
    (dx, dw)
}
