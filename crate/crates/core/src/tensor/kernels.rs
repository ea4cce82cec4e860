//! Raw numeric kernels shared by the autograd ops. No shape checking here;
//! callers validate before dispatching.

use crate::scalar::Scalar;

/// C(m x n) += A(m x k) * B(k x n), row-major. The inner loop runs over
/// contiguous rows of B and C so it vectorizes.
pub(crate) fn matmul_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_ik * bv;
            }
        }
    }
}

/// Fresh C = A * B.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    matmul_acc(&mut c, a, b, m, k, n);
    c
}

pub(crate) fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), rows * cols);
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Output spatial extent of a convolution/pool window.
pub(crate) fn conv_out_extent(input: usize, k: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - k) / stride + 1
}

/// Unfold one sample (c x h x w) into a patch matrix of shape
/// (c*k*k) x (oh*ow): row (ci, kh, kw), column = output position.
/// Out-of-bounds taps stay zero (zero padding).
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col<T: Scalar>(
    img: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Vec<T> {
    let l = oh * ow;
    let mut col = vec![T::zero(); c * k * k * l];
    let mut row = 0usize;
    for ci in 0..c {
        let plane = &img[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let dst = &mut col[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * stride + kh) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kw) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    col
}

/// Scatter-add the patch-matrix gradient back onto the input gradient;
/// exact adjoint of [`im2col`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_acc<T: Scalar>(
    grad_img: &mut [T],
    col: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let l = oh * ow;
    let mut row = 0usize;
    for ci in 0..c {
        let plane = &mut grad_img[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let src = &col[row * l..(row + 1) * l];
                for oy in 0..oh {
                    let iy = (oy * stride + kh) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &s) in src_row.iter().enumerate() {
                        let ix = (ox * stride + kw) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += s;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}
