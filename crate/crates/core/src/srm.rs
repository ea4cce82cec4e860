//! The fixed bank of 30 SRM high-pass filters and the 90-channel residual
//! extraction that feeds the residual stream.
//!
//! The bank is the standard basic set: 8 first-order, 4 second-order and
//! 8 third-order directional differences, the 3x3 and 5x5 square kernels,
//! and 4+4 edge kernels, each normalized by its conventional divisor
//! (1, 2, 3, 4, 12, 4, 12 respectively). Kernels smaller than 5x5 are
//! zero-embedded at the center so one correlation routine serves all.
//!
//! Filters are applied in cross-correlation orientation (as `conv2d` does),
//! with stride 1 and zero padding 2, to each RGB channel independently.
//! Output channel `c*30 + k` holds kernel `k` applied to color channel `c`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const KERNEL_COUNT: usize = 30;
pub const KERNEL_SIDE: usize = 5;
pub const RESIDUAL_CHANNELS: usize = 3 * KERNEL_COUNT;

/// One high-pass kernel: 25 taps in row-major order with the divisor
/// already applied.
#[derive(Clone)]
pub struct SrmKernel<T: Scalar> {
    pub name: String,
    pub taps: Vec<T>,
    pub divisor: f64,
}

/// The canonical, order-stable 30-kernel bank. Immutable once built.
pub struct FilterBank<T: Scalar> {
    kernels: Vec<SrmKernel<T>>,
}

/// Compass offsets (dy, dx) with y growing downward, in canonical order.
const DIRECTIONS: [(&str, i32, i32); 8] = [
    ("e", 0, 1),
    ("ne", -1, 1),
    ("n", -1, 0),
    ("nw", -1, -1),
    ("w", 0, -1),
    ("sw", 1, -1),
    ("s", 1, 0),
    ("se", 1, 1),
];

fn set(taps: &mut [i32; 25], y: i32, x: i32, v: i32) {
    debug_assert!((0..5).contains(&y) && (0..5).contains(&x));
    taps[(y * 5 + x) as usize] = v;
}

/// Rotate a 5x5 tap grid 90 degrees clockwise.
fn rotate_cw(taps: &[i32; 25]) -> [i32; 25] {
    let mut out = [0i32; 25];
    for i in 0..5 {
        for j in 0..5 {
            out[i * 5 + j] = taps[(4 - j) * 5 + i];
        }
    }
    out
}

/// Embed a 3x3 grid at the center of a 5x5 grid.
fn embed3(grid: [[i32; 3]; 3]) -> [i32; 25] {
    let mut out = [0i32; 25];
    for (i, row) in grid.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[(i + 1) * 5 + (j + 1)] = v;
        }
    }
    out
}

fn raw_bank() -> Vec<(String, [i32; 25], f64)> {
    let mut bank = Vec::with_capacity(KERNEL_COUNT);

    // first order: -1 at center, +1 at the neighbor
    for (dir, dy, dx) in DIRECTIONS {
        let mut taps = [0i32; 25];
        set(&mut taps, 2, 2, -1);
        set(&mut taps, 2 + dy, 2 + dx, 1);
        bank.push((format!("first_order_{dir}"), taps, 1.0));
    }

    // second order: [1, -2, 1] along four orientations
    for (name, dy, dx) in [("h", 0, 1), ("v", 1, 0), ("d", 1, 1), ("a", -1, 1)] {
        let mut taps = [0i32; 25];
        set(&mut taps, 2 - dy, 2 - dx, 1);
        set(&mut taps, 2, 2, -2);
        set(&mut taps, 2 + dy, 2 + dx, 1);
        bank.push((format!("second_order_{name}"), taps, 2.0));
    }

    // third order: [1, -3, 3, -1] along eight directions
    for (dir, dy, dx) in DIRECTIONS {
        let mut taps = [0i32; 25];
        set(&mut taps, 2 - dy, 2 - dx, 1);
        set(&mut taps, 2, 2, -3);
        set(&mut taps, 2 + dy, 2 + dx, 3);
        set(&mut taps, 2 + 2 * dy, 2 + 2 * dx, -1);
        bank.push((format!("third_order_{dir}"), taps, 3.0));
    }

    // square 3x3
    let square3 = embed3([[-1, 2, -1], [2, -4, 2], [-1, 2, -1]]);
    bank.push(("square_3x3".to_string(), square3, 4.0));

    // square 5x5
    #[rustfmt::skip]
    let square5: [i32; 25] = [
        -1,  2, -2,  2, -1,
         2, -6,  8, -6,  2,
        -2,  8,-12,  8, -2,
         2, -6,  8, -6,  2,
        -1,  2, -2,  2, -1,
    ];
    bank.push(("square_5x5".to_string(), square5, 12.0));

    // edge 3x3: upper half of the square kernel, then three rotations
    let mut edge3 = embed3([[-1, 2, -1], [2, -4, 2], [0, 0, 0]]);
    for dir in ["u", "r", "d", "l"] {
        bank.push((format!("edge_3x3_{dir}"), edge3, 4.0));
        edge3 = rotate_cw(&edge3);
    }

    // edge 5x5: upper three rows of the square kernel, then rotations
    #[rustfmt::skip]
    let mut edge5: [i32; 25] = [
        -1,  2, -2,  2, -1,
         2, -6,  8, -6,  2,
        -2,  8,-12,  8, -2,
         0,  0,  0,  0,  0,
         0,  0,  0,  0,  0,
    ];
    for dir in ["u", "r", "d", "l"] {
        bank.push((format!("edge_5x5_{dir}"), edge5, 12.0));
        edge5 = rotate_cw(&edge5);
    }

    debug_assert_eq!(bank.len(), KERNEL_COUNT);
    bank
}

/// Construct the canonical 30-kernel bank with divisors folded into the
/// tap values. Deterministic: two builds are bit-identical.
pub fn build_filter_bank<T: Scalar>() -> FilterBank<T> {
    let kernels = raw_bank()
        .into_iter()
        .map(|(name, taps, divisor)| SrmKernel {
            name,
            taps: taps
                .iter()
                .map(|&v| T::from_f64(v as f64 / divisor))
                .collect(),
            divisor,
        })
        .collect();
    FilterBank { kernels }
}

impl<T: Scalar> FilterBank<T> {
    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn kernels(&self) -> &[SrmKernel<T>] {
        &self.kernels
    }

    pub fn names(&self) -> Vec<&str> {
        self.kernels.iter().map(|k| k.name.as_str()).collect()
    }
}

/// Correlate one plane with a 5x5 kernel, stride 1, zero padding 2.
fn corr5<T: Scalar>(plane: &[T], h: usize, w: usize, taps: &[T], out: &mut [T]) {
    let pad = (KERNEL_SIDE / 2) as isize;
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for ky in 0..KERNEL_SIDE {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                let row = &plane[iy as usize * w..(iy as usize + 1) * w];
                let trow = &taps[ky * KERNEL_SIDE..(ky + 1) * KERNEL_SIDE];
                for (kx, &t) in trow.iter().enumerate() {
                    let ix = x as isize + kx as isize - pad;
                    if ix >= 0 && ix < w as isize {
                        acc += t * row[ix as usize];
                    }
                }
            }
            out[y * w + x] = acc;
        }
    }
}

/// Adjoint of [`corr5`]: scatter the output gradient back onto the plane.
fn corr5_adjoint_acc<T: Scalar>(grad_plane: &mut [T], h: usize, w: usize, taps: &[T], g: &[T]) {
    let pad = (KERNEL_SIDE / 2) as isize;
    for y in 0..h {
        for x in 0..w {
            let gv = g[y * w + x];
            for ky in 0..KERNEL_SIDE {
                let iy = y as isize + ky as isize - pad;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..KERNEL_SIDE {
                    let ix = x as isize + kx as isize - pad;
                    if ix >= 0 && ix < w as isize {
                        grad_plane[iy as usize * w + ix as usize] +=
                            taps[ky * KERNEL_SIDE + kx] * gv;
                    }
                }
            }
        }
    }
}

/// Filter every RGB channel of (N,3,s,s) with all 30 kernels, producing
/// (N,90,s,s). The kernels are constants (no gradient flows to them) but
/// the result stays differentiable in the image.
pub fn extract_residuals<T: Scalar>(image: &Tensor<T>, bank: &FilterBank<T>) -> Result<Tensor<T>> {
    if image.rank() != 4 {
        return Err(Error::dim(format!(
            "extract_residuals: input must be rank 4 (N,3,H,W), got {:?}",
            image.shape()
        )));
    }
    let (n, c, h, w) = (
        image.shape()[0],
        image.shape()[1],
        image.shape()[2],
        image.shape()[3],
    );
    if c != 3 {
        return Err(Error::dim(format!(
            "extract_residuals: channel axis must be 3, got {c}"
        )));
    }
    if h < KERNEL_SIDE || w < KERNEL_SIDE {
        return Err(Error::dim(format!(
            "extract_residuals: spatial extent {h}x{w} smaller than the {KERNEL_SIDE}x{KERNEL_SIDE} kernels"
        )));
    }
    let nk = bank.len();
    let plane = h * w;
    let out_c = c * nk;
    let mut data = vec![T::zero(); n * out_c * plane];
    let taps: Vec<Vec<T>> = bank.kernels.iter().map(|k| k.taps.clone()).collect();
    {
        let x = image.data();
        for ni in 0..n {
            for ci in 0..c {
                let src = &x[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                for (ki, t) in taps.iter().enumerate() {
                    let oc = ci * nk + ki;
                    let dst = &mut data[(ni * out_c + oc) * plane..(ni * out_c + oc + 1) * plane];
                    corr5(src, h, w, t, dst);
                }
            }
        }
    }
    Ok(Tensor::from_op(
        vec![n, out_c, h, w],
        data,
        vec![image.clone()],
        Box::new(move |out, inputs| {
            let g = out.out_grad();
            let mut gx = vec![T::zero(); n * c * plane];
            for ni in 0..n {
                for ci in 0..c {
                    let dst = &mut gx[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                    for (ki, t) in taps.iter().enumerate() {
                        let oc = ci * nk + ki;
                        let src = &g[(ni * out_c + oc) * plane..(ni * out_c + oc + 1) * plane];
                        corr5_adjoint_acc(dst, h, w, t, src);
                    }
                }
            }
            inputs[0].accumulate_grad(&gx);
        }),
    ))
}
