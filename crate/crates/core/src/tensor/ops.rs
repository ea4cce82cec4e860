//! Differentiable tensor operations: elementwise maps, shape movement,
//! matrix products, reductions, and the binary cross entropy loss.

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-7;

fn same_shape<T: Scalar>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() == b.shape() {
        return Ok(());
    }
    let mismatch: Vec<usize> = a
        .shape()
        .iter()
        .zip(b.shape())
        .enumerate()
        .filter(|(_, (x, y))| x != y)
        .map(|(i, _)| i)
        .collect();
    Err(Error::dim(format!(
        "{op}: shapes {:?} vs {:?} differ at axes {mismatch:?}",
        a.shape(),
        b.shape()
    )))
}

fn check_axis<T: Scalar>(op: &str, t: &Tensor<T>, axis: usize) -> Result<()> {
    if axis >= t.rank() {
        return Err(Error::dim(format!(
            "{op}: axis {axis} out of range for shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Split a shape around `axis` into (outer, extent, inner) strides.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, extent, inner)
}

impl<T: Scalar> Tensor<T> {
    pub(crate) fn out_grad(&self) -> Vec<T> {
        self.inner
            .grad
            .borrow()
            .clone()
            .expect("backward invariant: output gradient present")
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data: Vec<T> = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|out, inputs| {
                let g = out.out_grad();
                inputs[0].accumulate_grad(&g);
                inputs[1].accumulate_grad(&g);
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data: Vec<T> = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|out, inputs| {
                let g = out.out_grad();
                inputs[0].accumulate_grad(&g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                inputs[1].accumulate_grad(&neg);
            }),
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data: Vec<T> = {
            let a = self.data();
            let b = other.data();
            a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(|out, inputs| {
                let g = out.out_grad();
                let (ga, gb) = {
                    let a = inputs[0].data();
                    let b = inputs[1].data();
                    let ga: Vec<T> = g.iter().zip(b.iter()).map(|(&gi, &bi)| gi * bi).collect();
                    let gb: Vec<T> = g.iter().zip(a.iter()).map(|(&gi, &ai)| gi * ai).collect();
                    (ga, gb)
                };
                inputs[0].accumulate_grad(&ga);
                inputs[1].accumulate_grad(&gb);
            }),
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: T) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |out, inputs| {
                let g: Vec<T> = out.out_grad().iter().map(|&v| v * c).collect();
                inputs[0].accumulate_grad(&g);
            }),
        )
    }

    /// Rectified linear unit; derivative is 0 at exactly 0.
    pub fn relu(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|out, inputs| {
                let g = out.out_grad();
                let gx: Vec<T> = {
                    let x = inputs[0].data();
                    g.iter()
                        .zip(x.iter())
                        .map(|(&gi, &xi)| if xi > T::zero() { gi } else { T::zero() })
                        .collect()
                };
                inputs[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Gaussian error linear unit, tanh form.
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::from_f64((2.0 / std::f64::consts::PI).sqrt());
        let k = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&x| {
                let u = c * (x + k * x * x * x);
                half * x * (T::one() + u.tanh())
            })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let gx: Vec<T> = {
                    let x = inputs[0].data();
                    g.iter()
                        .zip(x.iter())
                        .map(|(&gi, &xi)| {
                            let u = c * (xi + k * xi * xi * xi);
                            let t = u.tanh();
                            let du = c * (T::one() + T::from_f64(3.0) * k * xi * xi);
                            let d = half * (T::one() + t)
                                + half * xi * (T::one() - t * t) * du;
                            gi * d
                        })
                        .collect()
                };
                inputs[0].accumulate_grad(&gx);
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let data: Vec<T> = self
            .data()
            .iter()
            .map(|&x| T::one() / (T::one() + (-x).exp()))
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|out, inputs| {
                let g = out.out_grad();
                let gx: Vec<T> = {
                    let y = out.data();
                    g.iter()
                        .zip(y.iter())
                        .map(|(&gi, &yi)| gi * yi * (T::one() - yi))
                        .collect()
                };
                inputs[0].accumulate_grad(&gx);
            }),
        )
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("softmax", self, axis)?;
        let (outer, extent, inner) = axis_split(self.shape(), axis);
        let mut data = self.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let base = o * extent * inner + i;
                let mut max = T::neg_infinity();
                for e in 0..extent {
                    max = max.max(data[base + e * inner]);
                }
                let mut sum = T::zero();
                for e in 0..extent {
                    let v = (data[base + e * inner] - max).exp();
                    data[base + e * inner] = v;
                    sum += v;
                }
                for e in 0..extent {
                    data[base + e * inner] /= sum;
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let gx: Vec<T> = {
                    let y = out.data();
                    let mut gx = vec![T::zero(); g.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let base = o * extent * inner + i;
                            let mut dot = T::zero();
                            for e in 0..extent {
                                let idx = base + e * inner;
                                dot += g[idx] * y[idx];
                            }
                            for e in 0..extent {
                                let idx = base + e * inner;
                                gx[idx] = y[idx] * (g[idx] - dot);
                            }
                        }
                    }
                    gx
                };
                inputs[0].accumulate_grad(&gx);
            }),
        ))
    }

    /// Sum of all elements as a scalar tensor.
    pub fn sum_all(&self) -> Tensor<T> {
        let total: T = self.data().iter().copied().sum();
        let numel = self.numel();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |out, inputs| {
                let g = out.out_grad()[0];
                inputs[0].accumulate_grad(&vec![g; numel]);
            }),
        )
    }

    /// Same data, new shape (element count preserved).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let new_numel: usize = shape.iter().product();
        if new_numel != self.numel() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "reshape: cannot view {:?} as {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|out, inputs| {
                inputs[0].accumulate_grad(&out.out_grad());
            }),
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        check_axis("narrow", self, axis)?;
        let (outer, extent, inner) = axis_split(self.shape(), axis);
        if len == 0 || start + len > extent {
            return Err(Error::dim(format!(
                "narrow: range {start}..{} exceeds extent {extent} on axis {axis}",
                start + len
            )));
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        let mut data = vec![T::zero(); outer * len * inner];
        {
            let src = self.data();
            for o in 0..outer {
                let src_base = (o * extent + start) * inner;
                let dst_base = o * len * inner;
                data[dst_base..dst_base + len * inner]
                    .copy_from_slice(&src[src_base..src_base + len * inner]);
            }
        }
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let mut gx = vec![T::zero(); inputs[0].numel()];
                for o in 0..outer {
                    let dst_base = (o * extent + start) * inner;
                    let src_base = o * len * inner;
                    gx[dst_base..dst_base + len * inner]
                        .copy_from_slice(&g[src_base..src_base + len * inner]);
                }
                inputs[0].accumulate_grad(&gx);
            }),
        ))
    }

    /// Concatenate along `axis`; all other axes must match. The gradient
    /// splits back onto the inputs in order.
    pub fn concat(tensors: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        if tensors.is_empty() {
            return Err(Error::arg("concat: empty tensor list"));
        }
        let first = tensors[0];
        check_axis("concat", first, axis)?;
        for (i, t) in tensors.iter().enumerate().skip(1) {
            if t.rank() != first.rank() {
                return Err(Error::dim(format!(
                    "concat: rank {} of input {i} differs from rank {}",
                    t.rank(),
                    first.rank()
                )));
            }
            for ax in 0..first.rank() {
                if ax != axis && t.shape()[ax] != first.shape()[ax] {
                    return Err(Error::dim(format!(
                        "concat: input {i} shape {:?} differs from {:?} at non-concat axis {ax}",
                        t.shape(),
                        first.shape()
                    )));
                }
            }
        }
        let extents: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = vec![T::zero(); outer * total * inner];
        for o in 0..outer {
            let mut offset = 0usize;
            for (t, &ext) in tensors.iter().zip(&extents) {
                let block = ext * inner;
                let src = t.data();
                data[(o * total + offset) * inner..(o * total + offset) * inner + block]
                    .copy_from_slice(&src[o * block..(o + 1) * block]);
                offset += ext;
            }
        }
        let inputs: Vec<Tensor<T>> = tensors.iter().map(|t| (*t).clone()).collect();
        Ok(Tensor::from_op(
            shape,
            data,
            inputs,
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let mut offset = 0usize;
                for (t, &ext) in inputs.iter().zip(&extents) {
                    let block = ext * inner;
                    let mut gt = vec![T::zero(); outer * block];
                    for o in 0..outer {
                        gt[o * block..(o + 1) * block].copy_from_slice(
                            &g[(o * total + offset) * inner
                                ..(o * total + offset) * inner + block],
                        );
                    }
                    t.accumulate_grad(&gt);
                    offset += ext;
                }
            }),
        ))
    }

    /// Swap the last two axes (rank >= 2).
    pub fn transpose_last2(&self) -> Result<Tensor<T>> {
        if self.rank() < 2 {
            return Err(Error::dim(format!(
                "transpose_last2: rank {} < 2",
                self.rank()
            )));
        }
        let rank = self.rank();
        let rows = self.shape()[rank - 2];
        let cols = self.shape()[rank - 1];
        let batch = self.numel() / (rows * cols);
        let mut shape = self.shape().to_vec();
        shape.swap(rank - 2, rank - 1);
        let mut data = vec![T::zero(); self.numel()];
        {
            let src = self.data();
            for b in 0..batch {
                let s = &src[b * rows * cols..(b + 1) * rows * cols];
                let d = &mut data[b * rows * cols..(b + 1) * rows * cols];
                for r in 0..rows {
                    for c in 0..cols {
                        d[c * rows + r] = s[r * cols + c];
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let mut gx = vec![T::zero(); g.len()];
                // transpose back: out is (cols x rows) per batch
                for b in 0..batch {
                    let s = &g[b * rows * cols..(b + 1) * rows * cols];
                    let d = &mut gx[b * rows * cols..(b + 1) * rows * cols];
                    for c in 0..cols {
                        for r in 0..rows {
                            d[r * cols + c] = s[c * rows + r];
                        }
                    }
                }
                inputs[0].accumulate_grad(&gx);
            }),
        ))
    }

    /// Batched matrix multiply: (B,M,K) x (B,K,N) -> (B,M,N).
    pub fn bmm(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.rank() != 3 || other.rank() != 3 {
            return Err(Error::dim(format!(
                "bmm: expects rank-3 operands, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (b, m, k) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (b2, k2, n) = (other.shape()[0], other.shape()[1], other.shape()[2]);
        if b != b2 || k != k2 {
            return Err(Error::dim(format!(
                "bmm: {:?} x {:?} mismatch on batch or contraction axis",
                self.shape(),
                other.shape()
            )));
        }
        let mut data = vec![T::zero(); b * m * n];
        {
            let a = self.data();
            let bv = other.data();
            for i in 0..b {
                kernels::matmul_acc(
                    &mut data[i * m * n..(i + 1) * m * n],
                    &a[i * m * k..(i + 1) * m * k],
                    &bv[i * k * n..(i + 1) * k * n],
                    m,
                    k,
                    n,
                );
            }
        }
        Ok(Tensor::from_op(
            vec![b, m, n],
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let (ga, gb) = {
                    let a = inputs[0].data();
                    let bv = inputs[1].data();
                    let mut ga = vec![T::zero(); b * m * k];
                    let mut gb = vec![T::zero(); b * k * n];
                    for i in 0..b {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        // dA = dC * B^T
                        let bt = kernels::transpose(&bv[i * k * n..(i + 1) * k * n], k, n);
                        kernels::matmul_acc(
                            &mut ga[i * m * k..(i + 1) * m * k],
                            gi,
                            &bt,
                            m,
                            n,
                            k,
                        );
                        // dB = A^T * dC
                        let at = kernels::transpose(&a[i * m * k..(i + 1) * m * k], m, k);
                        kernels::matmul_acc(
                            &mut gb[i * k * n..(i + 1) * k * n],
                            &at,
                            gi,
                            k,
                            m,
                            n,
                        );
                    }
                    (ga, gb)
                };
                inputs[0].accumulate_grad(&ga);
                inputs[1].accumulate_grad(&gb);
            }),
        ))
    }

    /// Affine map on the last axis: (...,Din) x (Din,Dout) + bias.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        if weight.rank() != 2 {
            return Err(Error::dim(format!(
                "linear: weight must be rank 2, got {:?}",
                weight.shape()
            )));
        }
        let din = weight.shape()[0];
        let dout = weight.shape()[1];
        if self.rank() == 0 || *self.shape().last().unwrap() != din {
            return Err(Error::dim(format!(
                "linear: input {:?} trailing axis does not match weight Din={din}",
                self.shape()
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [dout] {
                return Err(Error::dim(format!(
                    "linear: bias {:?} does not match Dout={dout}",
                    b.shape()
                )));
            }
        }
        let rows = self.numel() / din;
        let mut data = {
            let x = self.data();
            let w = weight.data();
            kernels::matmul(&x, &w, rows, din, dout)
        };
        if let Some(b) = bias {
            let bd = b.data();
            for r in 0..rows {
                for (v, &bj) in data[r * dout..(r + 1) * dout].iter_mut().zip(bd.iter()) {
                    *v += bj;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let mut inputs = vec![self.clone(), weight.clone()];
        let has_bias = bias.is_some();
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Ok(Tensor::from_op(
            shape,
            data,
            inputs,
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let (gx, gw) = {
                    let x = inputs[0].data();
                    let w = inputs[1].data();
                    // dX = dY * W^T
                    let wt = kernels::transpose(&w, din, dout);
                    let gx = kernels::matmul(&g, &wt, rows, dout, din);
                    // dW = X^T * dY
                    let xt = kernels::transpose(&x, rows, din);
                    let gw = kernels::matmul(&xt, &g, din, rows, dout);
                    (gx, gw)
                };
                inputs[0].accumulate_grad(&gx);
                inputs[1].accumulate_grad(&gw);
                if has_bias {
                    let mut gb = vec![T::zero(); dout];
                    for r in 0..rows {
                        for (bj, &gj) in gb.iter_mut().zip(&g[r * dout..(r + 1) * dout]) {
                            *bj += gj;
                        }
                    }
                    inputs[2].accumulate_grad(&gb);
                }
            }),
        ))
    }

    /// Per-channel spatial mean: (N,C,H,W) -> (N,C).
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::dim(format!(
                "global_avg_pool: expects rank 4, got {:?}",
                self.shape()
            )));
        }
        let (n, c, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        let plane = h * w;
        let inv = T::one() / T::from_f64(plane as f64);
        let mut data = vec![T::zero(); n * c];
        {
            let x = self.data();
            for i in 0..n * c {
                let mut acc = T::zero();
                for &v in &x[i * plane..(i + 1) * plane] {
                    acc += v;
                }
                data[i] = acc * inv;
            }
        }
        Ok(Tensor::from_op(
            vec![n, c],
            data,
            vec![self.clone()],
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let mut gx = vec![T::zero(); n * c * plane];
                for i in 0..n * c {
                    let gi = g[i] * inv;
                    for v in &mut gx[i * plane..(i + 1) * plane] {
                        *v = gi;
                    }
                }
                inputs[0].accumulate_grad(&gx);
            }),
        ))
    }

    /// Flatten feature maps to a token matrix: (N,C,r,r) -> (N,r*r,C) with
    /// C equal to `width`. Exact inverse of [`Tensor::maps_from_tokens`].
    pub fn tokens_from_maps(&self, width: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::dim(format!(
                "tokens_from_maps: expects rank 4, got {:?}",
                self.shape()
            )));
        }
        let (n, c, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        if h != w {
            return Err(Error::dim(format!(
                "tokens_from_maps: spatial axes must be square, got {h}x{w}"
            )));
        }
        if c != width {
            return Err(Error::dim(format!(
                "tokens_from_maps: channel axis is {c}, expected {width}"
            )));
        }
        let t = h * w;
        let mut data = vec![T::zero(); n * t * c];
        {
            let x = self.data();
            for i in 0..n {
                let src = &x[i * c * t..(i + 1) * c * t];
                let dst = &mut data[i * t * c..(i + 1) * t * c];
                for ci in 0..c {
                    for ti in 0..t {
                        dst[ti * c + ci] = src[ci * t + ti];
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, t, c],
            data,
            vec![self.clone()],
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let mut gx = vec![T::zero(); n * c * t];
                for i in 0..n {
                    let src = &g[i * t * c..(i + 1) * t * c];
                    let dst = &mut gx[i * c * t..(i + 1) * c * t];
                    for ti in 0..t {
                        for ci in 0..c {
                            dst[ci * t + ti] = src[ti * c + ci];
                        }
                    }
                }
                inputs[0].accumulate_grad(&gx);
            }),
        ))
    }

    /// Token matrix back to square feature maps: (N,T,C) -> (N,C,r,r) with
    /// r = sqrt(T). Exact inverse of [`Tensor::tokens_from_maps`].
    pub fn maps_from_tokens(&self, width: usize) -> Result<Tensor<T>> {
        if self.rank() != 3 {
            return Err(Error::dim(format!(
                "maps_from_tokens: expects rank 3, got {:?}",
                self.shape()
            )));
        }
        let (n, t, c) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        if c != width {
            return Err(Error::dim(format!(
                "maps_from_tokens: token width is {c}, expected {width}"
            )));
        }
        let r = (t as f64).sqrt().round() as usize;
        if r * r != t {
            return Err(Error::dim(format!(
                "maps_from_tokens: token count {t} is not a perfect square"
            )));
        }
        let mut data = vec![T::zero(); n * c * t];
        {
            let x = self.data();
            for i in 0..n {
                let src = &x[i * t * c..(i + 1) * t * c];
                let dst = &mut data[i * c * t..(i + 1) * c * t];
                for ti in 0..t {
                    for ci in 0..c {
                        dst[ci * t + ti] = src[ti * c + ci];
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, r, r],
            data,
            vec![self.clone()],
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let mut gx = vec![T::zero(); n * t * c];
                for i in 0..n {
                    let src = &g[i * c * t..(i + 1) * c * t];
                    let dst = &mut gx[i * t * c..(i + 1) * t * c];
                    for ci in 0..c {
                        for ti in 0..t {
                            dst[ti * c + ci] = src[ci * t + ti];
                        }
                    }
                }
                inputs[0].accumulate_grad(&gx);
            }),
        ))
    }
}

/// Mean binary cross entropy over a batch of probabilities in (0,1) against
/// labels in {0,1}. Probabilities are clamped to `[BCE_EPS, 1-BCE_EPS]`; the
/// gradient passes straight through the clamp.
pub fn bce_loss<T: Scalar>(prob: &Tensor<T>, label: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape("bce_loss", prob, label)?;
    if prob.rank() != 1 {
        return Err(Error::dim(format!(
            "bce_loss: expects rank-1 batches, got {:?}",
            prob.shape()
        )));
    }
    let n = prob.numel();
    if n == 0 {
        return Err(Error::arg("bce_loss: empty batch"));
    }
    let eps = T::from_f64(BCE_EPS);
    let one = T::one();
    let inv_n = one / T::from_f64(n as f64);
    let clamp = move |p: T| p.max(eps).min(one - eps);
    let total = {
        let p = prob.data();
        let y = label.data();
        let mut acc = T::zero();
        for (&pi, &yi) in p.iter().zip(y.iter()) {
            let pc = clamp(pi);
            acc += yi * pc.ln() + (one - yi) * (one - pc).ln();
        }
        -acc * inv_n
    };
    Ok(Tensor::from_op(
        vec![1],
        vec![total],
        vec![prob.clone(), label.clone()],
        Box::new(move |out, inputs| {
            let g = out.out_grad()[0];
            let gp: Vec<T> = {
                let p = inputs[0].data();
                let y = inputs[1].data();
                p.iter()
                    .zip(y.iter())
                    .map(|(&pi, &yi)| {
                        let pc = clamp(pi);
                        -(yi / pc - (one - yi) / (one - pc)) * inv_n * g
                    })
                    .collect()
            };
            inputs[0].accumulate_grad(&gp);
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::constant(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = t64(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(x.relu().to_vec(), vec![0.0, 0.0, 2.0]);
    }

    #[test]
    fn sub_of_self_is_zero() {
        let x = t64(&[4], &[1.5, -2.0, 0.25, 9.0]);
        assert_eq!(x.sub(&x).unwrap().to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn add_commutes() {
        let a = t64(&[3], &[1.0, 2.0, 3.0]);
        let b = t64(&[3], &[0.5, -1.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().to_vec(), b.add(&a).unwrap().to_vec());
    }

    #[test]
    fn add_rejects_shape_mismatch() {
        let a = t64(&[2, 3], &[0.0; 6]);
        let b = t64(&[2, 4], &[0.0; 8]);
        let err = a.add(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("axes [1]"), "unexpected message: {msg}");
    }

    #[test]
    fn softmax_of_equal_inputs_is_uniform() {
        let x = t64(&[2], &[0.0, 0.0]);
        assert_eq!(x.softmax(0).unwrap().to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let x = t64(&[2], &[1000.0, 0.0]);
        let y = x.softmax(0).unwrap().to_vec();
        assert!((y[0] - 1.0).abs() < 1e-12);
        assert!(y[1].abs() < 1e-12);
    }

    #[test]
    fn concat_of_one_tensor_is_identity() {
        let x = t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = Tensor::concat(&[&x], 1).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn concat_channels_adds_extents() {
        let a = Tensor::<f64>::zeros(&[1, 6, 2, 2]);
        let b = Tensor::<f64>::zeros(&[1, 6, 2, 2]);
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.shape(), &[1, 12, 2, 2]);
    }

    #[test]
    fn concat_rejects_mismatched_free_axis() {
        let a = Tensor::<f64>::zeros(&[1, 6, 2, 2]);
        let b = Tensor::<f64>::zeros(&[1, 6, 3, 2]);
        assert!(matches!(
            Tensor::concat(&[&a, &b], 1),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn linear_identity_weight_preserves_input() {
        let x = t64(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let eye = t64(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let y = x.linear(&eye, None).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn linear_row_sum_case() {
        let x = t64(&[1, 2], &[1.0, 2.0]);
        let w = t64(&[2, 1], &[1.0, 1.0]);
        let b = t64(&[1], &[0.0]);
        let y = x.linear(&w, Some(&b)).unwrap();
        assert_eq!(y.to_vec(), vec![3.0]);
    }

    #[test]
    fn global_avg_pool_means() {
        let x = t64(&[1, 1, 2, 2], &[1.0, 3.0, 5.0, 7.0]);
        let y = x.global_avg_pool().unwrap();
        assert_eq!(y.to_vec(), vec![4.0]);
    }

    #[test]
    fn token_round_trip_is_bit_exact() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..2 * 5 * 4 * 4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let x = t64(&[2, 5, 4, 4], &data);
        let back = x
            .tokens_from_maps(5)
            .unwrap()
            .maps_from_tokens(5)
            .unwrap();
        assert_eq!(back.shape(), x.shape());
        assert_eq!(back.to_vec(), x.to_vec());
    }

    #[test]
    fn tokens_from_maps_shape() {
        let x = Tensor::<f64>::zeros(&[1, 256, 4, 4]);
        let t = x.tokens_from_maps(256).unwrap();
        assert_eq!(t.shape(), &[1, 16, 256]);
        // full-resolution working point: 32x32 maps flatten to 1024 tokens
        let x = Tensor::<f32>::zeros(&[1, 256, 32, 32]);
        let t = x.tokens_from_maps(256).unwrap();
        assert_eq!(t.shape(), &[1, 1024, 256]);
    }

    #[test]
    fn tokens_from_maps_rejects_wrong_channels() {
        let x = Tensor::<f64>::zeros(&[1, 128, 4, 4]);
        assert!(matches!(x.tokens_from_maps(256), Err(Error::Dim(_))));
    }

    #[test]
    fn bce_loss_point_checks() {
        let p = t64(&[1], &[0.5]);
        let y = t64(&[1], &[1.0]);
        let loss = bce_loss(&p, &y).unwrap().item().unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        let p = t64(&[1], &[1.0]); // clamped to 1 - eps
        let loss = bce_loss(&p, &y).unwrap().item().unwrap();
        assert!(loss.abs() < 1e-6);

        let p = t64(&[2], &[0.9, 0.2]);
        let y = t64(&[2], &[1.0, 0.0]);
        let loss = bce_loss(&p, &y).unwrap().item().unwrap();
        let expected = -0.5 * (0.9f64.ln() + 0.8f64.ln());
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.164252).abs() < 1e-6);
    }

    #[test]
    fn bce_loss_rejects_empty_batch() {
        // zero-length tensors cannot be constructed, so emptiness surfaces
        // as a shape error at construction time
        assert!(Tensor::<f64>::constant(&[0], vec![]).is_err());
    }

    #[test]
    fn bmm_matches_per_batch_matmul() {
        let a = t64(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t64(&[2, 2, 1], &[5.0, 6.0, 7.0, 8.0]);
        let c = a.bmm(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.to_vec(), vec![17.0, 53.0]);
    }
}
