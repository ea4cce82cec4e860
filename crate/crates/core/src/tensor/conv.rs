//! 2-D convolution (cross-correlation orientation, as usual for CNNs) and
//! max pooling, both with full backward rules.

use super::kernels::{col2im_acc, conv_out_extent, im2col, matmul_acc, transpose};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tensor<T> {
    /// Convolve (N,Cin,H,W) with weights (Cout,Cin,k,k) at the given stride
    /// and zero padding. Differentiable in input, weight, and bias.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::dim(format!(
                "conv2d: input must be rank 4 (N,C,H,W), got {:?}",
                self.shape()
            )));
        }
        if weight.rank() != 4 {
            return Err(Error::dim(format!(
                "conv2d: weight must be rank 4 (Cout,Cin,k,k), got {:?}",
                weight.shape()
            )));
        }
        let (n, cin, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        let (cout, wcin, kh, kw) = (
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
        );
        if kh != kw {
            return Err(Error::dim(format!(
                "conv2d: kernels must be square, got {kh}x{kw}"
            )));
        }
        let k = kh;
        if wcin != cin {
            return Err(Error::dim(format!(
                "conv2d: input channel axis is {cin}, weight expects {wcin}"
            )));
        }
        if stride == 0 {
            return Err(Error::arg("conv2d: stride must be >= 1"));
        }
        if k > h + 2 * padding || k > w + 2 * padding {
            return Err(Error::dim(format!(
                "conv2d: kernel {k} exceeds padded input {}x{} on a spatial axis",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(Error::dim(format!(
                    "conv2d: bias {:?} does not match Cout={cout}",
                    b.shape()
                )));
            }
        }
        let oh = conv_out_extent(h, k, stride, padding);
        let ow = conv_out_extent(w, k, stride, padding);
        let l = oh * ow;
        let ckk = cin * k * k;
        let mut data = vec![T::zero(); n * cout * l];
        {
            let x = self.data();
            let wv = weight.data();
            for i in 0..n {
                let col = im2col(
                    &x[i * cin * h * w..(i + 1) * cin * h * w],
                    cin,
                    h,
                    w,
                    k,
                    stride,
                    padding,
                    oh,
                    ow,
                );
                matmul_acc(
                    &mut data[i * cout * l..(i + 1) * cout * l],
                    &wv,
                    &col,
                    cout,
                    ckk,
                    l,
                );
            }
            if let Some(b) = bias {
                let bd = b.data();
                for i in 0..n {
                    for co in 0..cout {
                        let base = (i * cout + co) * l;
                        let bv = bd[co];
                        for v in &mut data[base..base + l] {
                            *v += bv;
                        }
                    }
                }
            }
        }
        let mut inputs = vec![self.clone(), weight.clone()];
        let has_bias = bias.is_some();
        if let Some(b) = bias {
            inputs.push(b.clone());
        }
        Ok(Tensor::from_op(
            vec![n, cout, oh, ow],
            data,
            inputs,
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let (gx, gw) = {
                    let x = inputs[0].data();
                    let wv = inputs[1].data();
                    let wt = transpose(&wv, cout, ckk); // (ckk x cout)
                    let mut gx = vec![T::zero(); n * cin * h * w];
                    let mut gw = vec![T::zero(); cout * ckk];
                    for i in 0..n {
                        let g_i = &g[i * cout * l..(i + 1) * cout * l];
                        // patches are recomputed rather than saved
                        let col = im2col(
                            &x[i * cin * h * w..(i + 1) * cin * h * w],
                            cin,
                            h,
                            w,
                            k,
                            stride,
                            padding,
                            oh,
                            ow,
                        );
                        let col_t = transpose(&col, ckk, l); // (l x ckk)
                        matmul_acc(&mut gw, g_i, &col_t, cout, l, ckk);
                        let mut gcol = vec![T::zero(); ckk * l];
                        matmul_acc(&mut gcol, &wt, g_i, ckk, cout, l);
                        col2im_acc(
                            &mut gx[i * cin * h * w..(i + 1) * cin * h * w],
                            &gcol,
                            cin,
                            h,
                            w,
                            k,
                            stride,
                            padding,
                            oh,
                            ow,
                        );
                    }
                    (gx, gw)
                };
                inputs[0].accumulate_grad(&gx);
                inputs[1].accumulate_grad(&gw);
                if has_bias {
                    let mut gb = vec![T::zero(); cout];
                    for i in 0..n {
                        for (co, gbv) in gb.iter_mut().enumerate() {
                            let base = (i * cout + co) * l;
                            for &gv in &g[base..base + l] {
                                *gbv += gv;
                            }
                        }
                    }
                    inputs[2].accumulate_grad(&gb);
                }
            }),
        ))
    }

    /// Max pool with the window treated as -inf outside the input. The
    /// gradient routes to the first maximal element in row-major window
    /// order.
    pub fn maxpool2d(&self, k: usize, stride: usize, padding: usize) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::dim(format!(
                "maxpool2d: input must be rank 4 (N,C,H,W), got {:?}",
                self.shape()
            )));
        }
        let (n, c, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        if stride == 0 || k == 0 {
            return Err(Error::arg("maxpool2d: k and stride must be >= 1"));
        }
        if k > h + 2 * padding || k > w + 2 * padding {
            return Err(Error::dim(format!(
                "maxpool2d: window {k} exceeds padded input {}x{}, output would be empty",
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        let oh = conv_out_extent(h, k, stride, padding);
        let ow = conv_out_extent(w, k, stride, padding);
        let mut data = vec![T::zero(); n * c * oh * ow];
        let mut argmax = vec![0usize; n * c * oh * ow];
        {
            let x = self.data();
            for nc in 0..n * c {
                let plane = &x[nc * h * w..(nc + 1) * h * w];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = T::neg_infinity();
                        let mut best_idx = usize::MAX;
                        for ky in 0..k {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let idx = iy as usize * w + ix as usize;
                                if plane[idx] > best {
                                    best = plane[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let o = nc * oh * ow + oy * ow + ox;
                        data[o] = best;
                        argmax[o] = nc * h * w + best_idx;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            data,
            vec![self.clone()],
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let mut gx = vec![T::zero(); n * c * h * w];
                for (go, &src) in g.iter().zip(&argmax) {
                    gx[src] += *go;
                }
                inputs[0].accumulate_grad(&gx);
            }),
        ))
    }
}
