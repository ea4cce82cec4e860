//! Batch and layer normalization with trainable affine parameters.

use std::cell::RefCell;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-channel batch normalization state: trainable gamma/beta plus running
/// statistics maintained by exponential moving average during training.
pub struct BatchNormState<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: RefCell<Vec<T>>,
    pub running_var: RefCell<Vec<T>>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize, momentum: f64, eps: f64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::arg("batch norm over zero channels"));
        }
        if !(0.0 < momentum && momentum < 1.0) {
            return Err(Error::arg(format!("momentum {momentum} not in (0,1)")));
        }
        if eps <= 0.0 {
            return Err(Error::arg(format!("eps {eps} must be positive")));
        }
        Ok(BatchNormState {
            gamma: Tensor::parameter(&[channels], vec![T::one(); channels])?,
            beta: Tensor::parameter(&[channels], vec![T::zero(); channels])?,
            running_mean: RefCell::new(vec![T::zero(); channels]),
            running_var: RefCell::new(vec![T::one(); channels]),
            momentum: T::from_f64(momentum),
            eps: T::from_f64(eps),
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

/// Per-feature layer normalization state over the trailing axis.
pub struct LayerNormState<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: T,
}

impl<T: Scalar> LayerNormState<T> {
    pub fn new(width: usize, eps: f64) -> Result<Self> {
        if width == 0 {
            return Err(Error::arg("layer norm over zero features"));
        }
        if eps <= 0.0 {
            return Err(Error::arg(format!("eps {eps} must be positive")));
        }
        Ok(LayerNormState {
            gamma: Tensor::parameter(&[width], vec![T::one(); width])?,
            beta: Tensor::parameter(&[width], vec![T::zero(); width])?,
            eps: T::from_f64(eps),
        })
    }

    pub fn width(&self) -> usize {
        self.gamma.numel()
    }
}

impl<T: Scalar> Tensor<T> {
    /// Batch normalization over (N,C,H,W). Training mode normalizes with
    /// batch statistics (per channel, over N*H*W) and updates the running
    /// statistics; inference mode normalizes with the running statistics.
    pub fn batchnorm2d(&self, state: &BatchNormState<T>, training: bool) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::dim(format!(
                "batchnorm2d: input must be rank 4 (N,C,H,W), got {:?}",
                self.shape()
            )));
        }
        let (n, c, h, w) = (
            self.shape()[0],
            self.shape()[1],
            self.shape()[2],
            self.shape()[3],
        );
        if c != state.channels() {
            return Err(Error::dim(format!(
                "batchnorm2d: channel axis is {c}, state has {}",
                state.channels()
            )));
        }
        let m = n * h * w;
        if training && m < 2 {
            return Err(Error::Stats(format!(
                "batchnorm2d: batch statistics need N*H*W >= 2, got {m}"
            )));
        }
        let plane = h * w;
        let inv_m = T::one() / T::from_f64(m as f64);

        // per-channel mean / inverse std actually used for normalization
        let mut mean = vec![T::zero(); c];
        let mut inv_std = vec![T::zero(); c];
        {
            let x = self.data();
            if training {
                let mut var = vec![T::zero(); c];
                for ci in 0..c {
                    let mut acc = T::zero();
                    for ni in 0..n {
                        let base = (ni * c + ci) * plane;
                        for &v in &x[base..base + plane] {
                            acc += v;
                        }
                    }
                    let mu = acc * inv_m;
                    let mut vacc = T::zero();
                    for ni in 0..n {
                        let base = (ni * c + ci) * plane;
                        for &v in &x[base..base + plane] {
                            let d = v - mu;
                            vacc += d * d;
                        }
                    }
                    mean[ci] = mu;
                    var[ci] = vacc * inv_m;
                    inv_std[ci] = T::one() / (var[ci] + state.eps).sqrt();
                }
                // running statistics: EMA with unbiased batch variance
                let unbias = T::from_f64(m as f64 / (m as f64 - 1.0));
                let mom = state.momentum;
                let keep = T::one() - mom;
                let mut rm = state.running_mean.borrow_mut();
                let mut rv = state.running_var.borrow_mut();
                for ci in 0..c {
                    rm[ci] = keep * rm[ci] + mom * mean[ci];
                    rv[ci] = keep * rv[ci] + mom * var[ci] * unbias;
                }
            } else {
                let rm = state.running_mean.borrow();
                let rv = state.running_var.borrow();
                for ci in 0..c {
                    mean[ci] = rm[ci];
                    inv_std[ci] = T::one() / (rv[ci] + state.eps).sqrt();
                }
            }
        }

        let mut x_hat = vec![T::zero(); self.numel()];
        let mut data = vec![T::zero(); self.numel()];
        {
            let x = self.data();
            let gamma = state.gamma.data();
            let beta = state.beta.data();
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * plane;
                    let (mu, is, ga, be) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
                    for p in 0..plane {
                        let xh = (x[base + p] - mu) * is;
                        x_hat[base + p] = xh;
                        data[base + p] = ga * xh + be;
                    }
                }
            }
        }

        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), state.gamma.clone(), state.beta.clone()],
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let gamma = inputs[1].data().clone();
                let mut d_gamma = vec![T::zero(); c];
                let mut d_beta = vec![T::zero(); c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * plane;
                        for p in 0..plane {
                            d_gamma[ci] += g[base + p] * x_hat[base + p];
                            d_beta[ci] += g[base + p];
                        }
                    }
                }
                let mut gx = vec![T::zero(); g.len()];
                if training {
                    // dL/dx through the batch statistics
                    for ci in 0..c {
                        let mean_g = d_beta[ci] * inv_m;
                        let mean_gx = d_gamma[ci] * inv_m;
                        let scale = gamma[ci] * inv_std[ci];
                        for ni in 0..n {
                            let base = (ni * c + ci) * plane;
                            for p in 0..plane {
                                gx[base + p] = scale
                                    * (g[base + p] - mean_g - x_hat[base + p] * mean_gx);
                            }
                        }
                    }
                } else {
                    // running statistics are constants
                    for ci in 0..c {
                        let scale = gamma[ci] * inv_std[ci];
                        for ni in 0..n {
                            let base = (ni * c + ci) * plane;
                            for p in 0..plane {
                                gx[base + p] = scale * g[base + p];
                            }
                        }
                    }
                }
                inputs[0].accumulate_grad(&gx);
                inputs[1].accumulate_grad(&d_gamma);
                inputs[2].accumulate_grad(&d_beta);
            }),
        ))
    }

    /// Layer normalization over the trailing feature axis.
    pub fn layernorm(&self, state: &LayerNormState<T>) -> Result<Tensor<T>> {
        let d = *self.shape().last().ok_or_else(|| {
            Error::dim("layernorm: input must have at least one axis".to_string())
        })?;
        if d != state.width() {
            return Err(Error::dim(format!(
                "layernorm: feature axis is {d}, state has {}",
                state.width()
            )));
        }
        let lanes = self.numel() / d;
        let inv_d = T::one() / T::from_f64(d as f64);
        let mut x_hat = vec![T::zero(); self.numel()];
        let mut inv_std = vec![T::zero(); lanes];
        let mut data = vec![T::zero(); self.numel()];
        {
            let x = self.data();
            let gamma = state.gamma.data();
            let beta = state.beta.data();
            for (lane, slot) in inv_std.iter_mut().enumerate() {
                let base = lane * d;
                let mut mu = T::zero();
                for &v in &x[base..base + d] {
                    mu += v;
                }
                mu *= inv_d;
                let mut var = T::zero();
                for &v in &x[base..base + d] {
                    let dv = v - mu;
                    var += dv * dv;
                }
                var *= inv_d;
                let is = T::one() / (var + state.eps).sqrt();
                *slot = is;
                for j in 0..d {
                    let xh = (x[base + j] - mu) * is;
                    x_hat[base + j] = xh;
                    data[base + j] = gamma[j] * xh + beta[j];
                }
            }
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), state.gamma.clone(), state.beta.clone()],
            Box::new(move |out, inputs| {
                let g = out.out_grad();
                let gamma = inputs[1].data().clone();
                let mut d_gamma = vec![T::zero(); d];
                let mut d_beta = vec![T::zero(); d];
                let mut gx = vec![T::zero(); g.len()];
                for (lane, &is) in inv_std.iter().enumerate() {
                    let base = lane * d;
                    let mut mean_gg = T::zero();
                    let mut mean_ggx = T::zero();
                    for j in 0..d {
                        let gg = g[base + j] * gamma[j];
                        mean_gg += gg;
                        mean_ggx += gg * x_hat[base + j];
                        d_gamma[j] += g[base + j] * x_hat[base + j];
                        d_beta[j] += g[base + j];
                    }
                    mean_gg *= inv_d;
                    mean_ggx *= inv_d;
                    for j in 0..d {
                        let gg = g[base + j] * gamma[j];
                        gx[base + j] = is * (gg - mean_gg - x_hat[base + j] * mean_ggx);
                    }
                }
                inputs[0].accumulate_grad(&gx);
                inputs[1].accumulate_grad(&d_gamma);
                inputs[2].accumulate_grad(&d_beta);
            }),
        ))
    }
}
