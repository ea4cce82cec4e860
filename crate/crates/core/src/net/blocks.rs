//! Convolutional building blocks of the two streams.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BatchNormState, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-6;

/// Fan-in scaled uniform draw: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
fn uniform_init<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<T> = (0..numel)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::parameter(shape, data).expect("init shape")
}

/// Convolution layer. Convolutions feeding a batch norm carry no bias;
/// stand-alone ones do.
pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn init<R: Rng>(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = uniform_init(&[cout, cin, k, k], cin * k * k, rng);
        let bias = with_bias
            .then(|| Tensor::parameter(&[cout], vec![T::zero(); cout]).expect("bias shape"));
        Conv2d {
            weight,
            bias,
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(&self.weight, self.bias.as_ref(), self.stride, self.padding)
    }
}

pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn init<R: Rng>(din: usize, dout: usize, with_bias: bool, rng: &mut R) -> Self {
        let weight = uniform_init(&[din, dout], din, rng);
        let bias = with_bias
            .then(|| Tensor::parameter(&[dout], vec![T::zero(); dout]).expect("bias shape"));
        Linear { weight, bias }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.linear(&self.weight, self.bias.as_ref())
    }
}

fn require_even_spatial<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<()> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim(format!(
            "{what}: spatial axes must be even to halve exactly, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Two groups of conv3x3 + BN + ReLU, then a 3x3/stride-2 max pool.
/// Halves even spatial extents exactly.
pub struct ModuleA<T: Scalar> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNormState<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNormState<T>,
}

impl<T: Scalar> ModuleA<T> {
    pub fn init<R: Rng>(cin: usize, cout: usize, rng: &mut R) -> Result<Self> {
        Ok(ModuleA {
            conv1: Conv2d::init(cin, cout, 3, 1, 1, false, rng),
            bn1: BatchNormState::new(cout, BN_MOMENTUM, BN_EPS)?,
            conv2: Conv2d::init(cout, cout, 3, 1, 1, false, rng),
            bn2: BatchNormState::new(cout, BN_MOMENTUM, BN_EPS)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        require_even_spatial(x, "module a")?;
        let x = self.conv1.forward(x)?.batchnorm2d(&self.bn1, training)?.relu();
        let x = self.conv2.forward(&x)?.batchnorm2d(&self.bn2, training)?.relu();
        x.maxpool2d(3, 2, 1)
    }
}

/// Downsampling block with two branches: conv + BN + ReLU + max pool in one,
/// a stride-2 conv in the other, fused by element-wise addition and ReLU.
pub struct ModuleB1<T: Scalar> {
    pub conv: Conv2d<T>,
    pub bn: BatchNormState<T>,
    pub down: Conv2d<T>,
}

impl<T: Scalar> ModuleB1<T> {
    pub fn init<R: Rng>(cin: usize, cout: usize, rng: &mut R) -> Result<Self> {
        Ok(ModuleB1 {
            conv: Conv2d::init(cin, cout, 3, 1, 1, false, rng),
            bn: BatchNormState::new(cout, BN_MOMENTUM, BN_EPS)?,
            down: Conv2d::init(cin, cout, 3, 2, 1, true, rng),
        })
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        require_even_spatial(x, "module b1")?;
        let pooled = self
            .conv
            .forward(x)?
            .batchnorm2d(&self.bn, training)?
            .relu()
            .maxpool2d(3, 2, 1)?;
        let strided = self.down.forward(x)?;
        if pooled.shape() != strided.shape() {
            return Err(Error::dim(format!(
                "module b1: branch shapes diverged, {:?} vs {:?}",
                pooled.shape(),
                strided.shape()
            )));
        }
        Ok(pooled.add(&strided)?.relu())
    }
}

/// Plain downsampling block: conv3x3 + BN + ReLU + 3x3/stride-2 max pool.
pub struct ModuleB2<T: Scalar> {
    pub conv: Conv2d<T>,
    pub bn: BatchNormState<T>,
}

impl<T: Scalar> ModuleB2<T> {
    pub fn init<R: Rng>(cin: usize, cout: usize, rng: &mut R) -> Result<Self> {
        Ok(ModuleB2 {
            conv: Conv2d::init(cin, cout, 3, 1, 1, false, rng),
            bn: BatchNormState::new(cout, BN_MOMENTUM, BN_EPS)?,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        require_even_spatial(x, "module b2")?;
        self.conv
            .forward(x)?
            .batchnorm2d(&self.bn, training)?
            .relu()
            .maxpool2d(3, 2, 1)
    }
}

/// Opening of the content stream: a 1x1 color mix concatenated with the RGB
/// planes, a subtracted 3x3 convolution, and a final widening concat.
/// Maps (N,3,s,s) to (N,12,s,s).
pub struct ContentHead<T: Scalar> {
    pub mix: Conv2d<T>,
    pub sub: Conv2d<T>,
    pub cat: Conv2d<T>,
}

impl<T: Scalar> ContentHead<T> {
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        ContentHead {
            mix: Conv2d::init(3, 3, 1, 1, 0, true, rng),
            sub: Conv2d::init(6, 6, 3, 1, 1, true, rng),
            cat: Conv2d::init(6, 6, 3, 1, 1, true, rng),
        }
    }

    pub fn forward(&self, rgb: &Tensor<T>) -> Result<Tensor<T>> {
        if rgb.rank() != 4 || rgb.shape()[1] != 3 {
            return Err(Error::dim(format!(
                "content head: input must be (N,3,H,W), got {:?}",
                rgb.shape()
            )));
        }
        let mixed = self.mix.forward(rgb)?;
        let l = Tensor::concat(&[&mixed, rgb], 1)?;
        let l_tilde = l.sub(&self.sub.forward(&l)?)?;
        Tensor::concat(&[&l_tilde, &self.cat.forward(&l_tilde)?], 1)
    }
}

/// Token-wise feed-forward: expand by `ratio`, gate, project back.
pub struct Mlp<T: Scalar> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn init<R: Rng>(width: usize, ratio: usize, rng: &mut R) -> Self {
        Mlp {
            fc1: Linear::init(width, width * ratio, true, rng),
            fc2: Linear::init(width * ratio, width, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.fc2.forward(&self.fc1.forward(x)?.gelu())
    }
}
