//! Image geometry and appearance transforms: bilinear resize, the four
//! enhancement operators (chromaticity, brightness, contrast, sharpness),
//! rotation, and 5x5 Gaussian/mean blur.
//!
//! All transforms map planar (3,H,W) tensors with values in [0,1] to the
//! same shape and range (clamped). Factor 1 is a bit-exact identity for
//! every enhancement kind; rotation by 0 degrees likewise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// ITU-R 601 luma weights, the convention of the usual imaging toolkits.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Sigma of the 5x5 Gaussian blur taps.
pub const GAUSSIAN_SIGMA: f64 = 1.1;

fn check_rgb<T: Scalar>(img: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    if img.rank() != 3 || img.shape()[0] != 3 {
        return Err(Error::dim(format!(
            "{what}: expected (3,H,W), got {:?}",
            img.shape()
        )));
    }
    Ok((img.shape()[1], img.shape()[2]))
}

fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Separable bilinear resize with half-pixel center alignment to a square
/// `side x side` output, clamped to [0,1].
pub fn resize_bilinear<T: Scalar>(img: &Tensor<T>, side: usize) -> Result<Tensor<T>> {
    let (h, w) = check_rgb(img, "resize_bilinear")?;
    if side == 0 {
        return Err(Error::arg("resize_bilinear: side must be >= 1"));
    }
    if h == side && w == side {
        return Tensor::constant(img.shape(), img.to_vec());
    }
    let src = img.data();
    let mut out = vec![T::zero(); 3 * side * side];
    let scale_y = h as f64 / side as f64;
    let scale_x = w as f64 / side as f64;
    for c in 0..3 {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for oy in 0..side {
            let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            for ox in 0..side {
                let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f64;
                let v00 = plane[y0 * w + x0].to_f64();
                let v01 = plane[y0 * w + x1].to_f64();
                let v10 = plane[y1 * w + x0].to_f64();
                let v11 = plane[y1 * w + x1].to_f64();
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                out[(c * side + oy) * side + ox] =
                    clamp01(T::from_f64(top + (bot - top) * fy));
            }
        }
    }
    Tensor::constant(&[3, side, side], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhanceKind {
    Chromaticity,
    Brightness,
    Contrast,
    Sharpness,
}

/// Blend toward each kind's degenerate image: out = deg + factor*(img-deg),
/// clamped. Factor 1 returns the input bit-exactly; factor 0 returns the
/// degenerate image.
pub fn enhance<T: Scalar>(img: &Tensor<T>, kind: EnhanceKind, factor: f64) -> Result<Tensor<T>> {
    let (h, w) = check_rgb(img, "enhance")?;
    if factor < 0.0 {
        return Err(Error::arg(format!("enhance: factor {factor} must be >= 0")));
    }
    if factor == 1.0 {
        return Tensor::constant(img.shape(), img.to_vec());
    }
    let plane = h * w;
    let src = img.data();
    let degenerate: Vec<T> = match kind {
        EnhanceKind::Brightness => vec![T::zero(); 3 * plane],
        EnhanceKind::Chromaticity => {
            let mut deg = vec![T::zero(); 3 * plane];
            for p in 0..plane {
                let luma = LUMA[0] * src[p].to_f64()
                    + LUMA[1] * src[plane + p].to_f64()
                    + LUMA[2] * src[2 * plane + p].to_f64();
                let v = T::from_f64(luma);
                deg[p] = v;
                deg[plane + p] = v;
                deg[2 * plane + p] = v;
            }
            deg
        }
        EnhanceKind::Contrast => {
            let mut acc = 0.0;
            for p in 0..plane {
                acc += LUMA[0] * src[p].to_f64()
                    + LUMA[1] * src[plane + p].to_f64()
                    + LUMA[2] * src[2 * plane + p].to_f64();
            }
            vec![T::from_f64(acc / plane as f64); 3 * plane]
        }
        EnhanceKind::Sharpness => {
            // 3x3 smoothing kernel, weight 5 at center, total 13; the one-
            // pixel border stays unsmoothed.
            let mut deg = src.clone();
            if h > 2 && w > 2 {
                for c in 0..3 {
                    let p = &src[c * plane..(c + 1) * plane];
                    let d = &mut deg[c * plane..(c + 1) * plane];
                    for y in 1..h - 1 {
                        for x in 1..w - 1 {
                            let mut acc = 0.0;
                            for dy in 0..3 {
                                for dx in 0..3 {
                                    let weight = if dy == 1 && dx == 1 { 5.0 } else { 1.0 };
                                    acc += weight * p[(y + dy - 1) * w + (x + dx - 1)].to_f64();
                                }
                            }
                            d[y * w + x] = T::from_f64(acc / 13.0);
                        }
                    }
                }
            }
            deg
        }
    };
    let f = T::from_f64(factor);
    let out: Vec<T> = src
        .iter()
        .zip(&degenerate)
        .map(|(&v, &d)| clamp01(d + f * (v - d)))
        .collect();
    Tensor::constant(img.shape(), out)
}

/// Rotate about the image center by `degrees`, inverse-mapped with bilinear
/// sampling on the same canvas; out-of-source samples are 0.
pub fn rotate<T: Scalar>(img: &Tensor<T>, degrees: f64) -> Result<Tensor<T>> {
    let (h, w) = check_rgb(img, "rotate")?;
    if degrees == 0.0 {
        return Tensor::constant(img.shape(), img.to_vec());
    }
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let plane = h * w;
    let src = img.data();
    let mut out = vec![T::zero(); 3 * plane];
    // keep boundary samples that land epsilon outside due to trig rounding
    let snap = 1e-9;
    for y in 0..h {
        let dy = y as f64 - cy;
        for x in 0..w {
            let dx = x as f64 - cx;
            let mut sx = cos * dx + sin * dy + cx;
            let mut sy = -sin * dx + cos * dy + cy;
            if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
                if sx >= -snap && sy >= -snap
                    && sx <= (w - 1) as f64 + snap
                    && sy <= (h - 1) as f64 + snap
                {
                    sx = sx.clamp(0.0, (w - 1) as f64);
                    sy = sy.clamp(0.0, (h - 1) as f64);
                } else {
                    continue;
                }
            }
            let x0 = sx.floor() as usize;
            let y0 = sy.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = sx - x0 as f64;
            let fy = sy - y0 as f64;
            for c in 0..3 {
                let p = &src[c * plane..(c + 1) * plane];
                let top = p[y0 * w + x0].to_f64() * (1.0 - fx) + p[y0 * w + x1].to_f64() * fx;
                let bot = p[y1 * w + x0].to_f64() * (1.0 - fx) + p[y1 * w + x1].to_f64() * fx;
                out[c * plane + y * w + x] = clamp01(T::from_f64(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Tensor::constant(img.shape(), out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlurKind {
    Gaussian,
    Mean,
}

/// Normalized 5x5 Gaussian taps at [`GAUSSIAN_SIGMA`].
pub fn gaussian_taps() -> [f64; 25] {
    let mut line = [0.0; 5];
    for (i, v) in line.iter_mut().enumerate() {
        let d = i as f64 - 2.0;
        *v = (-d * d / (2.0 * GAUSSIAN_SIGMA * GAUSSIAN_SIGMA)).exp();
    }
    let sum: f64 = line.iter().sum();
    let mut taps = [0.0; 25];
    for y in 0..5 {
        for x in 0..5 {
            taps[y * 5 + x] = line[y] * line[x] / (sum * sum);
        }
    }
    taps
}

/// 5x5 blur per channel with edge replication padding.
pub fn blur<T: Scalar>(img: &Tensor<T>, kind: BlurKind) -> Result<Tensor<T>> {
    let (h, w) = check_rgb(img, "blur")?;
    if h < 5 || w < 5 {
        return Err(Error::dim(format!(
            "blur: 5x5 kernel needs at least 5x5 input, got {h}x{w}"
        )));
    }
    let taps = match kind {
        BlurKind::Gaussian => gaussian_taps(),
        BlurKind::Mean => [1.0 / 25.0; 25],
    };
    let plane = h * w;
    let src = img.data();
    let mut out = vec![T::zero(); 3 * plane];
    for c in 0..3 {
        let p = &src[c * plane..(c + 1) * plane];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ky in 0..5 {
                    let iy = (y + ky).saturating_sub(2).min(h - 1);
                    for kx in 0..5 {
                        let ix = (x + kx).saturating_sub(2).min(w - 1);
                        acc += taps[ky * 5 + kx] * p[iy * w + ix].to_f64();
                    }
                }
                out[c * plane + y * w + x] = clamp01(T::from_f64(acc));
            }
        }
    }
    Tensor::constant(img.shape(), out)
}

/// The seven post-processing kinds of the robustness harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Chromaticity,
    Brightness,
    Contrast,
    Sharpness,
    Rotation,
    GaussianBlur,
    MeanBlur,
}

impl TransformKind {
    pub const ALL: [TransformKind; 7] = [
        TransformKind::Chromaticity,
        TransformKind::Brightness,
        TransformKind::Contrast,
        TransformKind::Sharpness,
        TransformKind::Rotation,
        TransformKind::GaussianBlur,
        TransformKind::MeanBlur,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TransformKind::Chromaticity => "chromaticity",
            TransformKind::Brightness => "brightness",
            TransformKind::Contrast => "contrast",
            TransformKind::Sharpness => "sharpness",
            TransformKind::Rotation => "rotation",
            TransformKind::GaussianBlur => "gaussian_blur",
            TransformKind::MeanBlur => "mean_blur",
        }
    }

    fn id(&self) -> u64 {
        TransformKind::ALL.iter().position(|k| k == self).unwrap() as u64
    }

    fn has_parameter(&self) -> bool {
        !matches!(self, TransformKind::GaussianBlur | TransformKind::MeanBlur)
    }
}

/// Parameter policy of one robustness transform: sampled per record from a
/// master seed, or pinned to a fixed value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TransformParam {
    Sampled,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub param: TransformParam,
}

impl TransformSpec {
    pub fn sampled(kind: TransformKind) -> Self {
        TransformSpec {
            kind,
            param: TransformParam::Sampled,
        }
    }

    pub fn fixed(kind: TransformKind, value: f64) -> Result<Self> {
        let spec = TransformSpec {
            kind,
            param: TransformParam::Fixed(value),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// All seven kinds with sampled parameters, in report order.
    pub fn default_suite() -> Vec<TransformSpec> {
        TransformKind::ALL.iter().map(|&k| Self::sampled(k)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if let TransformParam::Fixed(v) = self.param {
            match self.kind {
                TransformKind::Chromaticity
                | TransformKind::Brightness
                | TransformKind::Contrast => {
                    if !(0.5..=2.5).contains(&v) {
                        return Err(Error::arg(format!(
                            "{}: factor {v} outside [0.5, 2.5]",
                            self.kind.name()
                        )));
                    }
                }
                TransformKind::Sharpness => {
                    if v.fract() != 0.0 || !(0.0..=4.0).contains(&v) {
                        return Err(Error::arg(format!(
                            "sharpness: factor {v} must be an integer in [0, 4]"
                        )));
                    }
                }
                TransformKind::Rotation => {
                    if !(0.0..360.0).contains(&v) {
                        return Err(Error::arg(format!(
                            "rotation: {v} degrees outside [0, 360)"
                        )));
                    }
                }
                TransformKind::GaussianBlur | TransformKind::MeanBlur => {
                    return Err(Error::arg(format!(
                        "{}: blur takes no parameter",
                        self.kind.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Resolve the parameter for one record. Sampling is a pure function of
    /// (master_seed, kind, record index), so robustness runs are replayable.
    pub fn parameter(&self, master_seed: u64, index: u64) -> f64 {
        match self.param {
            TransformParam::Fixed(v) => v,
            TransformParam::Sampled => {
                if !self.kind.has_parameter() {
                    return 0.0;
                }
                let mut state = splitmix(
                    master_seed ^ splitmix(self.kind.id().wrapping_add(index << 3)),
                );
                state = splitmix(state);
                let unit = (state >> 11) as f64 / (1u64 << 53) as f64; // [0,1)
                match self.kind {
                    TransformKind::Chromaticity
                    | TransformKind::Brightness
                    | TransformKind::Contrast => 0.5 + unit * 2.0,
                    TransformKind::Sharpness => (unit * 5.0).floor().min(4.0),
                    TransformKind::Rotation => unit * 360.0,
                    _ => unreachable!(),
                }
            }
        }
    }

    /// Apply this transform to one record's image.
    pub fn apply<T: Scalar>(
        &self,
        img: &Tensor<T>,
        master_seed: u64,
        index: u64,
    ) -> Result<Tensor<T>> {
        let p = self.parameter(master_seed, index);
        match self.kind {
            TransformKind::Chromaticity => enhance(img, EnhanceKind::Chromaticity, p),
            TransformKind::Brightness => enhance(img, EnhanceKind::Brightness, p),
            TransformKind::Contrast => enhance(img, EnhanceKind::Contrast, p),
            TransformKind::Sharpness => enhance(img, EnhanceKind::Sharpness, p),
            TransformKind::Rotation => rotate(img, p),
            TransformKind::GaussianBlur => blur(img, BlurKind::Gaussian),
            TransformKind::MeanBlur => blur(img, BlurKind::Mean),
        }
    }
}

fn splitmix(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
