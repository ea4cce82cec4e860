//! Central finite-difference verification of analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Controls for [`finite_diff_check`].
pub struct FdOptions {
    /// Perturbation half-step h in f(x +/- h e_i).
    pub step: f64,
    /// Coordinates above this count are sampled instead of swept.
    pub max_coords: usize,
    /// Seed for the coordinate sample.
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            step: 1e-5,
            max_coords: 64,
            seed: 0,
        }
    }
}

/// Compare the analytic gradient of a scalar-valued `f` with central finite
/// differences at `x`, coordinate by coordinate (or over a seeded sample of
/// coordinates for large tensors). Returns the maximum relative error with
/// denominator `max(1, |analytic|, |numeric|)`.
///
/// `x` is perturbed in place and restored; each probe rebuilds the graph, so
/// `f` must be deterministic. Meaningful in f64 mode only; f32 has too
/// little headroom under the default step.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, opts: &FdOptions) -> Result<f64>
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Result<Tensor<T>>,
{
    if opts.step <= 0.0 {
        return Err(Error::arg(format!("step {} must be positive", opts.step)));
    }
    if !x.requires_grad() {
        return Err(Error::arg(
            "finite_diff_check: input does not require a gradient; no gradient to report",
        ));
    }
    let y = f(x)?;
    if y.numel() != 1 {
        return Err(Error::arg(format!(
            "finite_diff_check: f must be scalar-valued, got shape {:?}",
            y.shape()
        )));
    }
    x.zero_grad();
    y.backward()?;
    let analytic = x.grad().ok_or_else(|| {
        Error::arg("finite_diff_check: no gradient reached the input".to_string())
    })?;

    let n = x.numel();
    let coords: Vec<usize> = if n <= opts.max_coords {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rand::seq::index::sample(&mut rng, n, opts.max_coords).into_vec()
    };

    let h = T::from_f64(opts.step);
    let mut max_rel = 0.0f64;
    for &i in &coords {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let fp = f(x)?.item()?.to_f64();
        x.data_mut()[i] = orig - h;
        let fm = f(x)?.item()?.to_f64();
        x.data_mut()[i] = orig;
        let numeric = (fp - fm) / (2.0 * opts.step);
        let a = analytic[i].to_f64();
        let denom = 1.0f64.max(a.abs()).max(numeric.abs());
        let rel = (a - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
