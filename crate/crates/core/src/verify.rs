//! Finite-difference verification suite: every differentiable layer family,
//! and the full desk-scale model end to end. Runs in f64; the reported
//! number per family is the maximum relative error across its probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::net::{EncoderBlock, Model, ModelConfig};
use crate::srm::{build_filter_bank, extract_residuals};
use crate::tensor::{bce_loss, finite_diff_check, BatchNormState, FdOptions, LayerNormState, Tensor};

/// Gradients are accepted below this maximum relative error (f64, central
/// differences with step 1e-5, denominator max(1, |analytic|, |numeric|)).
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct FamilyResult {
    pub family: String,
    pub max_rel_err: f64,
}

impl FamilyResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRADCHECK_TOLERANCE
    }
}

fn rand_param(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::parameter(shape, data).unwrap()
}

/// Values with pairwise gaps far above the probe step, shuffled; keeps
/// max-pool argmax decisions stable under the +/-1e-5 perturbation.
fn well_separated(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let numel: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..numel).map(|i| i as f64 * 1e-2 - numel as f64 * 5e-3).collect();
    values.shuffle(rng);
    Tensor::parameter(shape, values).unwrap()
}

fn merge(results: &mut Vec<FamilyResult>, family: &str, errs: &[f64]) {
    let max = errs.iter().cloned().fold(0.0f64, f64::max);
    results.push(FamilyResult {
        family: family.to_string(),
        max_rel_err: max,
    });
}

/// Run the whole suite. Deterministic in the seed.
pub fn run_gradcheck_suite(seed: u64) -> Result<Vec<FamilyResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = FdOptions::default();
    let mut results = Vec::new();

    // conv2d: input, weight, bias
    {
        let x = rand_param(&[2, 3, 8, 8], -1.0, 1.0, &mut rng);
        let w = rand_param(&[4, 3, 3, 3], -0.5, 0.5, &mut rng);
        let b = rand_param(&[4], -0.5, 0.5, &mut rng);
        let mask = Tensor::rand_uniform(&[2, 4, 4, 4], -1.0, 1.0, &mut rng);
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            Ok(x.conv2d(w, Some(b), 2, 1)?.mul(&mask)?.sum_all())
        };
        let errs = [
            finite_diff_check(|t| f(t, &w, &b), &x, &opts)?,
            finite_diff_check(|t| f(&x, t, &b), &w, &opts)?,
            finite_diff_check(|t| f(&x, &w, t), &b, &opts)?,
        ];
        merge(&mut results, "conv2d", &errs);
    }

    // linear: input, weight, bias
    {
        let x = rand_param(&[4, 6], -1.0, 1.0, &mut rng);
        let w = rand_param(&[6, 5], -0.5, 0.5, &mut rng);
        let b = rand_param(&[5], -0.5, 0.5, &mut rng);
        let mask = Tensor::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            Ok(x.linear(w, Some(b))?.mul(&mask)?.sum_all())
        };
        let errs = [
            finite_diff_check(|t| f(t, &w, &b), &x, &opts)?,
            finite_diff_check(|t| f(&x, t, &b), &w, &opts)?,
            finite_diff_check(|t| f(&x, &w, t), &b, &opts)?,
        ];
        merge(&mut results, "linear", &errs);
    }

    // batch norm, training and inference statistics
    for (family, training) in [("batchnorm_train", true), ("batchnorm_eval", false)] {
        let state = BatchNormState::<f64>::new(3, 0.1, 1e-5)?;
        {
            let mut rv = state.running_var.borrow_mut();
            for v in rv.iter_mut() {
                *v = rng.gen_range(0.5..1.5);
            }
        }
        let x = rand_param(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let mask = Tensor::rand_uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let f = |x: &Tensor<f64>| Ok(x.batchnorm2d(&state, training)?.mul(&mask)?.sum_all());
        let errs = [
            finite_diff_check(f, &x, &opts)?,
            finite_diff_check(
                |_| f(&x),
                &state.gamma,
                &opts,
            )?,
            finite_diff_check(|_| f(&x), &state.beta, &opts)?,
        ];
        merge(&mut results, family, &errs);
    }

    // layer norm
    {
        let state = LayerNormState::<f64>::new(8, 1e-6)?;
        let x = rand_param(&[2, 3, 8], -1.0, 1.0, &mut rng);
        let mask = Tensor::rand_uniform(&[2, 3, 8], -1.0, 1.0, &mut rng);
        let f = |x: &Tensor<f64>| Ok(x.layernorm(&state)?.mul(&mask)?.sum_all());
        let errs = [
            finite_diff_check(f, &x, &opts)?,
            finite_diff_check(|_| f(&x), &state.gamma, &opts)?,
            finite_diff_check(|_| f(&x), &state.beta, &opts)?,
        ];
        merge(&mut results, "layernorm", &errs);
    }

    // softmax
    {
        let x = rand_param(&[3, 7], -2.0, 2.0, &mut rng);
        let mask = Tensor::rand_uniform(&[3, 7], -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            |x| Ok(x.softmax(1)?.mul(&mask)?.sum_all()),
            &x,
            &opts,
        )?;
        merge(&mut results, "softmax", &[err]);
    }

    // element-wise maps; relu inputs kept away from the kink
    {
        let magnitudes = rand_param(&[40], 0.1, 1.0, &mut rng);
        let data: Vec<f64> = magnitudes
            .to_vec()
            .iter()
            .enumerate()
            .map(|(i, &v)| if i % 2 == 0 { v } else { -v })
            .collect();
        let x = Tensor::parameter(&[40], data).unwrap();
        let err = finite_diff_check(|x| Ok(x.relu().sum_all()), &x, &opts)?;
        merge(&mut results, "relu", &[err]);

        let x = rand_param(&[40], -2.0, 2.0, &mut rng);
        let err = finite_diff_check(|x| Ok(x.gelu().sum_all()), &x, &opts)?;
        merge(&mut results, "gelu", &[err]);

        let x = rand_param(&[40], -3.0, 3.0, &mut rng);
        let err = finite_diff_check(|x| Ok(x.sigmoid().sum_all()), &x, &opts)?;
        merge(&mut results, "sigmoid", &[err]);

        let x = rand_param(&[24], -1.0, 1.0, &mut rng);
        let other = Tensor::rand_uniform(&[24], -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            |x| {
                Ok(x.add(&other)?
                    .sub(&x.scale(0.5))?
                    .mul(&other)?
                    .sum_all())
            },
            &x,
            &opts,
        )?;
        merge(&mut results, "elementwise", &[err]);
    }

    // concat + narrow
    {
        let a = rand_param(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(&[2, 2, 4], -1.0, 1.0, &mut rng);
        let mask = Tensor::rand_uniform(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            |a| {
                Ok(Tensor::concat(&[a, &b], 1)?
                    .narrow(1, 1, 3)?
                    .mul(&mask)?
                    .sum_all())
            },
            &a,
            &opts,
        )?;
        merge(&mut results, "concat_narrow", &[err]);
    }

    // max pool (well-separated inputs keep argmax stable under the probe)
    {
        let x = well_separated(&[2, 2, 8, 8], &mut rng);
        let mask = Tensor::rand_uniform(&[2, 2, 4, 4], -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            |x| Ok(x.maxpool2d(3, 2, 1)?.mul(&mask)?.sum_all()),
            &x,
            &opts,
        )?;
        merge(&mut results, "maxpool", &[err]);
    }

    // global average pool
    {
        let x = rand_param(&[2, 3, 4, 4], -1.0, 1.0, &mut rng);
        let mask = Tensor::rand_uniform(&[2, 3], -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            |x| Ok(x.global_avg_pool()?.mul(&mask)?.sum_all()),
            &x,
            &opts,
        )?;
        merge(&mut results, "global_avg_pool", &[err]);
    }

    // token/map reshuffles
    {
        let x = rand_param(&[2, 5, 4, 4], -1.0, 1.0, &mut rng);
        let mask = Tensor::rand_uniform(&[2, 5, 4, 4], -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            |x| {
                Ok(x.tokens_from_maps(5)?
                    .maps_from_tokens(5)?
                    .mul(&mask)?
                    .sum_all())
            },
            &x,
            &opts,
        )?;
        merge(&mut results, "tokens", &[err]);
    }

    // SRM residual extraction (input gradient)
    {
        let bank = build_filter_bank::<f64>();
        let x = rand_param(&[1, 3, 8, 8], 0.0, 1.0, &mut rng);
        let mask = Tensor::rand_uniform(&[1, 90, 8, 8], -1.0, 1.0, &mut rng);
        let err = finite_diff_check(
            |x| Ok(extract_residuals(x, &bank)?.mul(&mask)?.sum_all()),
            &x,
            &opts,
        )?;
        merge(&mut results, "srm", &[err]);
    }

    // binary cross entropy through the sigmoid
    {
        let logits = rand_param(&[6], -2.0, 2.0, &mut rng);
        let labels =
            Tensor::constant(&[6], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let err = finite_diff_check(
            |z| bce_loss(&z.sigmoid(), &labels),
            &logits,
            &opts,
        )?;
        merge(&mut results, "bce", &[err]);
    }

    // encoder block: token input, a projection, an MLP weight
    {
        let block = EncoderBlock::<f64>::init(16, 4, 2, &mut rng)?;
        let chi = rand_param(&[1, 6, 16], -1.0, 1.0, &mut rng);
        let phi = Tensor::rand_uniform(&[1, 6, 16], -1.0, 1.0, &mut rng);
        let mask_c = Tensor::rand_uniform(&[1, 6, 16], -1.0, 1.0, &mut rng);
        let mask_p = Tensor::rand_uniform(&[1, 6, 16], -1.0, 1.0, &mut rng);
        let f = |chi: &Tensor<f64>| {
            let (c, p) = block.forward(chi, &phi)?;
            c.mul(&mask_c)?.sum_all().add(&p.mul(&mask_p)?.sum_all())
        };
        let errs = [
            finite_diff_check(f, &chi, &opts)?,
            finite_diff_check(|_| f(&chi), &block.cma.q_first[1], &opts)?,
            finite_diff_check(|_| f(&chi), &block.cma.k_first[0], &opts)?,
            finite_diff_check(|_| f(&chi), &block.out_first.weight, &opts)?,
            finite_diff_check(|_| f(&chi), &block.mlp_second.fc1.weight, &opts)?,
        ];
        merge(&mut results, "encoder", &errs);
    }

    Ok(results)
}

/// Finite differences through the full desk-scale model: `coords` sampled
/// parameter coordinates spread over `tensors_to_probe` tensors.
pub fn full_model_gradcheck(
    seed: u64,
    tensors_to_probe: usize,
    coords_per_tensor: usize,
) -> Result<FamilyResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        input_side: 32,
        seed,
        ..ModelConfig::default()
    };
    let model = Model::<f64>::init(&cfg)?;
    let images = Tensor::rand_uniform(&[2, 3, 32, 32], 0.0, 1.0, &mut rng);
    let labels = Tensor::constant(&[2], vec![1.0, 0.0])?;
    let f = |_: &Tensor<f64>| {
        let logits = model.forward(&images, true)?;
        bce_loss(&logits.sigmoid(), &labels)
    };
    let params = model.named_parameters();
    let picks = rand::seq::index::sample(&mut rng, params.len(), tensors_to_probe.min(params.len()));
    let mut max_err = 0.0f64;
    for (k, idx) in picks.into_iter().enumerate() {
        let (_, tensor) = &params[idx];
        let opts = FdOptions {
            step: 1e-5,
            max_coords: coords_per_tensor,
            seed: seed.wrapping_add(k as u64),
        };
        let err = finite_diff_check(f, tensor, &opts)?;
        if err > max_err {
            max_err = err;
        }
    }
    Ok(FamilyResult {
        family: "full_model".to_string(),
        max_rel_err: max_err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_family_suite_is_within_tolerance() {
        for r in run_gradcheck_suite(1234).unwrap() {
            assert!(
                r.passed(),
                "{} failed gradcheck: {:.3e}",
                r.family,
                r.max_rel_err
            );
        }
    }
}
