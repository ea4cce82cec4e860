//! Cross multi-head attention between the two token streams and the
//! surrounding pre-norm encoder block.
//!
//! Both directions read the same pair of input token matrices. In the
//! direction that updates the first stream, queries are projected per head
//! from the first stream's tokens, keys from the second stream's, and the
//! values are the second stream's head slices themselves (no value
//! projection). Attention uses softmax(Q K^T / sqrt(d_k)) over the key axis.

use rand::Rng;

use super::blocks::{Linear, Mlp, LN_EPS};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{LayerNormState, Tensor};

/// Per-head query/key projection matrices for both directions.
pub struct CmaParams<T: Scalar> {
    pub heads: usize,
    /// Queries from the first stream, keys over the second (updates stream 1).
    pub q_first: Vec<Tensor<T>>,
    pub k_second: Vec<Tensor<T>>,
    /// Queries from the second stream, keys over the first (updates stream 2).
    pub q_second: Vec<Tensor<T>>,
    pub k_first: Vec<Tensor<T>>,
}

impl<T: Scalar> CmaParams<T> {
    pub fn init<R: Rng>(width: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "token width {width} is not divisible by head count {heads}"
            )));
        }
        let dk = width / heads;
        let mut draw = |n: usize| -> Vec<Tensor<T>> {
            (0..n)
                .map(|_| {
                    let bound = 1.0 / (dk as f64).sqrt();
                    let data: Vec<T> = (0..dk * dk)
                        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
                        .collect();
                    Tensor::parameter(&[dk, dk], data).expect("projection shape")
                })
                .collect()
        };
        Ok(CmaParams {
            heads,
            q_first: draw(heads),
            k_second: draw(heads),
            q_second: draw(heads),
            k_first: draw(heads),
        })
    }
}

/// Attention maps recorded for inspection: one (N,T,T) tensor per head and
/// direction, rows summing to one along the key axis.
pub struct CmaTrace<T: Scalar> {
    pub first_update: Vec<Tensor<T>>,
    pub second_update: Vec<Tensor<T>>,
}

fn check_tokens<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, heads: usize) -> Result<usize> {
    if a.rank() != 3 || b.rank() != 3 {
        return Err(Error::dim(format!(
            "cross attention: token matrices must be rank 3 (N,T,D), got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "cross attention: streams must agree in shape, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let width = a.shape()[2];
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(Error::Config(format!(
            "token width {width} is not divisible by head count {heads}"
        )));
    }
    Ok(width / heads)
}

/// One attention direction: per-head increment for the query-side stream,
/// concatenated over heads. Returns the attention maps alongside.
fn attend<T: Scalar>(
    q_tokens: &Tensor<T>,
    kv_tokens: &Tensor<T>,
    q_proj: &[Tensor<T>],
    k_proj: &[Tensor<T>],
    heads: usize,
) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let dk = check_tokens(q_tokens, kv_tokens, heads)?;
    let scale = T::one() / T::from_f64((dk as f64).sqrt());
    let mut per_head = Vec::with_capacity(heads);
    let mut maps = Vec::with_capacity(heads);
    for i in 0..heads {
        let q_i = q_tokens.narrow(2, i * dk, dk)?.linear(&q_proj[i], None)?;
        let k_i = kv_tokens.narrow(2, i * dk, dk)?.linear(&k_proj[i], None)?;
        let v_i = kv_tokens.narrow(2, i * dk, dk)?;
        let scores = q_i.bmm(&k_i.transpose_last2()?)?.scale(scale);
        let attn = scores.softmax(2)?;
        per_head.push(attn.bmm(&v_i)?);
        maps.push(attn);
    }
    let refs: Vec<&Tensor<T>> = per_head.iter().collect();
    Ok((Tensor::concat(&refs, 2)?, maps))
}

pub(crate) fn cma_increments<T: Scalar>(
    first: &Tensor<T>,
    second: &Tensor<T>,
    params: &CmaParams<T>,
) -> Result<(Tensor<T>, Tensor<T>, CmaTrace<T>)> {
    // Both directions read the same inputs; neither sees the other's update.
    let (inc_first, maps_first) = attend(
        first,
        second,
        &params.q_first,
        &params.k_second,
        params.heads,
    )?;
    let (inc_second, maps_second) = attend(
        second,
        first,
        &params.q_second,
        &params.k_first,
        params.heads,
    )?;
    Ok((
        inc_first,
        inc_second,
        CmaTrace {
            first_update: maps_first,
            second_update: maps_second,
        },
    ))
}

/// Cross multi-head attention proper: each stream plus the head-concatenated
/// attention readout of the other stream.
pub fn cma_forward<T: Scalar>(
    first: &Tensor<T>,
    second: &Tensor<T>,
    params: &CmaParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (out_first, out_second, _) = cma_forward_traced(first, second, params)?;
    Ok((out_first, out_second))
}

/// Same as [`cma_forward`] but returns the per-head attention maps.
pub fn cma_forward_traced<T: Scalar>(
    first: &Tensor<T>,
    second: &Tensor<T>,
    params: &CmaParams<T>,
) -> Result<(Tensor<T>, Tensor<T>, CmaTrace<T>)> {
    let (inc_first, inc_second, trace) = cma_increments(first, second, params)?;
    Ok((first.add(&inc_first)?, second.add(&inc_second)?, trace))
}

/// Pre-norm encoder block: layer norm, cross attention with an output
/// projection per direction, residual add, then layer norm + MLP with a
/// second residual. Zeroing the output projections and the MLP second-layer
/// weights turns the whole block into the identity map.
pub struct EncoderBlock<T: Scalar> {
    pub ln_first_attn: LayerNormState<T>,
    pub ln_second_attn: LayerNormState<T>,
    pub cma: CmaParams<T>,
    pub out_first: Linear<T>,
    pub out_second: Linear<T>,
    pub ln_first_mlp: LayerNormState<T>,
    pub ln_second_mlp: LayerNormState<T>,
    pub mlp_first: Mlp<T>,
    pub mlp_second: Mlp<T>,
}

impl<T: Scalar> EncoderBlock<T> {
    pub fn init<R: Rng>(width: usize, heads: usize, mlp_ratio: usize, rng: &mut R) -> Result<Self> {
        Ok(EncoderBlock {
            ln_first_attn: LayerNormState::new(width, LN_EPS)?,
            ln_second_attn: LayerNormState::new(width, LN_EPS)?,
            cma: CmaParams::init(width, heads, rng)?,
            out_first: Linear::init(width, width, false, rng),
            out_second: Linear::init(width, width, false, rng),
            ln_first_mlp: LayerNormState::new(width, LN_EPS)?,
            ln_second_mlp: LayerNormState::new(width, LN_EPS)?,
            mlp_first: Mlp::init(width, mlp_ratio, rng),
            mlp_second: Mlp::init(width, mlp_ratio, rng),
        })
    }

    pub fn forward(&self, first: &Tensor<T>, second: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (out_first, out_second, _) = self.forward_traced(first, second)?;
        Ok((out_first, out_second))
    }

    pub fn forward_traced(
        &self,
        first: &Tensor<T>,
        second: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, CmaTrace<T>)> {
        let u_first = first.layernorm(&self.ln_first_attn)?;
        let u_second = second.layernorm(&self.ln_second_attn)?;
        let (inc_first, inc_second, trace) = cma_increments(&u_first, &u_second, &self.cma)?;
        let y_first = first.add(&self.out_first.forward(&inc_first)?)?;
        let y_second = second.add(&self.out_second.forward(&inc_second)?)?;
        let z_first = y_first.add(
            &self
                .mlp_first
                .forward(&y_first.layernorm(&self.ln_first_mlp)?)?,
        )?;
        let z_second = y_second.add(
            &self
                .mlp_second
                .forward(&y_second.layernorm(&self.ln_second_mlp)?)?,
        )?;
        Ok((z_first, z_second, trace))
    }

    /// Zero the attention output projections and the MLP second layers,
    /// leaving only the residual paths.
    pub fn zero_output_layers(&self) {
        for w in [
            &self.out_first.weight,
            &self.out_second.weight,
            &self.mlp_first.fc2.weight,
            &self.mlp_second.fc2.weight,
        ] {
            w.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        for b in [&self.mlp_first.fc2.bias, &self.mlp_second.fc2.bias].into_iter().flatten() {
            b.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}
