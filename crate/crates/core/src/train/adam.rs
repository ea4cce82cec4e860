//! Adam with bias correction, iterating the model's named parameters in
//! their fixed traversal order.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// First/second moment estimates per parameter, plus the step counter.
pub struct AdamState<T: Scalar> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[(String, Tensor<T>)], beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One optimizer step over every parameter. Each parameter must carry a
/// gradient; gradients are consumed (cleared) by the update.
pub fn adam_step<T: Scalar>(
    params: &[(String, Tensor<T>)],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::Train(format!(
            "optimizer state tracks {} parameters, model has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let one = T::one();
    let eps = T::from_f64(state.eps);
    let lr_t = T::from_f64(lr);
    // bias corrections, computed once per step
    let bc1 = T::from_f64(1.0 - state.beta1.powi(state.t as i32));
    let bc2 = T::from_f64(1.0 - state.beta2.powi(state.t as i32));
    for (i, (name, param)) in params.iter().enumerate() {
        let grad = param.grad().ok_or_else(|| {
            Error::Train(format!("parameter {name} has no gradient; run backward first"))
        })?;
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let mut data = param.data_mut();
        for j in 0..grad.len() {
            let g = grad[j];
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
        drop(data);
        param.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: f64, grad: f64) -> Vec<(String, Tensor<f64>)> {
        let p = Tensor::parameter(&[1], vec![value]).unwrap();
        p.accumulate_grad(&[grad]);
        vec![("w".to_string(), p)]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // bias-corrected first step: delta = -lr * g / (|g| + eps)
        let lr = 2e-4;
        for g in [0.37, -1.4, 250.0] {
            let params = one_param(1.0, g);
            let mut state = AdamState::new(&params, 0.9, 0.999, 1e-8);
            adam_step(&params, &mut state, lr).unwrap();
            let got = params[0].1.to_vec()[0] - 1.0;
            let want = -lr * g / (g.abs() + 1e-8);
            assert!((got - want).abs() < 1e-12, "g={g}: {got} vs {want}");
            assert_eq!(state.t, 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters_but_counts_step() {
        let params = one_param(2.5, 0.0);
        let mut state = AdamState::new(&params, 0.9, 0.999, 1e-8);
        adam_step(&params, &mut state, 1e-3).unwrap();
        assert_eq!(params[0].1.to_vec(), vec![2.5]);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let params = one_param(0.75, 3.0);
        let mut state = AdamState::new(&params, 0.9, 0.999, 1e-8);
        adam_step(&params, &mut state, 0.0).unwrap();
        assert_eq!(params[0].1.to_vec(), vec![0.75]);
    }

    #[test]
    fn identical_gradients_update_identically() {
        let a = Tensor::parameter(&[2], vec![1.0f64, 1.0]).unwrap();
        a.accumulate_grad(&[0.3, 0.3]);
        let params = vec![("a".to_string(), a)];
        let mut state = AdamState::new(&params, 0.9, 0.999, 1e-8);
        adam_step(&params, &mut state, 1e-2).unwrap();
        let d = params[0].1.to_vec();
        assert_eq!(d[0], d[1]);
    }

    #[test]
    fn missing_gradient_names_the_parameter() {
        let p = Tensor::<f64>::parameter(&[1], vec![0.0]).unwrap();
        let params = vec![("fc.weight".to_string(), p)];
        let mut state = AdamState::new(&params, 0.9, 0.999, 1e-8);
        let err = adam_step(&params, &mut state, 1e-3).unwrap_err().to_string();
        assert!(err.contains("fc.weight"), "{err}");
    }
}
