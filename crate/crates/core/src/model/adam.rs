//! Adam optimizer over the canonical flat parameter order.

use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

/// Adam hyperparameters. Defaults are the canonical lr 1e-3, beta1 0.9,
/// beta2 0.999, eps 1e-8.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates plus the step counter. One per client,
/// persisted across rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(param_count: usize, hyper: AdamHyper) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            hyper,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn second_moments(&self) -> &[f64] {
        &self.v
    }
}

/// One bias-corrected Adam step, in place:
/// m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
/// params -= lr * m_hat / (sqrt(v_hat) + eps).
pub fn adam_step(state: &mut AdamState, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
    if params.dims() != grads.dims() {
        return Err(Error::DimensionMismatch("params vs grads".into()));
    }
    if state.m.len() != params.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "optimizer state holds {} entries, model has {}",
            state.m.len(),
            params.param_count()
        )));
    }

    state.t += 1;
    let AdamHyper {
        lr,
        beta1,
        beta2,
        eps,
    } = state.hyper;
    let bias1 = 1.0 - beta1.powi(state.t as i32);
    let bias2 = 1.0 - beta2.powi(state.t as i32);

    let mut offset = 0;
    let grad_blocks = grads.blocks();
    for (block_idx, block) in params.blocks_mut().into_iter().enumerate() {
        let grad_block = grad_blocks[block_idx];
        for (j, value) in block.iter_mut().enumerate() {
            let g = grad_block[j];
            let i = offset + j;
            state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
            state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
            let m_hat = state.m[i] / bias1;
            let v_hat = state.v[i] / bias2;
            *value -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        offset += block.len();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Dims};

    fn small() -> (ParamSet, Dims) {
        let dims = Dims::new(2, 3, 2).unwrap();
        (init_params(dims, 5).unwrap(), dims)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut params, dims) = small();
        let before = params.clone();
        let mut state = AdamState::new(dims.param_count(), AdamHyper::default());
        adam_step(&mut state, &mut params, &ParamSet::zeros(dims)).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn first_step_with_unit_gradient() {
        // Hand evaluation at t=1: m_hat = g, v_hat = g^2, so each parameter
        // moves by lr * 1 / (1 + eps).
        let (mut params, dims) = small();
        let before = params.flatten();
        let mut state = AdamState::new(dims.param_count(), AdamHyper::default());
        let ones = ParamSet::from_flat(&vec![1.0; dims.param_count()], dims).unwrap();
        adam_step(&mut state, &mut params, &ones).unwrap();
        let expected_delta = 1e-3 / (1.0 + 1e-8);
        for (after, before) in params.flatten().iter().zip(&before) {
            assert!((before - after - expected_delta).abs() < 1e-15);
        }
    }

    #[test]
    fn two_steps_accumulate() {
        let (mut params, dims) = small();
        let mut state = AdamState::new(dims.param_count(), AdamHyper::default());
        let grad = ParamSet::from_flat(&vec![0.5; dims.param_count()], dims).unwrap();
        adam_step(&mut state, &mut params, &grad).unwrap();
        adam_step(&mut state, &mut params, &grad).unwrap();
        assert_eq!(state.step_count(), 2);
        assert!(state.second_moments().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn length_mismatch_rejected() {
        let (mut params, _) = small();
        let mut state = AdamState::new(3, AdamHyper::default());
        let grads = ParamSet::zeros(params.dims());
        assert!(adam_step(&mut state, &mut params, &grads).is_err());
    }
}
