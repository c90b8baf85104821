use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for a fixed list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        AdamState {
            config,
            first: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.second[index]
    }
}

/// One bias-corrected Adam update of every parameter from its gradient.
///
/// Gradients are left in place; callers clear them before the next pass.
pub fn adam_step(params: &mut [Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.first.len() {
        return Err(Error::Usage(format!(
            "optimizer tracks {} parameters, got {}",
            state.first.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.grad().is_none() {
            return Err(Error::Usage(format!("parameter {i} has no gradient")));
        }
        if p.numel() != state.first[i].len() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {i} changed size to {}", p.numel()),
            ));
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as f64;
    let correction1 = 1.0 - beta1.powf(t);
    let correction2 = 1.0 - beta2.powf(t);

    for ((p, m), v) in params
        .iter_mut()
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        let grad = p.grad().map(<[f64]>::to_vec).unwrap_or_default();
        for (((w, g), m), v) in p.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(value: f64, grad: f64) -> Tensor {
        let mut p = Tensor::scalar(value).tracked();
        p.accumulate_grad(&[grad]).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![param(0.0, 1.0)];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        adam_step(&mut params, &mut state).unwrap();
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-18);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter_and_decays_moments() {
        let mut params = vec![param(0.5, 1.0)];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        adam_step(&mut params, &mut state).unwrap();
        let after_first = params[0].data()[0];
        let (m1, v1) = (state.first_moment(0)[0], state.second_moment(0)[0]);

        params[0].zero_grad();
        params[0].accumulate_grad(&[0.0]).unwrap();
        let mut zero_state = AdamState::new(AdamConfig::default(), &params);
        adam_step(&mut params, &mut zero_state).unwrap();
        assert_eq!(params[0].data()[0], after_first);

        adam_step(&mut params, &mut state).unwrap();
        assert_eq!(state.first_moment(0)[0], 0.9 * m1);
        assert_eq!(state.second_moment(0)[0], 0.999 * v1);
        assert_eq!(state.step_count(), 2);
    }

    #[test]
    fn missing_gradient_is_a_usage_error() {
        let mut params = vec![Tensor::scalar(1.0).tracked()];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        assert!(matches!(
            adam_step(&mut params, &mut state),
            Err(Error::Usage(_))
        ));
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let mut params = vec![param(0.3, 0.0), param(-1.2, 0.0)];
            let mut state = AdamState::new(AdamConfig::default(), &params);
            for k in 0..25 {
                for (i, p) in params.iter_mut().enumerate() {
                    let g = (p.data()[0] * (k + i) as f64).sin();
                    p.zero_grad();
                    p.accumulate_grad(&[g]).unwrap();
                }
                adam_step(&mut params, &mut state).unwrap();
            }
            params.iter().map(|p| p.data()[0].to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
