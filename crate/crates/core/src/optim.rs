//! SGD with momentum and L2 weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 2.5e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// Velocity buffers, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: SgdConfig,
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: SgdConfig, params: &[Tensor]) -> Self {
        OptimizerState {
            config,
            velocity: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
        }
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }
}

/// One update:
///
/// ```text
/// v <- momentum * v + grad + weight_decay * w
/// w <- w - lr * v
/// ```
///
/// Parameters without a gradient are treated as having a zero gradient.
pub fn sgd_step(params: &mut [Tensor], state: &mut OptimizerState) -> Result<()> {
    if params.len() != state.velocity.len() {
        return Err(shape_err!(
            "optimizer tracks {} parameters, got {}",
            state.velocity.len(),
            params.len()
        ));
    }
    let SgdConfig {
        learning_rate,
        momentum,
        weight_decay,
    } = state.config;
    for (i, (param, v)) in params.iter_mut().zip(&state.velocity).enumerate() {
        if v.len() != param.numel() || param.grad().is_some_and(|g| g.len() != v.len()) {
            return Err(shape_err!(
                "parameter {i} has {} values, velocity {}",
                param.numel(),
                v.len()
            ));
        }
    }
    for (param, v) in params.iter_mut().zip(state.velocity.iter_mut()) {
        let grad = param.grad().map(<[f64]>::to_vec);
        let w = param.data_mut();
        for j in 0..w.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[j]);
            v[j] = momentum * v[j] + g + weight_decay * w[j];
            w[j] -= learning_rate * v[j];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(w: f64, g: f64) -> Tensor {
        let mut t = Tensor::new(vec![1], vec![w]).unwrap();
        t.set_grad(vec![g]).unwrap();
        t
    }

    #[test]
    fn plain_gradient_descent() {
        let mut params = vec![scalar_param(2.0, 0.5)];
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let mut state = OptimizerState::new(cfg, &params);
        sgd_step(&mut params, &mut state).unwrap();
        assert_eq!(params[0].data()[0], 2.0 - 0.1 * 0.5);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut params = vec![scalar_param(1.25, 0.0)];
        let cfg = SgdConfig {
            weight_decay: 0.0,
            ..SgdConfig::default()
        };
        let mut state = OptimizerState::new(cfg, &params);
        sgd_step(&mut params, &mut state).unwrap();
        assert_eq!(params[0].data()[0], 1.25);
    }

    #[test]
    fn momentum_two_step_recurrence() {
        let mut params = vec![scalar_param(1.0, 1.0)];
        let cfg = SgdConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let mut state = OptimizerState::new(cfg, &params);
        sgd_step(&mut params, &mut state).unwrap();
        sgd_step(&mut params, &mut state).unwrap();
        // v1 = 1, v2 = 0.9 + 1 = 1.9
        assert!((params[0].data()[0] - 0.71).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_enters_before_momentum() {
        let mut params = vec![scalar_param(2.0, 0.0)];
        let cfg = SgdConfig {
            learning_rate: 0.5,
            momentum: 0.9,
            weight_decay: 0.1,
        };
        let mut state = OptimizerState::new(cfg, &params);
        sgd_step(&mut params, &mut state).unwrap();
        assert!((state.velocity()[0][0] - 0.2).abs() < 1e-15);
        assert!((params[0].data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let params = vec![scalar_param(1.0, 1.0)];
        let mut state = OptimizerState::new(SgdConfig::default(), &params);
        let mut other = vec![Tensor::zeros(vec![3])];
        assert!(sgd_step(&mut other, &mut state).is_err());
    }
}
