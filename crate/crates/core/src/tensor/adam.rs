use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    shape: Vec<usize>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(param: &Tensor<T>, config: AdamConfig) -> Self {
        AdamState {
            step_count: 0,
            first_moment: vec![T::zero(); param.len()],
            second_moment: vec![T::zero(); param.len()],
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            learning_rate: config.learning_rate,
            shape: param.shape().to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
}

/// One bias-corrected Adam update. The parameter's gradient is left in place.
pub fn adam_step<T: Scalar>(param: &mut Tensor<T>, state: &mut AdamState<T>) -> Result<()> {
    if param.shape() != state.shape() {
        return Err(Error::State(format!(
            "optimizer state shaped {:?} does not match parameter {:?}",
            state.shape(),
            param.shape()
        )));
    }
    if !(state.learning_rate > 0.0) {
        return Err(Error::Parameter(format!("learning rate must be positive, got {}", state.learning_rate)));
    }
    let grad = param.grad().ok_or_else(|| Error::State("adam step on a parameter without gradient".into()))?.to_vec();
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (T::from_f64_lossy(state.beta1), T::from_f64_lossy(state.beta2));
    let correction1 = T::from_f64_lossy(1.0 - state.beta1.powi(t));
    let correction2 = T::from_f64_lossy(1.0 - state.beta2.powi(t));
    let lr = T::from_f64_lossy(state.learning_rate);
    let eps = T::from_f64_lossy(state.epsilon);
    let one = T::one();
    for (((p, g), m), v) in
        param.data_mut().iter_mut().zip(grad).zip(state.first_moment.iter_mut()).zip(state.second_moment.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
