//! Trainable parameter storage and the adaptive-moment optimizer.

use crate::{Error, Result};

/// Default learning rate for field training.
pub const DEFAULT_LEARNING_RATE: f64 = 5e-4;

/// Decay rates and epsilon of the adaptive-moment update.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Flat trainable parameter vector with per-parameter first/second moment
/// accumulators and a step counter. Length is fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    moment1: Vec<f64>,
    moment2: Vec<f64>,
    step: u64,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        ParamVector {
            values,
            moment1: vec![0.0; n],
            moment2: vec![0.0; n],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for initialization and tests; optimizer state is not
    /// adjusted, so overwrite values only before training starts.
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.moment1, &self.moment2)
    }
}

/// One adaptive-moment update with bias correction. Validates the gradient
/// before touching any state: a non-finite gradient leaves the parameters
/// and moments untouched and reports a numerical failure.
pub fn optimizer_step(params: &mut ParamVector, gradient: &[f64], learning_rate: f64) -> Result<()> {
    optimizer_step_with(params, gradient, learning_rate, AdamConfig::default())
}

pub fn optimizer_step_with(
    params: &mut ParamVector,
    gradient: &[f64],
    learning_rate: f64,
    cfg: AdamConfig,
) -> Result<()> {
    if gradient.len() != params.values.len() {
        return Err(Error::Usage(format!(
            "gradient length {} does not match parameter count {}",
            gradient.len(),
            params.values.len()
        )));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient at parameter {i}"
        )));
    }

    let t = params.step + 1;
    let bias1 = 1.0 - cfg.beta1.powi(t as i32);
    let bias2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.values.len() {
        let g = gradient[i];
        let m = cfg.beta1 * params.moment1[i] + (1.0 - cfg.beta1) * g;
        let v = cfg.beta2 * params.moment2[i] + (1.0 - cfg.beta2) * g * g;
        params.moment1[i] = m;
        params.moment2[i] = v;
        let m_hat = m / bias1;
        let v_hat = v / bias2;
        params.values[i] -= learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    params.step = t;
    Ok(())
}
