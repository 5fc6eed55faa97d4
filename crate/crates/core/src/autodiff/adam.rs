//! Adam with bias correction.

use crate::array::DenseArray;
use crate::error::{Error, Result};

/// A trainable array together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: DenseArray,
    pub grad: DenseArray,
}

impl Param {
    pub fn new(value: DenseArray) -> Self {
        let grad = DenseArray::zeros(value.shape());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Moment estimates for a fixed, ordered list of parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<DenseArray>,
    pub v: Vec<DenseArray>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Applies one Adam update in place and zeroes the gradients.
///
/// The moment buffers are created on the first call; later calls must pass
/// parameters with the same shapes in the same order.
pub fn adam_step(params: &mut [&mut Param], state: &mut AdamState, learning_rate: f64) -> Result<()> {
    if state.m.is_empty() {
        state.m = params.iter().map(|p| DenseArray::zeros(p.value.shape())).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::dim(format!(
            "optimizer tracks {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (p, m) in params.iter().zip(&state.m) {
        if p.value.shape() != m.shape() || p.grad.shape() != m.shape() {
            return Err(Error::dim(format!(
                "parameter shape {:?} does not match optimizer state {:?}",
                p.value.shape(),
                m.shape()
            )));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let Param { value, grad } = &mut **p;
        for (((x, &g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *x -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        grad.fill(0.0);
    }
    Ok(())
}
