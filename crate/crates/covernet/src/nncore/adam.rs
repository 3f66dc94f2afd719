//! Adam optimizer with bias correction.

use crate::error::{Error, Result};

use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zeroed accumulators matching `params` shapes.
    pub fn new(params: &[&Tensor], lr: f64) -> Self {
        AdamState {
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update across a parameter list. `params[i]` and `grads[i]` must
/// share shapes with the accumulators. NaN/Inf gradients abort the step.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return Err(Error::Shape(format!(
            "adam_step: {} params, {} grads, {} accumulators",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params[i].shape() {
            return Err(Error::Shape(format!(
                "adam_step: grad {i} shape {:?} does not match param {:?}",
                g.shape(),
                params[i].shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient in parameter {i}")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    for i in 0..params.len() {
        let m = state.first_moment[i].values_mut();
        let v = state.second_moment[i].values_mut();
        let g = grads[i].values();
        let p = params[i].values_mut();
        for j in 0..p.len() {
            let gj = f64::from(g[j]);
            let mj = state.beta1 * f64::from(m[j]) + (1.0 - state.beta1) * gj;
            let vj = state.beta2 * f64::from(v[j]) + (1.0 - state.beta2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            p[j] = (f64::from(p[j]) - state.lr * m_hat / (v_hat.sqrt() + state.eps)) as f32;
        }
    }
    Ok(())
}
