use std::f64::consts::PI;

use super::AdnnModel;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment accumulators, one flat buffer per parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &AdnnModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.blocks().iter().map(|(_, b)| vec![0.0; b.len()]).collect();
        AdamState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `θ ← θ − lr · (m̂ / (√v̂ + ε) + weight_decay · θ)`.
pub fn adamw_step(
    params: &mut AdnnModel,
    grads: &AdnnModel,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.shapes() != grads.shapes() || state.first.len() != params.blocks().len() {
        return Err(Error::DimensionMismatch("parameter, gradient and optimizer shapes differ".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - ADAM_BETA1.powi(t);
    let correction2 = 1.0 - ADAM_BETA2.powi(t);
    for (((_, theta), (_, g)), (m, v)) in params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        if m.len() != theta.len() {
            return Err(Error::DimensionMismatch("optimizer state does not match parameters".into()));
        }
        for i in 0..theta.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            theta[i] -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + weight_decay * theta[i]);
        }
    }
    Ok(())
}

/// Cosine decay from `base_lr` at step 0 to zero at `total_steps`, no warm-up.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: total_steps,
        });
    }
    let progress = step as f64 / total_steps as f64;
    Ok(base_lr * 0.5 * (1.0 + (PI * progress).cos()))
}
