use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sharding::Subgroup;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Shared step counter used for bias correction, starting at 1.
    pub step: u32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 1,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("betas must lie in [0, 1)"));
        }
        if self.eps.is_nan() || self.eps <= 0.0 || !self.lr.is_finite() {
            return Err(Error::invalid("eps must be positive and lr finite"));
        }
        if self.step == 0 {
            return Err(Error::invalid("step counts from 1"));
        }
        Ok(())
    }
}

/// FP32 Adam with bias correction. Every tier runs this exact kernel, so
/// results do not depend on where a subgroup is updated.
pub fn adam_step(
    params: &mut [f32],
    momentum: &mut [f32],
    variance: &mut [f32],
    grads: &[f32],
    h: &AdamHyper,
) -> Result<()> {
    let n = params.len();
    if momentum.len() != n || variance.len() != n || grads.len() != n {
        return Err(Error::invalid(format!(
            "length mismatch: params {n}, momentum {}, variance {}, grads {}",
            momentum.len(),
            variance.len(),
            grads.len()
        )));
    }
    let t = h.step.min(i32::MAX as u32) as i32;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    let (b1, b2) = (h.beta1, h.beta2);
    for i in 0..n {
        let g = grads[i];
        let m = b1 * momentum[i] + (1.0 - b1) * g;
        let v = b2 * variance[i] + (1.0 - b2) * (g * g);
        momentum[i] = m;
        variance[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
    Ok(())
}

pub fn adam_step_subgroup(sg: &mut Subgroup, grads32: &[f32], h: &AdamHyper) -> Result<()> {
    adam_step(&mut sg.params, &mut sg.momentum, &mut sg.variance, grads32, h)
}
