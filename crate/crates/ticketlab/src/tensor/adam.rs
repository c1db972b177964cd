//! Adam with per-parameter moment state and optional gradient masking.
//!
//! Masked positions are frozen: the gradient is ignored, both moments are
//! held at zero, and the parameter value is left untouched, so a pruned
//! weight stays bit-identical across any number of steps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        // Conventional GAN setting.
        AdamHyper {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub hyper: AdamHyper,
    step: u64,
    states: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new(hyper: AdamHyper) -> Self {
        Adam {
            hyper,
            step: 0,
            states: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Advances the shared step counter; call once per optimizer step,
    /// before the per-parameter updates of that step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies one Adam update to `param`. `mask`, when given, must be
    /// congruent to the parameter; positions with mask 0 are frozen.
    pub fn update(
        &mut self,
        name: &str,
        param: &mut Tensor,
        grad: &Tensor,
        mask: Option<&[u8]>,
    ) -> Result<()> {
        if !param.same_shape(grad) {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: param.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        if !grad.all_finite() {
            return Err(TensorError::NonFiniteGradient {
                name: name.to_string(),
                step: self.step,
            });
        }
        if let Some(m) = mask {
            if m.len() != param.numel() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step mask",
                    lhs: param.shape().to_vec(),
                    rhs: vec![m.len()],
                });
            }
        }
        let n = param.numel();
        let state = self.states.entry(name.to_string()).or_insert_with(|| AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        let t = self.step.max(1) as i32;
        let h = self.hyper;
        let bc1 = 1.0 - h.beta1.powi(t);
        let bc2 = 1.0 - h.beta2.powi(t);
        let data = param.data_mut();
        for i in 0..n {
            if let Some(mk) = mask {
                if mk[i] == 0 {
                    state.m[i] = 0.0;
                    state.v[i] = 0.0;
                    continue;
                }
            }
            let g = grad.data()[i];
            state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
            state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
            let mhat = state.m[i] / bc1;
            let vhat = state.v[i] / bc2;
            data[i] -= h.lr * mhat / (vhat.sqrt() + h.eps);
        }
        Ok(())
    }
}
