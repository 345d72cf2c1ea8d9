use super::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    t: u64,
}

impl AdamState {
    pub fn for_params(params: &[Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

impl Adam {
    pub fn with_lr(lr: f32) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(
        &self,
        params: &mut [Tensor],
        grads: &[Vec<f32>],
        state: &mut AdamState,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(Error::shape(
                "adam_step",
                format!(
                    "{} params, {} grads, {} moment buffers",
                    params.len(),
                    grads.len(),
                    state.m.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.numel() != g.len() || state.m[i].len() != g.len() {
                return Err(Error::shape(
                    "adam_step",
                    format!("tensor {i}: param {} vs grad {} values", p.numel(), g.len()),
                ));
            }
        }
        state.t += 1;
        let t = state.t as i32;
        let bc1 = 1.0 - (self.beta1 as f64).powi(t);
        let bc2 = 1.0 - (self.beta2 as f64).powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut state.m[i];
            let v = &mut state.v[i];
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] as f64 / bc1;
                let vhat = v[j] as f64 / bc2;
                *w -= (self.lr as f64 * mhat / (vhat.sqrt() + self.eps as f64)) as f32;
            }
        }
        Ok(())
    }
}
