use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimizer state with bias correction. Moments are kept per parameter
/// slot in the model's canonical parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    /// Number of steps taken.
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>, config: AdamConfig) -> Self {
        let (m, v): (Vec<_>, Vec<_>) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { config, t: 0, m, v }
    }

    pub fn for_params(params: &[&Tensor<f32>], config: AdamConfig) -> Self {
        Self::new(params.iter().map(|p| p.numel()), config)
    }

    pub fn slots(&self) -> usize {
        self.m.len()
    }

    /// Update every parameter. Each slot must have a gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<f32>], grads: &[Option<Vec<f32>>]) -> Result<()> {
        let all = vec![true; params.len()];
        self.step_masked(params, grads, &all)
    }

    /// Update only slots with `active[i]`; inactive slots keep their values
    /// and moments. Every active slot must have a gradient.
    pub fn step_masked(
        &mut self,
        params: &mut [&mut Tensor<f32>],
        grads: &[Option<Vec<f32>>],
        active: &[bool],
    ) -> Result<()> {
        if params.len() != self.slots() || grads.len() != self.slots() || active.len() != self.slots() {
            return Err(Error::Contract(format!(
                "adam: {} slots but got {} params / {} grads / {} flags",
                self.slots(),
                params.len(),
                grads.len(),
                active.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if !active[i] {
                continue;
            }
            match &grads[i] {
                None => return Err(Error::Contract(format!("adam: missing gradient for slot {i}"))),
                Some(g) if g.len() != p.numel() || self.m[i].len() != p.numel() => {
                    return Err(Error::Contract(format!("adam: size mismatch in slot {i}")))
                }
                _ => {}
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2) = (beta1 as f32, beta2 as f32);
        let step_size = (lr / bc1) as f32;
        let inv_sqrt_bc2 = (1.0 / bc2.sqrt()) as f32;
        let eps = eps as f32;

        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = grads[i].as_ref().filter(|_| active[i]) else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
