//! First-order optimizers over flat parameter lists.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Result, VinceError};

fn check_lengths(params: &[Tensor], grads: &[Tensor], state: &[Vec<f32>]) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(VinceError::dim(format!(
            "optimizer got {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state[i].len() != p.len() {
            return Err(VinceError::dim(format!(
                "parameter {i}: shape {:?}, grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f32,
    pub weight_decay: f32,
}

/// SGD with heavy-ball momentum and L2 weight decay folded into the gradient:
/// `v ← μv + (∇ + λp)`, `p ← p − lr·v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(config: SgdConfig, params: &[Tensor]) -> Self {
        Self {
            config,
            velocity: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn with_velocity(config: SgdConfig, velocity: Vec<Vec<f32>>) -> Self {
        Self { config, velocity }
    }

    pub fn velocity(&self) -> &[Vec<f32>] {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f32) -> Result<()> {
        check_lengths(params, grads, &self.velocity)?;
        let SgdConfig {
            momentum,
            weight_decay,
        } = self.config;
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((w, &dw), vel) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                let d = dw + weight_decay * *w;
                *vel = momentum * *vel + d;
                *w -= lr * *vel;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
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

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
    steps: u32,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            config,
            first: zeros(),
            second: zeros(),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        check_lengths(params, grads, &self.first)?;
        self.steps += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.steps as i32);
        let bias2 = 1.0 - beta2.powi(self.steps as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (k, (w, &dw)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * dw;
                v[k] = beta2 * v[k] + (1.0 - beta2) * dw * dw;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
