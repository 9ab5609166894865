//! AdamW with an optional linear warmup.

use serde::{Deserialize, Serialize};

use crate::detector::Params;

/// Learning-rate multiplier per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Constant,
    /// Linear ramp over `warmup_steps`, then linear decay to zero at `total_steps`.
    WarmupLinear {
        warmup_steps: usize,
        total_steps: usize,
    },
}

impl Schedule {
    pub fn warmup(total_steps: usize, fraction: f64) -> Self {
        let warmup_steps = ((total_steps as f64 * fraction).ceil() as usize).max(1);
        Schedule::WarmupLinear {
            warmup_steps,
            total_steps: total_steps.max(warmup_steps),
        }
    }

    /// Multiplier for the zero-based `step`.
    pub fn factor(&self, step: usize) -> f64 {
        match *self {
            Schedule::Constant => 1.0,
            Schedule::WarmupLinear {
                warmup_steps,
                total_steps,
            } => {
                if step < warmup_steps {
                    (step + 1) as f64 / warmup_steps as f64
                } else {
                    let remaining = total_steps.saturating_sub(step) as f64;
                    let span = (total_steps - warmup_steps).max(1) as f64;
                    (remaining / span).clamp(0.0, 1.0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to weight matrices only.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

// spv.weight, mip.weight, head.weight
const DECAYED: [bool; 6] = [true, false, true, false, true, false];

impl AdamW {
    pub fn new(config: AdamWConfig, params: &Params) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|(_, d, _)| vec![0.0; d.len()])
                .collect()
        };
        AdamW {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let grads = grads.tensors();
        for (k, p) in params.slices_mut().into_iter().enumerate() {
            let g = grads[k].1;
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                if DECAYED[k] {
                    p[i] -= lr * c.weight_decay * p[i];
                }
                p[i] -= lr * update;
            }
        }
    }
}
