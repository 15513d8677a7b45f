//! AdaBelief with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::cells::{is_trainable, CellKind, StackConfig, StackParams, ALIF_TAU_MIN};
use crate::error::{LscError, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 3.14e-3;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaBeliefConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdaBeliefConfig {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-16,
        }
    }
}

/// Optimizer state for a fixed list of parameter slices.
#[derive(Debug, Clone)]
pub struct AdaBelief {
    config: AdaBeliefConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
}

impl AdaBelief {
    pub fn new(config: AdaBeliefConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), s: Vec::new() }
    }

    pub fn config(&self) -> &AdaBeliefConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every `(param, grad)` slot; slots must come in the same
    /// order and sizes on every call.
    pub fn step_slices(&mut self, slots: &mut [(&mut [f64], &[f64])]) -> Result<()> {
        if self.m.is_empty() {
            self.m = slots.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.s = self.m.clone();
        }
        if slots.len() != self.m.len() || slots.iter().zip(&self.m).any(|((p, g), m)| p.len() != m.len() || g.len() != m.len()) {
            return Err(LscError::Dimension("optimizer slots changed shape between steps".into()));
        }
        if slots.iter().any(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            return Err(LscError::NonFinite("non-finite gradient".into()));
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), s) in slots.iter_mut().zip(&mut self.m).zip(&mut self.s) {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                s[i] = c.beta2 * s[i] + (1.0 - c.beta2) * (gi - m[i]).powi(2) + c.eps;
                p[i] *= 1.0 - c.learning_rate * c.weight_decay;
                p[i] -= c.learning_rate * (m[i] / bc1) / ((s[i] / bc2).sqrt() + c.eps);
            }
        }
        Ok(())
    }

    /// Updates every trainable tensor of a stack (and its readout).
    pub fn step_stack(&mut self, config: &StackConfig, params: &mut StackParams, grads: &StackParams) -> Result<()> {
        let mut slots: Vec<(&mut [f64], &[f64])> = Vec::new();
        for ((spec, p), g) in config.layers.iter().zip(params.layers.iter_mut()).zip(&grads.layers) {
            for (name, m) in p.iter_mut() {
                if is_trainable(&spec.kind, name) {
                    slots.push((m.as_mut_slice(), g.get(name)?.as_slice()));
                }
            }
        }
        if let (Some(w), Some(g)) = (params.readout.as_mut(), grads.readout.as_ref()) {
            slots.push((w.as_mut_slice(), g.as_slice()));
        }
        self.step_slices(&mut slots)?;
        project_constraints(config, params);
        Ok(())
    }
}

/// Keeps ALIF time constants above [`ALIF_TAU_MIN`].
pub fn project_constraints(config: &StackConfig, params: &mut StackParams) {
    for (spec, p) in config.layers.iter().zip(params.layers.iter_mut()) {
        if let CellKind::Alif { .. } = spec.kind {
            for (name, m) in p.iter_mut() {
                if name.starts_with("tau_") {
                    m.as_mut_slice().iter_mut().for_each(|v| *v = v.max(ALIF_TAU_MIN));
                }
            }
        }
    }
}
