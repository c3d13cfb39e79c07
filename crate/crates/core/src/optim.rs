//! First-order optimizers acting on the gradient buffers of a [`ParamSet`].

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{ManError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = ManError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(ManError::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || params.ids().map(|id| vec![0.0; params.get(id).len()]).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

fn check_finite(params: &ParamSet) -> Result<()> {
    for id in params.ids() {
        if let Some(g) = params.get(id).grad() {
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(ManError::NonFinite(format!(
                    "gradient of {}[{i}] is {}",
                    params.name(id),
                    g[i]
                )));
            }
        }
    }
    Ok(())
}

/// One bias-corrected Adam update using the gradients stored in `params`.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    check_finite(params)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let tensor = params.get_mut(id);
        let Some(g) = tensor.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        let (m, v) = (&mut state.m[id.index()], &mut state.v[id.index()]);
        for (i, p) in tensor.values_mut().iter_mut().enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// `p ← p − lr·g` for every parameter with a gradient buffer.
pub fn sgd_step(params: &mut ParamSet, learning_rate: f64) -> Result<()> {
    check_finite(params)?;
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let tensor = params.get_mut(id);
        let Some(g) = tensor.grad().map(<[f64]>::to_vec) else {
            continue;
        };
        for (p, gi) in tensor.values_mut().iter_mut().zip(&g) {
            *p -= learning_rate * gi;
        }
    }
    Ok(())
}

/// Optimizer selected by configuration.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam { config: AdamConfig, state: AdamState },
    Sgd { learning_rate: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, config: AdamConfig, params: &ParamSet) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam {
                config,
                state: AdamState::new(params),
            },
            OptimizerKind::Sgd => Optimizer::Sgd {
                learning_rate: config.learning_rate,
            },
        }
    }

    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        match self {
            Optimizer::Adam { config, state } => adam_step(params, state, config),
            Optimizer::Sgd { learning_rate } => sgd_step(params, *learning_rate),
        }
    }
}
