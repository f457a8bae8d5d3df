//! Parameter update rules: plain SGD and Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Per-parameter Adam moments plus the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| p.zeros_like()).collect(),
            v: params.iter().map(|p| p.zeros_like()).collect(),
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &[&Tensor]) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params)),
        }
    }

    /// Apply one step to every (param, grad) pair, in order. For Adam the
    /// shared step counter advances once per call.
    pub fn step(&mut self, params: &mut [(String, &mut Tensor)], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!(
                "optimizer: {} params vs {} grads",
                params.len(),
                grads.len()
            )));
        }
        match self {
            Optimizer::Sgd => {
                for ((name, p), g) in params.iter_mut().zip(grads) {
                    sgd_step(p, g, lr).map_err(|e| annotate(e, name))?;
                }
            }
            Optimizer::Adam(state) => {
                state.t += 1;
                let t = state.t;
                for (i, ((name, p), g)) in params.iter_mut().zip(grads).enumerate() {
                    adam_step_at(p, g, &mut state.m[i], &mut state.v[i], t, state.beta1, state.beta2, state.eps, lr)
                        .map_err(|e| annotate(e, name))?;
                }
            }
        }
        Ok(())
    }
}

fn annotate(e: Error, name: &str) -> Error {
    match e {
        Error::Shape(msg) => Error::Shape(format!("{name}: {msg}")),
        Error::Data(msg) => Error::Data(format!("{name}: {msg}")),
        other => other,
    }
}

/// param ← param − lr·grad.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    check_pair(param, grad)?;
    for (p, g) in param.data.iter_mut().zip(&grad.data) {
        *p -= lr * g;
    }
    Ok(())
}

/// One bias-corrected Adam step with an explicit step counter `t` (already
/// incremented for this step).
#[allow(clippy::too_many_arguments)]
pub fn adam_step_at(
    param: &mut Tensor,
    grad: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
) -> Result<()> {
    check_pair(param, grad)?;
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..param.data.len() {
        let g = grad.data[i];
        m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g;
        v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g * g;
        let m_hat = m.data[i] / bc1;
        let v_hat = v.data[i] / bc2;
        param.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

fn check_pair(param: &Tensor, grad: &Tensor) -> Result<()> {
    if param.shape != grad.shape {
        return Err(Error::Shape(format!(
            "param {:?} vs grad {:?}",
            param.shape, grad.shape
        )));
    }
    if !grad.is_finite() {
        return Err(Error::Data("non-finite gradient".into()));
    }
    Ok(())
}
