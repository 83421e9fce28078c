use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            _ => Err(Error::Invalid(format!("unknown optimizer '{}'", s))),
        }
    }
}

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;
const MOMENTUM: f32 = 0.9;

#[derive(Debug, Default)]
struct Slot {
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Adam or momentum SGD over named parameters, with per-name state.
#[derive(Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f32,
    steps: i32,
    state: HashMap<String, Slot>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f32) -> Self {
        Self {
            kind,
            lr,
            steps: 0,
            state: HashMap::new(),
        }
    }

    pub fn lr(&self) -> f32 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f32) {
        self.lr = lr;
    }

    /// Applies one update to every parameter that holds a gradient, using
    /// `grad · grad_scale`. Parameters without a gradient slot are untouched.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Tensor)>,
        grad_scale: f32,
    ) {
        self.step_with(params, grad_scale, |_| 1.0);
    }

    /// Like [`Optimizer::step`], with the learning rate of each parameter
    /// multiplied by `lr_scale(name)`.
    pub fn step_with<'a>(
        &mut self,
        params: impl IntoIterator<Item = (String, &'a mut Tensor)>,
        grad_scale: f32,
        lr_scale: impl Fn(&str) -> f32,
    ) {
        self.steps += 1;
        let (bc1, bc2) = (1.0 - BETA1.powi(self.steps), 1.0 - BETA2.powi(self.steps));
        for (name, p) in params {
            let Some(grad) = p.grad().map(|g| g.to_vec()) else {
                continue;
            };
            let lr = self.lr * lr_scale(&name);
            let slot = self.state.entry(name).or_default();
            if slot.m.len() != grad.len() {
                slot.m = vec![0.0; grad.len()];
                slot.v = vec![0.0; grad.len()];
            }
            let data = p.data_mut();
            match self.kind {
                OptimizerKind::Adam => {
                    for i in 0..grad.len() {
                        let g = grad[i] * grad_scale;
                        slot.m[i] = BETA1 * slot.m[i] + (1.0 - BETA1) * g;
                        slot.v[i] = BETA2 * slot.v[i] + (1.0 - BETA2) * g * g;
                        let m_hat = slot.m[i] / bc1;
                        let v_hat = slot.v[i] / bc2;
                        data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                    }
                }
                OptimizerKind::Sgd => {
                    for i in 0..grad.len() {
                        let g = grad[i] * grad_scale;
                        slot.m[i] = MOMENTUM * slot.m[i] + g;
                        data[i] -= lr * slot.m[i];
                    }
                }
            }
        }
    }
}
