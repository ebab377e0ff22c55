use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerMode {
    Sgd,
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// A named parameter buffer and its gradient for one update.
pub struct ParamBlock<'a> {
    pub name: &'static str,
    pub values: &'a mut [f64],
    pub grads: &'a [f64],
}

impl<'a> ParamBlock<'a> {
    pub fn new(name: &'static str, values: &'a mut [f64], grads: &'a [f64]) -> Self {
        ParamBlock { name, values, grads }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Moments {
    name: String,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// SGD with L2 weight decay, or Adam with decoupled weight decay.
///
/// Adam moments are keyed by block position; every call must pass the same
/// blocks in the same order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizerState {
    pub mode: OptimizerMode,
    pub learning_rate: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<Moments>,
}

impl OptimizerState {
    pub fn new(mode: OptimizerMode, learning_rate: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(weight_decay >= 0.0 && weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight decay must be >= 0, got {weight_decay}")));
        }
        Ok(OptimizerState {
            mode,
            learning_rate,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn apply_update(&mut self, blocks: &mut [ParamBlock<'_>]) -> Result<()> {
        for block in blocks.iter() {
            if block.values.len() != block.grads.len() {
                return Err(Error::Dimension {
                    what: block.name,
                    expected: block.values.len(),
                    got: block.grads.len(),
                });
            }
            if let Some(pos) = block.grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient in parameter block `{}` at index {pos}",
                    block.name
                )));
            }
        }
        self.step += 1;
        let (lr, wd) = (self.learning_rate, self.weight_decay);
        match self.mode {
            OptimizerMode::Sgd => {
                for block in blocks.iter_mut() {
                    for (x, g) in block.values.iter_mut().zip(block.grads) {
                        *x -= lr * (g + wd * *x);
                    }
                }
            }
            OptimizerMode::Adam => {
                if self.moments.is_empty() {
                    self.moments = blocks
                        .iter()
                        .map(|b| Moments {
                            name: b.name.to_string(),
                            m: vec![0.0; b.values.len()],
                            v: vec![0.0; b.values.len()],
                        })
                        .collect();
                }
                if self.moments.len() != blocks.len() {
                    return Err(Error::Dimension {
                        what: "optimizer blocks",
                        expected: self.moments.len(),
                        got: blocks.len(),
                    });
                }
                let t = self.step as i32;
                let c1 = 1.0 - BETA1.powi(t);
                let c2 = 1.0 - BETA2.powi(t);
                for (block, mom) in blocks.iter_mut().zip(&mut self.moments) {
                    if mom.name != block.name || mom.m.len() != block.values.len() {
                        return Err(Error::Dimension {
                            what: block.name,
                            expected: mom.m.len(),
                            got: block.values.len(),
                        });
                    }
                    for (((x, &g), m), v) in block
                        .values
                        .iter_mut()
                        .zip(block.grads)
                        .zip(&mut mom.m)
                        .zip(&mut mom.v)
                    {
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        let step = (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                        *x -= lr * (step + wd * *x);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Free-function form of [`OptimizerState::apply_update`].
pub fn apply_update(state: &mut OptimizerState, blocks: &mut [ParamBlock<'_>]) -> Result<()> {
    state.apply_update(blocks)
}
