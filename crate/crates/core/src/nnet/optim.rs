use serde::{Deserialize, Serialize};

use super::mlp::{Grads, Mlp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Whether a step climbs or descends the objective whose gradient is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Ascent,
    Descent,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Ascent => 1.0,
            Direction::Descent => -1.0,
        }
    }
}

/// Plain gradient steps or Adam (β₁ = 0.9, β₂ = 0.999, ε = 1e-8).
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    first: Option<Grads>,
    second: Option<Grads>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: None,
            second: None,
        }
    }

    pub fn sgd() -> Self {
        Self::new(OptimizerKind::Sgd)
    }

    pub fn adam() -> Self {
        Self::new(OptimizerKind::Adam)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Grads, lr: f64, direction: Direction) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        self.step += 1;
        let sign = direction.sign();
        match self.kind {
            OptimizerKind::Sgd => net.add_scaled(grads, sign * lr),
            OptimizerKind::Adam => {
                let m = self.first.get_or_insert_with(|| Grads::zeros_like(net));
                let v = self.second.get_or_insert_with(|| Grads::zeros_like(net));
                let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
                let c1 = 1.0 - b1.powi(self.step as i32);
                let c2 = 1.0 - b2.powi(self.step as i32);
                for (((layer, g), m), v) in net
                    .layers_mut()
                    .iter_mut()
                    .zip(&grads.layers)
                    .zip(&mut m.layers)
                    .zip(&mut v.layers)
                {
                    ndarray::Zip::from(&mut layer.weight)
                        .and(&g.weight)
                        .and(&mut m.weight)
                        .and(&mut v.weight)
                        .for_each(|w, &g, m, v| adam_update(w, g, m, v, b1, b2, c1, c2, eps, sign * lr));
                    ndarray::Zip::from(&mut layer.bias)
                        .and(&g.bias)
                        .and(&mut m.bias)
                        .and(&mut v.bias)
                        .for_each(|w, &g, m, v| adam_update(w, g, m, v, b1, b2, c1, c2, eps, sign * lr));
                }
            }
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn adam_update(w: &mut f64, g: f64, m: &mut f64, v: &mut f64, b1: f64, b2: f64, c1: f64, c2: f64, eps: f64, lr: f64) {
    *m = b1 * *m + (1.0 - b1) * g;
    *v = b2 * *v + (1.0 - b2) * g * g;
    let mhat = *m / c1;
    let vhat = *v / c2;
    *w += lr * mhat / (vhat.sqrt() + eps);
}

/// One Adam descent step, returning the updated parameters.
pub fn adam_step(net: &Mlp, optimizer: &mut Optimizer, grads: &Grads, lr: f64) -> Result<Mlp> {
    let mut next = net.clone();
    optimizer.step(&mut next, grads, lr, Direction::Descent)?;
    Ok(next)
}
