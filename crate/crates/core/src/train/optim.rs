use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moments per parameter array plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

impl AdamW {
    /// One update of every array with a gradient; `None` entries are left untouched.
    ///
    /// `names` only labels the error for a non-finite gradient.
    pub fn step(
        &self,
        params: &mut [Tensor],
        grads: &[Option<Tensor>],
        state: &mut AdamState,
        lr: f64,
        names: &[String],
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(Error::Contract("optimizer state does not match parameters".into()));
        }
        for (k, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != params[k].shape() {
                    return Err(Error::Shape {
                        context: "AdamW::step",
                        left: params[k].shape().to_vec(),
                        right: g.shape().to_vec(),
                    });
                }
                if !g.is_finite() {
                    let name = names.get(k).cloned().unwrap_or_else(|| k.to_string());
                    return Err(Error::NonFiniteGradient { name });
                }
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let w = params[k].data_mut();
            let m = state.m[k].data_mut();
            let v = state.v[k].data_mut();
            for i in 0..w.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g.data()[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g.data()[i] * g.data()[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * w[i]);
            }
        }
        Ok(())
    }
}

/// `factor·prev + (1 − factor)·new`; the first observation is taken as is.
pub fn smooth_validation(prev: Option<f64>, new: f64, factor: f64) -> f64 {
    match prev {
        Some(p) => factor * p + (1.0 - factor) * new,
        None => new,
    }
}

/// Counts evaluations without relative improvement and fires after `patience`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub patience: usize,
    pub threshold: f64,
    best: Option<f64>,
    waited: usize,
}

impl Plateau {
    pub const DEFAULT_THRESHOLD: f64 = 1e-4;

    pub fn new(patience: usize) -> Self {
        Plateau {
            patience,
            threshold: Self::DEFAULT_THRESHOLD,
            best: None,
            waited: 0,
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    /// Record `value`; true when the patience just ran out (the counter then restarts).
    pub fn observe(&mut self, value: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(b) => value < b - self.threshold * b.abs(),
        };
        if improved {
            self.best = Some(value);
            self.waited = 0;
            return false;
        }
        self.waited += 1;
        if self.waited >= self.patience {
            self.waited = 0;
            true
        } else {
            false
        }
    }
}

/// Learning-rate halving (or other factor) on a validation plateau.
#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    plateau: Plateau,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            lr,
            factor,
            plateau: Plateau::new(patience),
        }
    }

    /// Feed one smoothed validation loss; returns true when the rate was decayed.
    pub fn observe(&mut self, value: f64) -> bool {
        let fire = self.plateau.observe(value);
        if fire {
            self.lr *= self.factor;
        }
        fire
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n` into train, validation and the remaining test indices.
pub fn split_dataset(n: usize, train: usize, val: usize, seed: u64) -> Result<Split> {
    if train + val > n {
        return Err(Error::Config(format!(
            "split of {train} train + {val} validation exceeds {n} structures"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(train + val);
    let val_part = order.split_off(train);
    Ok(Split {
        train: order,
        val: val_part,
        test,
    })
}
