use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::config::Section;
use crate::error::{Error, Result};

/// Plain minibatch SGD with optional heavy-ball momentum and a fixed number
/// of epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub momentum: f64,
}

impl SgdConfig {
    pub fn logreg_default() -> Self {
        SgdConfig {
            epochs: 20,
            learning_rate: 0.1,
            batch_size: 32,
            l2: 1e-4,
            momentum: 0.0,
        }
    }

    pub(crate) fn validate(&self, who: &str) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid(format!("{who}: epochs must be at least 1")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("{who}: learning_rate must be positive")));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid(format!("{who}: batch_size must be at least 1")));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::invalid(format!("{who}: l2 must be non-negative")));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("{who}: momentum must lie in [0, 1)")));
        }
        Ok(())
    }

    pub(crate) fn from_section<'a>(s: &mut Section<'a>, prefix: &str, default: SgdConfig) -> Result<Self> {
        let [epochs, lr, batch, l2, momentum] = if prefix.is_empty() {
            ["epochs", "learning_rate", "batch_size", "l2", "momentum"]
        } else {
            ["base_epochs", "base_learning_rate", "base_batch_size", "base_l2", "base_momentum"]
        };
        Ok(SgdConfig {
            epochs: s.usize_or(epochs, default.epochs)?,
            learning_rate: s.f64_or(lr, default.learning_rate)?,
            batch_size: s.usize_or(batch, default.batch_size)?,
            l2: s.f64_or(l2, default.l2)?,
            momentum: s.f64_or(momentum, default.momentum)?,
        })
    }
}

/// A differentiable training objective over `n` samples.
pub(crate) trait Objective {
    /// Writes the gradient of the mean batch loss (regulariser included) into
    /// `grad` and returns that loss.
    fn batch_gradient(&self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> f64;
}

pub(crate) fn minimize<O: Objective>(
    objective: &O,
    params: &mut [f64],
    n_samples: usize,
    cfg: &SgdConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut grad = vec![0.0; params.len()];
    let mut velocity = vec![0.0; if cfg.momentum > 0.0 { params.len() } else { 0 }];
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for batch in order.chunks(cfg.batch_size) {
            let loss = objective.batch_gradient(params, batch, &mut grad);
            if !loss.is_finite() {
                return Err(Error::invalid("training diverged (non-finite loss)"));
            }
            if velocity.is_empty() {
                for (p, g) in params.iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * g;
                }
            } else {
                for ((p, g), v) in params.iter_mut().zip(&grad).zip(velocity.iter_mut()) {
                    *v = cfg.momentum * *v + g;
                    *p -= cfg.learning_rate * *v;
                }
            }
        }
    }
    Ok(())
}

/// In-place softmax; returns `log(sum(exp(logits)))`.
pub(crate) fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
    max + sum.ln()
}

#[cfg(test)]
pub(crate) mod gradcheck {
    use super::Objective;

    /// Largest relative error between the analytic gradient and central
    /// differences, with `|a - n| / max(|a|, |n|, 1e-6)`.
    pub fn max_relative_error<O: Objective>(obj: &O, params: &[f64], batch: &[usize], step: f64) -> f64 {
        let mut grad = vec![0.0; params.len()];
        obj.batch_gradient(params, batch, &mut grad);
        let mut scratch = vec![0.0; params.len()];
        let mut p = params.to_vec();
        let mut worst = 0.0f64;
        for k in 0..params.len() {
            p[k] = params[k] + step;
            let up = obj.batch_gradient(&p, batch, &mut scratch);
            p[k] = params[k] - step;
            let down = obj.batch_gradient(&p, batch, &mut scratch);
            p[k] = params[k];
            let numeric = (up - down) / (2.0 * step);
            let denom = grad[k].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((grad[k] - numeric).abs() / denom);
        }
        worst
    }
}
