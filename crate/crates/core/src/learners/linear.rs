use rand::Rng;

use super::sgd::{minimize, softmax_in_place, Objective, SgdConfig};
use super::argmax_by;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// Per-feature z-scoring fitted on a training subset. Constant features keep
/// unit scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[&[f64]]) -> Self {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, inv_std }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(x).zip(&self.mean).zip(&self.inv_std) {
            *o = (v - m) * s;
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }
}

/// Multinomial logistic regression over standardised inputs. Parameters are
/// stored as `[W (classes x dim, row-major), b (classes)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel {
    scaler: Standardizer,
    n_classes: usize,
    dim: usize,
    params: Vec<f64>,
}

/// Softmax cross-entropy with L2 on the weight block.
pub(crate) struct SoftmaxObjective<'a> {
    pub x: &'a [f64],
    pub y: &'a [u32],
    pub dim: usize,
    pub n_classes: usize,
    pub l2: f64,
}

impl Objective for SoftmaxObjective<'_> {
    fn batch_gradient(&self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> f64 {
        let (d, c) = (self.dim, self.n_classes);
        let (w, b) = params.split_at(c * d);
        grad.fill(0.0);
        let mut probs = vec![0.0; c];
        let mut loss = 0.0;
        for &s in batch {
            let x = &self.x[s * d..(s + 1) * d];
            for k in 0..c {
                probs[k] = b[k] + dot(&w[k * d..(k + 1) * d], x);
            }
            let y = self.y[s] as usize;
            let logit_y = probs[y];
            loss += softmax_in_place(&mut probs) - logit_y;
            probs[y] -= 1.0;
            let (gw, gb) = grad.split_at_mut(c * d);
            for k in 0..c {
                let p = probs[k];
                gb[k] += p;
                for (g, xv) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                    *g += p * xv;
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        let mut reg = 0.0;
        if self.l2 > 0.0 {
            for (g, wv) in grad[..c * d].iter_mut().zip(w) {
                *g += self.l2 * wv;
                reg += wv * wv;
            }
        }
        loss * inv + 0.5 * self.l2 * reg
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearModel {
    pub fn fit(rows: &[&[f64]], labels: &[u32], n_classes: usize, cfg: &SgdConfig, seed: u64) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let dim = rows[0].len();
        let scaler = Standardizer::fit(rows);
        let mut x = vec![0.0; rows.len() * dim];
        for (r, out) in rows.iter().zip(x.chunks_exact_mut(dim)) {
            scaler.apply_into(r, out);
        }
        let mut rng = seed::rng(seed, &[stream::LEARNER]);
        let bound = (6.0 / (dim + n_classes) as f64).sqrt();
        let mut params: Vec<f64> = (0..n_classes * dim)
            .map(|_| rng.random_range(-bound..bound))
            .chain(std::iter::repeat_n(0.0, n_classes))
            .collect();
        let objective = SoftmaxObjective {
            x: &x,
            y: labels,
            dim,
            n_classes,
            l2: cfg.l2,
        };
        minimize(&objective, &mut params, rows.len(), cfg, &mut rng)?;
        Ok(LinearModel {
            scaler,
            n_classes,
            dim,
            params,
        })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let z = self.scaler.apply(x);
        let (w, b) = self.params.split_at(self.n_classes * self.dim);
        (0..self.n_classes)
            .map(|k| b[k] + dot(&w[k * self.dim..(k + 1) * self.dim], &z))
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> u32 {
        argmax_by(&self.scores(x)) as u32
    }
}
