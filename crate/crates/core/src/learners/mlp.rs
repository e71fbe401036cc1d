use rand::Rng;

use super::linear::{dot, Standardizer};
use super::sgd::{minimize, softmax_in_place, Objective};
use super::{argmax_by, MlpSpec};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// One hidden ReLU layer, softmax output. Parameters are laid out as
/// `[W1 (hidden x dim), b1 (hidden), W2 (classes x hidden), b2 (classes)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    scaler: Standardizer,
    dim: usize,
    hidden: usize,
    n_classes: usize,
    params: Vec<f64>,
}

/// The frozen hidden layer of a trained [`MlpModel`]: raw features to
/// post-ReLU activations.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationMap {
    scaler: Standardizer,
    dim: usize,
    hidden: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl RepresentationMap {
    pub fn output_dim(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let z = self.scaler.apply(x);
        hidden_layer(&self.weights, &self.bias, &z)
    }
}

fn hidden_layer(w1: &[f64], b1: &[f64], z: &[f64]) -> Vec<f64> {
    let d = z.len();
    b1.iter()
        .enumerate()
        .map(|(h, b)| (b + dot(&w1[h * d..(h + 1) * d], z)).max(0.0))
        .collect()
}

struct Layout {
    dim: usize,
    hidden: usize,
    n_classes: usize,
}

impl Layout {
    fn w1(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.dim
    }
    fn b1(&self) -> std::ops::Range<usize> {
        let s = self.hidden * self.dim;
        s..s + self.hidden
    }
    fn w2(&self) -> std::ops::Range<usize> {
        let s = self.b1().end;
        s..s + self.n_classes * self.hidden
    }
    fn b2(&self) -> std::ops::Range<usize> {
        let s = self.w2().end;
        s..s + self.n_classes
    }
    fn len(&self) -> usize {
        self.b2().end
    }
}

struct MlpObjective<'a> {
    x: &'a [f64],
    y: &'a [u32],
    layout: Layout,
    l2: f64,
}

impl Objective for MlpObjective<'_> {
    fn batch_gradient(&self, params: &[f64], batch: &[usize], grad: &mut [f64]) -> f64 {
        let l = &self.layout;
        let (d, h, c) = (l.dim, l.hidden, l.n_classes);
        let (w1, b1, w2, b2) = (&params[l.w1()], &params[l.b1()], &params[l.w2()], &params[l.b2()]);
        grad.fill(0.0);
        let mut pre = vec![0.0; h];
        let mut act = vec![0.0; h];
        let mut out = vec![0.0; c];
        let mut delta_h = vec![0.0; h];
        let mut loss = 0.0;
        for &s in batch {
            let x = &self.x[s * d..(s + 1) * d];
            for j in 0..h {
                pre[j] = b1[j] + dot(&w1[j * d..(j + 1) * d], x);
                act[j] = pre[j].max(0.0);
            }
            for k in 0..c {
                out[k] = b2[k] + dot(&w2[k * h..(k + 1) * h], &act);
            }
            let y = self.y[s] as usize;
            let logit_y = out[y];
            loss += softmax_in_place(&mut out) - logit_y;
            out[y] -= 1.0;

            delta_h.fill(0.0);
            {
                let (gw2, gb2) = grad[l.w2().start..l.b2().end].split_at_mut(c * h);
                for k in 0..c {
                    let dk = out[k];
                    gb2[k] += dk;
                    let row = &w2[k * h..(k + 1) * h];
                    for j in 0..h {
                        gw2[k * h + j] += dk * act[j];
                        delta_h[j] += dk * row[j];
                    }
                }
            }
            let (gw1, gb1) = grad[l.w1().start..l.b1().end].split_at_mut(h * d);
            for j in 0..h {
                if pre[j] <= 0.0 {
                    continue;
                }
                let dj = delta_h[j];
                gb1[j] += dj;
                for (g, xv) in gw1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *g += dj * xv;
                }
            }
        }
        let inv = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        let mut reg = 0.0;
        if self.l2 > 0.0 {
            for range in [l.w1(), l.w2()] {
                for (g, w) in grad[range.clone()].iter_mut().zip(&params[range]) {
                    *g += self.l2 * w;
                    reg += w * w;
                }
            }
        }
        loss * inv + 0.5 * self.l2 * reg
    }
}

impl MlpModel {
    pub fn fit(data: &LabeledDataset, subset: &[usize], n_classes: usize, spec: &MlpSpec, seed: u64) -> Result<Self> {
        if spec.hidden_width == 0 {
            return Err(Error::invalid("mlp: hidden_width must be at least 1"));
        }
        if subset.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let dim = data.dim();
        let rows: Vec<&[f64]> = subset.iter().map(|&i| data.features(i)).collect();
        let labels: Vec<u32> = subset.iter().map(|&i| data.label(i)).collect();
        let scaler = Standardizer::fit(&rows);
        let mut x = vec![0.0; rows.len() * dim];
        for (r, out) in rows.iter().zip(x.chunks_exact_mut(dim)) {
            scaler.apply_into(r, out);
        }
        let layout = Layout {
            dim,
            hidden: spec.hidden_width,
            n_classes,
        };
        let params = init_params(&layout, seed);
        let mut params = params;
        let objective = MlpObjective {
            x: &x,
            y: &labels,
            layout,
            l2: spec.sgd.l2,
        };
        let mut rng = seed::rng(seed, &[stream::LEARNER, 1]);
        minimize(&objective, &mut params, rows.len(), &spec.sgd, &mut rng)?;
        Ok(MlpModel {
            scaler,
            dim,
            hidden: spec.hidden_width,
            n_classes,
            params,
        })
    }

    fn layout(&self) -> Layout {
        Layout {
            dim: self.dim,
            hidden: self.hidden,
            n_classes: self.n_classes,
        }
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let z = self.scaler.apply(x);
        let act = hidden_layer(&self.params[l.w1()], &self.params[l.b1()], &z);
        let (w2, b2) = (&self.params[l.w2()], &self.params[l.b2()]);
        (0..self.n_classes)
            .map(|k| b2[k] + dot(&w2[k * self.hidden..(k + 1) * self.hidden], &act))
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> u32 {
        argmax_by(&self.scores(x)) as u32
    }

    pub fn representation(&self) -> RepresentationMap {
        let l = self.layout();
        RepresentationMap {
            scaler: self.scaler.clone(),
            dim: self.dim,
            hidden: self.hidden,
            weights: self.params[l.w1()].to_vec(),
            bias: self.params[l.b1()].to_vec(),
        }
    }
}

fn init_params(l: &Layout, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed, &[stream::LEARNER, 0]);
    let mut params = vec![0.0; l.len()];
    let b1 = (6.0 / (l.dim + l.hidden) as f64).sqrt();
    for p in &mut params[l.w1()] {
        *p = rng.random_range(-b1..b1);
    }
    let b2 = (6.0 / (l.hidden + l.n_classes) as f64).sqrt();
    for p in &mut params[l.w2()] {
        *p = rng.random_range(-b2..b2);
    }
    params
}

/// Trains an MLP once on all of `full_train` and returns its hidden layer.
pub fn fit_representation(spec: &MlpSpec, full_train: &LabeledDataset, seed: u64) -> Result<RepresentationMap> {
    if full_train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let all: Vec<usize> = (0..full_train.len()).collect();
    Ok(MlpModel::fit(full_train, &all, full_train.n_classes(), spec, seed)?.representation())
}

#[cfg(test)]
mod tests {
    use super::super::sgd::gradcheck::max_relative_error;
    use super::super::{ConstantRule, Learner, LearnerSpec, SgdConfig};
    use super::*;
    use crate::dataset::{generate_longtail, SyntheticSpec};
    use rand_distr::StandardNormal;

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = seed::rng(21, &[]);
        let layout = Layout { dim: 3, hidden: 6, n_classes: 4 };
        let x: Vec<f64> = (0..5 * 3).map(|_| rng.sample(StandardNormal)).collect();
        let y = vec![1, 0, 3, 2, 1];
        let n_params = layout.len();
        let obj = MlpObjective { x: &x, y: &y, layout, l2: 0.01 };
        let params: Vec<f64> = (0..n_params).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
        let err = max_relative_error(&obj, &params, &[0, 1, 2, 3, 4], 1e-5);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    fn small_data() -> crate::dataset::LabeledDataset {
        let spec = SyntheticSpec {
            n_subpop: 12,
            n_classes: 3,
            n_train: 120,
            n_test: 10,
            dim: 4,
            noise_rate: 0.0,
            seed: 2,
            ..SyntheticSpec::default()
        };
        generate_longtail(&spec).unwrap().0
    }

    #[test]
    fn representation_shape_and_determinism() {
        let data = small_data();
        let spec = MlpSpec { hidden_width: 9, ..MlpSpec::default() };
        let a = fit_representation(&spec, &data, 4).unwrap();
        let b = fit_representation(&spec, &data, 4).unwrap();
        assert_eq!(a.output_dim(), 9);
        for i in 0..data.len() {
            let (ra, rb) = (a.apply(data.features(i)), b.apply(data.features(i)));
            assert_eq!(ra.len(), 9);
            assert_eq!(ra, rb);
        }
        let bad = MlpSpec { hidden_width: 0, ..MlpSpec::default() };
        assert!(matches!(fit_representation(&bad, &data, 4), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn frozen_head_beats_majority_baseline() {
        let data = small_data();
        let all: Vec<usize> = (0..data.len()).collect();
        let frozen = LearnerSpec::FrozenLinear {
            base: MlpSpec { hidden_width: 16, ..MlpSpec::default() },
            head: SgdConfig::logreg_default(),
        };
        let learner = Learner::new(&frozen, &data, 8).unwrap();
        let acc = learner.train(&data, &all, 1).unwrap().accuracy(&data);
        let majority = Learner::new(&LearnerSpec::Constant(ConstantRule::Majority), &data, 0).unwrap();
        let base = majority.train(&data, &all, 0).unwrap().accuracy(&data);
        assert!(acc >= base, "{acc} < {base}");
    }

    #[test]
    fn mlp_fits_its_training_set() {
        let data = small_data();
        let all: Vec<usize> = (0..data.len()).collect();
        let model = MlpModel::fit(&data, &all, data.n_classes(), &MlpSpec::default(), 3).unwrap();
        assert!(all.iter().filter(|&&i| model.predict(data.features(i)) == data.label(i)).count() >= 115);
    }
}
