//! Mixture-of-subpopulations generator with Zipf-distributed frequencies.
//!
//! Subpopulation `k` owns class `k mod C`, an isotropic unit-variance Gaussian
//! around its center, and a frequency proportional to `(k + 1)^(-s)`. Centers
//! are kept at least `cluster_sep` standard deviations apart.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

const MAX_REJECTIONS: usize = 10_000;
const CUBE_GROWTH: f64 = 1.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_subpop: usize,
    pub zipf_exponent: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub cluster_sep: f64,
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// The canonical benchmark configuration.
    fn default() -> Self {
        SyntheticSpec {
            n_subpop: 100,
            zipf_exponent: 1.0,
            n_train: 1000,
            n_test: 500,
            dim: 16,
            n_classes: 10,
            cluster_sep: 6.0,
            noise_rate: 0.02,
            seed: 17,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::invalid("n_classes must be at least 2"));
        }
        if self.n_subpop < self.n_classes {
            return Err(Error::invalid(format!(
                "n_subpop ({}) must be at least n_classes ({})",
                self.n_subpop, self.n_classes
            )));
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return Err(Error::invalid("zipf_exponent must be positive"));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::invalid("noise_rate must lie in [0, 1)"));
        }
        if !(self.cluster_sep > 0.0 && self.cluster_sep.is_finite()) {
            return Err(Error::invalid("cluster_sep must be positive"));
        }
        if self.dim == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(Error::invalid("dim, n_train and n_test must be positive"));
        }
        Ok(())
    }

    /// Class owned by subpopulation `k`.
    pub fn class_of_subpop(&self, k: usize) -> u32 {
        (k % self.n_classes) as u32
    }

    /// Number of training labels the generator flips.
    pub fn n_mislabeled(&self) -> usize {
        (self.noise_rate * self.n_train as f64).round() as usize
    }
}

/// Per-example annotations for generated data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub train_subpop: Vec<usize>,
    pub test_subpop: Vec<usize>,
    pub mislabeled: Vec<bool>,
    pub train_count_of_subpop: Vec<usize>,
}

impl GroundTruth {
    /// Training examples that are the only representative of their
    /// subpopulation.
    pub fn is_singleton(&self, i: usize) -> bool {
        self.train_count_of_subpop[self.train_subpop[i]] == 1
    }
}

/// Normalised Zipf weights: entry `k` (0-based) is proportional to
/// `(k + 1)^(-s)`.
pub fn zipf_frequencies(n: usize, s: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("zipf needs at least one atom"));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::invalid("zipf exponent must be positive"));
    }
    let weights: Vec<f64> = (1..=n).map(|k| (k as f64).powf(-s)).collect();
    // Smallest terms first keeps the normaliser accurate for long tails.
    let total = neumaier_sum(weights.iter().rev().copied());
    Ok(weights.into_iter().map(|w| w / total).collect())
}

fn neumaier_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn sample_centers(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(spec.seed, &[stream::CENTERS]);
    let min_sq = spec.cluster_sep * spec.cluster_sep;
    let mut side = spec.cluster_sep * (spec.n_subpop as f64).powf(1.0 / spec.dim as f64);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(spec.n_subpop);
    let mut rejections = 0;
    while centers.len() < spec.n_subpop {
        let candidate: Vec<f64> = (0..spec.dim).map(|_| rng.random::<f64>() * side).collect();
        let far_enough = centers.iter().all(|c| sq_dist(c, &candidate) >= min_sq);
        if far_enough {
            centers.push(candidate);
        } else {
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                side *= CUBE_GROWTH;
                rejections = 0;
            }
        }
    }
    centers
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn draw_examples(
    spec: &SyntheticSpec,
    centers: &[Vec<f64>],
    sampler: &WeightedIndex<f64>,
    rng: &mut ChaCha8Rng,
    count: usize,
) -> (Vec<usize>, Vec<f64>) {
    let mut subpop = Vec::with_capacity(count);
    let mut features = Vec::with_capacity(count * spec.dim);
    for _ in 0..count {
        let k = sampler.sample(rng);
        subpop.push(k);
        for &c in &centers[k] {
            let z: f64 = rng.sample(StandardNormal);
            features.push(c + z);
        }
    }
    (subpop, features)
}

/// Draws a train/test pair from the long-tailed mixture described by `spec`.
/// The output is a pure function of `spec`.
pub fn generate_longtail(spec: &SyntheticSpec) -> Result<(LabeledDataset, LabeledDataset, GroundTruth)> {
    spec.validate()?;
    let freqs = zipf_frequencies(spec.n_subpop, spec.zipf_exponent)?;
    let sampler = WeightedIndex::new(&freqs).map_err(|e| Error::invalid(e.to_string()))?;
    let centers = sample_centers(spec);

    let mut rng = seed::rng(spec.seed, &[stream::TRAIN_DRAW]);
    let (train_subpop, train_x) = draw_examples(spec, &centers, &sampler, &mut rng, spec.n_train);
    let mut rng = seed::rng(spec.seed, &[stream::TEST_DRAW]);
    let (test_subpop, test_x) = draw_examples(spec, &centers, &sampler, &mut rng, spec.n_test);

    let mut train_y: Vec<u32> = train_subpop.iter().map(|&k| spec.class_of_subpop(k)).collect();
    let test_y: Vec<u32> = test_subpop.iter().map(|&k| spec.class_of_subpop(k)).collect();

    let mut mislabeled = vec![false; spec.n_train];
    let mut rng = seed::rng(spec.seed, &[stream::LABEL_NOISE]);
    let mut flipped = rand::seq::index::sample(&mut rng, spec.n_train, spec.n_mislabeled()).into_vec();
    flipped.sort_unstable();
    let c = spec.n_classes as u32;
    for i in flipped {
        let shift = rng.random_range(1..c);
        train_y[i] = (train_y[i] + shift) % c;
        mislabeled[i] = true;
    }

    let mut train_count_of_subpop = vec![0; spec.n_subpop];
    for &k in &train_subpop {
        train_count_of_subpop[k] += 1;
    }

    let train_ids = (0..spec.n_train).map(|i| format!("train-{i:06}")).collect();
    let test_ids = (0..spec.n_test).map(|i| format!("test-{i:06}")).collect();
    let train = LabeledDataset::from_flat(train_ids, train_x, spec.dim, train_y, spec.n_classes)?;
    let test = LabeledDataset::from_flat(test_ids, test_x, spec.dim, test_y, spec.n_classes)?;
    let truth = GroundTruth {
        train_subpop,
        test_subpop,
        mislabeled,
        train_count_of_subpop,
    };
    Ok((train, test, truth))
}
