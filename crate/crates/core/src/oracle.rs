//! Ground-truth influence values for validating the estimator: exact
//! averages over every subset for deterministic learners, and Monte-Carlo
//! leave-one-out influence for any learner.

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::learners::{Learner, LearnerSpec};
use crate::seed::{self, stream};
use crate::trials::binomial;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OracleMethod {
    ExactEnumeration { subsets: u64 },
    MonteCarlo { repetitions: usize, stderr: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct OracleResult {
    pub value: f64,
    #[serde(flatten)]
    pub method: OracleMethod,
}

/// Which models the "without `i`" side of the influence is averaged over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExclusionArm {
    /// `E_{I ~ P([n]\{i}, m-1)} [h_{I∪{i}}(x)=y] - [h_I(x)=y]`: models
    /// without `i` see one example fewer.
    SizeMinusOne,
    /// Mean correctness over size-`m` subsets containing `i` minus mean over
    /// size-`m` subsets avoiding it, i.e. what the estimator converges to
    /// when only size-`m` models are trained. A side with no subsets counts
    /// as 1/2, as in the estimator.
    SizeM,
}

/// A labeled point at which influence is measured.
#[derive(Clone, Copy, Debug)]
pub struct Probe<'a> {
    pub x: &'a [f64],
    pub y: u32,
}

impl<'a> Probe<'a> {
    pub fn train(data: &'a LabeledDataset, i: usize) -> Self {
        Probe {
            x: data.features(i),
            y: data.label(i),
        }
    }
}

/// Visits every size-`k` subset of `pool` (sorted) in lexicographic order.
fn for_each_subset(pool: &[usize], k: usize, visit: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
    fn go(pool: &[usize], k: usize, chosen: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
        if chosen.len() == k {
            return visit(chosen);
        }
        let need = k - chosen.len();
        for s in 0..pool.len() {
            if pool.len() - s < need {
                break;
            }
            chosen.push(pool[s]);
            go(&pool[s + 1..], k, chosen, visit)?;
            chosen.pop();
        }
        Ok(())
    }
    go(pool, k, &mut Vec::with_capacity(k), visit)
}

fn check_exact_inputs(train: &LabeledDataset, learner: &LearnerSpec, m: usize, i: usize, required: u128, cap: u64) -> Result<()> {
    if !learner.is_deterministic() {
        return Err(Error::invalid(format!(
            "exact influence needs a deterministic learner, {} depends on its seed",
            learner.kind()
        )));
    }
    if m == 0 || m > train.len() {
        return Err(Error::invalid(format!("subset size m = {m} must lie in [1, n = {}]", train.len())));
    }
    if i >= train.len() {
        return Err(Error::invalid(format!("index {i} out of range for {} examples", train.len())));
    }
    if required > cap as u128 {
        return Err(Error::EnumerationCap { required, cap });
    }
    Ok(())
}

/// Exact subsampled influence of example `i` on `z` by training on every
/// relevant subset. Refuses if more than `cap` subsets would be needed.
pub fn exact_subsampled_influence(
    train: &LabeledDataset,
    z: Probe<'_>,
    learner: &LearnerSpec,
    m: usize,
    i: usize,
    arm: ExclusionArm,
    cap: u64,
) -> Result<OracleResult> {
    let n = train.len() as u64;
    let required = match arm {
        ExclusionArm::SizeMinusOne => binomial(n.saturating_sub(1), (m as u64).saturating_sub(1)),
        ExclusionArm::SizeM => binomial(n, m as u64),
    }
    .unwrap_or(u128::MAX);
    check_exact_inputs(train, learner, m, i, required, cap)?;
    let fitted = Learner::new(learner, train, 0)?;
    let correct = |subset: &[usize]| -> Result<bool> { Ok(fitted.train(train, subset, 0)?.predict(z.x) == z.y) };
    let others: Vec<usize> = (0..train.len()).filter(|&k| k != i).collect();

    let value = match arm {
        ExclusionArm::SizeMinusOne => {
            // Sum of per-subset differences, each in {-1, 0, 1}.
            let (mut total, mut count) = (0i64, 0u64);
            for_each_subset(&others, m - 1, &mut |rest| {
                let mut with_i = rest.to_vec();
                let pos = with_i.partition_point(|&k| k < i);
                with_i.insert(pos, i);
                total += correct(&with_i)? as i64 - correct(rest)? as i64;
                count += 1;
                Ok(())
            })?;
            total as f64 / count as f64
        }
        ExclusionArm::SizeM => {
            let (mut hits_in, mut n_in) = (0u64, 0u64);
            for_each_subset(&others, m - 1, &mut |rest| {
                let mut with_i = rest.to_vec();
                let pos = with_i.partition_point(|&k| k < i);
                with_i.insert(pos, i);
                hits_in += correct(&with_i)? as u64;
                n_in += 1;
                Ok(())
            })?;
            let (mut hits_out, mut n_out) = (0u64, 0u64);
            if m < train.len() {
                for_each_subset(&others, m, &mut |without| {
                    hits_out += correct(without)? as u64;
                    n_out += 1;
                    Ok(())
                })?;
            }
            let acc = |hits: u64, total: u64| if total == 0 { 0.5 } else { hits as f64 / total as f64 };
            acc(hits_in, n_in) - acc(hits_out, n_out)
        }
    };
    Ok(OracleResult {
        value,
        method: OracleMethod::ExactEnumeration { subsets: required as u64 },
    })
}

/// Exact subsampled influence of example `i` on itself.
pub fn exact_memorization(
    train: &LabeledDataset,
    learner: &LearnerSpec,
    m: usize,
    i: usize,
    arm: ExclusionArm,
    cap: u64,
) -> Result<OracleResult> {
    if i >= train.len() {
        return Err(Error::invalid(format!("index {i} out of range for {} examples", train.len())));
    }
    exact_subsampled_influence(train, Probe::train(train, i), learner, m, i, arm, cap)
}

/// Leave-one-out influence of `i` on `z`, averaged over `r` seeded trainings
/// on the full set and `r` on the set without `i`.
pub fn mc_loo_influence(
    train: &LabeledDataset,
    z: Probe<'_>,
    learner: &LearnerSpec,
    i: usize,
    r: usize,
    seed: u64,
) -> Result<OracleResult> {
    if r == 0 {
        return Err(Error::invalid("repetitions must be at least 1"));
    }
    if i >= train.len() {
        return Err(Error::invalid(format!("index {i} out of range for {} examples", train.len())));
    }
    let fitted = Learner::new(learner, train, seed)?;
    let all: Vec<usize> = (0..train.len()).collect();
    let without: Vec<usize> = all.iter().copied().filter(|&k| k != i).collect();
    let outcomes = (0..r as u64)
        .into_par_iter()
        .map(|k| {
            let with_i = fitted.train(train, &all, seed::derive(seed, &[stream::REPEAT, k, 0]))?.predict(z.x) == z.y;
            let without_i = fitted.train(train, &without, seed::derive(seed, &[stream::REPEAT, k, 1]))?.predict(z.x) == z.y;
            Ok((with_i, without_i))
        })
        .collect::<Result<Vec<_>>>()?;
    let a = outcomes.iter().filter(|o| o.0).count();
    let b = outcomes.iter().filter(|o| o.1).count();
    let (pa, pb) = (a as f64 / r as f64, b as f64 / r as f64);
    // Standard error of each Bernoulli mean with the unbiased variance.
    let var = |p: f64| if r > 1 { p * (1.0 - p) * r as f64 / (r as f64 - 1.0) } else { 0.0 };
    Ok(OracleResult {
        value: pa - pb,
        method: OracleMethod::MonteCarlo {
            repetitions: r,
            stderr: ((var(pa) + var(pb)) / r as f64).sqrt(),
        },
    })
}

/// Training budget of direct leave-one-out estimation next to the
/// subsampled estimator's.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LooCostReport {
    pub n: usize,
    pub target_stderr: f64,
    /// Repetitions per arm so that `sqrt(1/(4r) + 1/(4r)) ≤ target_stderr`
    /// for any outcome probabilities.
    pub repetitions_per_arm: u64,
    /// One shared full-data arm plus one held-out arm per example.
    pub loo_trainings: u128,
    pub subsampled_trainings: u64,
}

pub fn loo_cost(n: usize, target_stderr: f64, subsampled_t: u64) -> Result<LooCostReport> {
    if !(target_stderr > 0.0 && target_stderr.is_finite()) {
        return Err(Error::invalid("target stderr must be positive"));
    }
    let reps = (0.5 / (target_stderr * target_stderr)).ceil() as u64;
    Ok(LooCostReport {
        n,
        target_stderr,
        repetitions_per_arm: reps,
        loo_trainings: (n as u128 + 1) * reps as u128,
        subsampled_trainings: subsampled_t,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{ConstantRule, SgdConfig};
    use crate::trials::DEFAULT_ENUMERATION_CAP as CAP;

    fn colinear() -> LabeledDataset {
        LabeledDataset::unnamed((0..4).map(|x| vec![x as f64]).collect(), vec![0, 0, 1, 1], 2).unwrap()
    }

    const KNN: LearnerSpec = LearnerSpec::Knn { k: 1 };

    #[test]
    fn colinear_hand_enumeration() {
        // I ranges over {0}, {1}, {2}: differences 1, 1, 0.
        let train = colinear();
        let z = Probe { x: &[2.4], y: 1 };
        let r = exact_subsampled_influence(&train, z, &KNN, 2, 3, ExclusionArm::SizeMinusOne, CAP).unwrap();
        assert_eq!(r.value, 2.0 / 3.0);
        assert_eq!(r.method, OracleMethod::ExactEnumeration { subsets: 3 });
    }

    #[test]
    fn full_size_is_leave_one_out() {
        let train = colinear();
        let z = Probe { x: &[2.4], y: 1 };
        for i in 0..4 {
            let r = exact_subsampled_influence(&train, z, &KNN, 4, i, ExclusionArm::SizeMinusOne, CAP).unwrap();
            let learner = Learner::new(&KNN, &train, 0).unwrap();
            let all: Vec<usize> = (0..4).collect();
            let rest: Vec<usize> = (0..4).filter(|&k| k != i).collect();
            let direct = (learner.train(&train, &all, 0).unwrap().predict(z.x) == 1) as i32
                - (learner.train(&train, &rest, 0).unwrap().predict(z.x) == 1) as i32;
            assert_eq!(r.value, direct as f64);
        }
    }

    #[test]
    fn duplicate_lowers_memorization() {
        // Example 0 has an identical twin (1); the rest are far away and of
        // the other class. Without 0 it is still right iff the twin is drawn:
        // 4 of the C(5, 2) = 10 subsets.
        let rows = vec![vec![0.0], vec![0.0], vec![10.0], vec![11.0], vec![12.0], vec![13.0]];
        let train = LabeledDataset::unnamed(rows, vec![0, 0, 1, 1, 1, 1], 2).unwrap();
        let r = exact_memorization(&train, &KNN, 3, 0, ExclusionArm::SizeMinusOne, CAP).unwrap();
        assert_eq!(r.value, 0.6);
        assert!(r.value < 1.0);
    }

    #[test]
    fn mislabeled_singleton_is_fully_memorized() {
        let mut rows: Vec<Vec<f64>> = (0..7).map(|k| vec![k as f64 * 0.1, 0.0]).collect();
        rows.push(vec![30.0, 30.0]);
        let mut labels = vec![0; 7];
        labels.push(1);
        let train = LabeledDataset::unnamed(rows, labels, 2).unwrap();
        for arm in [ExclusionArm::SizeMinusOne, ExclusionArm::SizeM] {
            assert_eq!(exact_memorization(&train, &KNN, 5, 7, arm, CAP).unwrap().value, 1.0);
        }
    }

    #[test]
    fn constant_learner_is_zero() {
        let train = colinear();
        let spec = LearnerSpec::Constant(ConstantRule::Label(0));
        for arm in [ExclusionArm::SizeMinusOne, ExclusionArm::SizeM] {
            for i in 0..4 {
                assert_eq!(exact_memorization(&train, &spec, 2, i, arm, CAP).unwrap().value, 0.0);
            }
        }
        let r = mc_loo_influence(&train, Probe::train(&train, 0), &spec, 0, 5, 1).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn values_are_multiples_of_the_subset_count() {
        let train = LabeledDataset::unnamed(
            (0..8).map(|k| vec![(k * 37 % 11) as f64, (k * 5 % 7) as f64]).collect(),
            vec![0, 1, 2, 0, 1, 2, 0, 1],
            3,
        )
        .unwrap();
        let denom = binomial(7, 4).unwrap() as f64;
        for i in 0..8 {
            for j in 0..8 {
                let v = exact_subsampled_influence(&train, Probe::train(&train, j), &KNN, 5, i, ExclusionArm::SizeMinusOne, CAP)
                    .unwrap()
                    .value;
                assert!((-1.0..=1.0).contains(&v));
                assert_eq!((v * denom).round(), v * denom);
            }
        }
    }

    #[test]
    fn refusals() {
        let train = colinear();
        let z = Probe::train(&train, 0);
        let logreg = LearnerSpec::LogReg(SgdConfig::logreg_default());
        assert!(matches!(
            exact_subsampled_influence(&train, z, &logreg, 2, 0, ExclusionArm::SizeM, CAP),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            exact_subsampled_influence(&train, z, &KNN, 2, 0, ExclusionArm::SizeMinusOne, 2),
            Err(Error::EnumerationCap { required: 3, cap: 2 })
        ));
        assert!(exact_subsampled_influence(&train, z, &KNN, 5, 0, ExclusionArm::SizeM, CAP).is_err());
        assert!(exact_subsampled_influence(&train, z, &KNN, 1, 0, ExclusionArm::SizeMinusOne, CAP).is_err());
        assert!(mc_loo_influence(&train, z, &KNN, 0, 0, 1).is_err());
    }

    #[test]
    fn monte_carlo_deterministic_learner() {
        let train = colinear();
        let z = Probe { x: &[2.4], y: 1 };
        for r in [1, 7, 40] {
            let res = mc_loo_influence(&train, z, &KNN, 2, r, 3).unwrap();
            assert_eq!(res.value, 0.0);
            assert_eq!(res.method, OracleMethod::MonteCarlo { repetitions: r, stderr: 0.0 });
            let res = mc_loo_influence(&train, z, &KNN, 3, r, 3).unwrap();
            let single = exact_subsampled_influence(&train, z, &KNN, 4, 3, ExclusionArm::SizeMinusOne, CAP).unwrap();
            assert_eq!(res.value, single.value);
        }
    }

    #[test]
    fn cost_report() {
        let c = loo_cost(1000, 0.05, 2000).unwrap();
        assert_eq!(c.repetitions_per_arm, 200);
        assert_eq!(c.loo_trainings, 1001 * 200);
        assert!(loo_cost(10, 0.0, 1).is_err());
    }
}
