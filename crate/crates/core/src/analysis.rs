//! Downstream procedures over estimates: high-influence pair selection and
//! statistics, representative picking, removal and marginal-utility
//! experiments, and cross-run consistency.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::estimator::{InfluenceTable, MemEstimateTable};
use crate::learners::{Learner, LearnerSpec};
use crate::seed::{self, stream};

/// Threshold used on memorization when selecting influence pairs.
pub const DEFAULT_THETA_MEM: f64 = 0.25;
pub const DEFAULT_THETA_INFL: f64 = 0.15;

fn check_threshold(name: &str, theta: f64) -> Result<()> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(Error::invalid(format!("threshold out of range: {name} = {theta} is outside [-1, 1]")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InfluencePair {
    pub train_idx: usize,
    pub test_idx: usize,
    pub infl_estimate: f64,
    pub mem_estimate: f64,
    pub same_class: bool,
}

/// Pairs `(i, j)` with `mem_i ≥ θ_mem`, `infl_ij ≥ θ_infl` and matching
/// labels, by decreasing influence and then `(i, j)`.
pub fn select_pairs(
    mem: &MemEstimateTable,
    infl: &InfluenceTable,
    theta_mem: f64,
    theta_infl: f64,
    train_labels: &[u32],
    test_labels: &[u32],
) -> Result<Vec<InfluencePair>> {
    check_threshold("theta_mem", theta_mem)?;
    check_threshold("theta_infl", theta_infl)?;
    if mem.len() != infl.n || train_labels.len() != infl.n || test_labels.len() != infl.n_test {
        return Err(Error::ShapeMismatch(format!(
            "memorization ({}), influence ({} x {}) and labels ({}, {}) disagree",
            mem.len(),
            infl.n,
            infl.n_test,
            train_labels.len(),
            test_labels.len()
        )));
    }
    if infl.floor() > theta_infl {
        return Err(Error::invalid(format!(
            "sparse influence floor {} is above theta_infl = {theta_infl}",
            infl.floor()
        )));
    }
    let mut pairs: Vec<InfluencePair> = infl
        .entries_at_least(theta_infl)
        .into_iter()
        .filter(|e| mem.rows[e.i].estimate >= theta_mem && train_labels[e.i] == test_labels[e.j])
        .map(|e| InfluencePair {
            train_idx: e.i,
            test_idx: e.j,
            infl_estimate: e.estimate,
            mem_estimate: mem.rows[e.i].estimate,
            same_class: true,
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.infl_estimate
            .total_cmp(&a.infl_estimate)
            .then((a.train_idx, a.test_idx).cmp(&(b.train_idx, b.test_idx)))
    });
    Ok(pairs)
}

pub fn write_pairs_csv<W: Write>(pairs: &[InfluencePair], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["train_idx", "test_idx", "infl_estimate", "mem_estimate", "same_class"])?;
    for p in pairs {
        w.write_record([
            p.train_idx.to_string(),
            p.test_idx.to_string(),
            p.infl_estimate.to_string(),
            p.mem_estimate.to_string(),
            p.same_class.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("pairs csv", e))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairStatistics {
    pub n_pairs: usize,
    pub n_unique_train: usize,
    pub n_unique_test: usize,
    /// Test examples that appear in exactly one pair.
    pub n_single_influencer: usize,
    pub fraction_of_test_set: f64,
}

pub fn pair_statistics(pairs: &[InfluencePair], n_test: usize) -> PairStatistics {
    let mut per_test: BTreeMap<usize, usize> = BTreeMap::new();
    for p in pairs {
        *per_test.entry(p.test_idx).or_default() += 1;
    }
    let trains: BTreeSet<usize> = pairs.iter().map(|p| p.train_idx).collect();
    PairStatistics {
        n_pairs: pairs.len(),
        n_unique_train: trains.len(),
        n_unique_test: per_test.len(),
        n_single_influencer: per_test.values().filter(|&&c| c == 1).count(),
        fraction_of_test_set: if n_test == 0 { 0.0 } else { per_test.len() as f64 / n_test as f64 },
    }
}

/// `n` evenly spaced values over `[0, stop]`, truncated toward zero, with the
/// endpoint exact.
fn truncated_linspace(stop: usize, n: usize) -> Vec<usize> {
    match n {
        0 => Vec::new(),
        1 => vec![0],
        _ => {
            let step = stop as f64 / (n - 1) as f64;
            (0..n).map(|k| if k == n - 1 { stop } else { (k as f64 * step) as usize }).collect()
        }
    }
}

/// Grid of training indices for display: unique train indices of `pairs`
/// sorted by their highest influence (ties by index), `n_egs` evenly spaced
/// base positions over `[0, len - n_copies]`, and `n_copies` consecutive
/// indices from each base. Repeated base positions are dropped.
pub fn pick_representative(pairs: &[InfluencePair], n_copies: usize, n_egs: usize) -> Result<Vec<Vec<usize>>> {
    if n_copies == 0 || n_egs == 0 {
        return Err(Error::invalid("n_copies and n_egs must be positive"));
    }
    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for p in pairs {
        let e = best.entry(p.train_idx).or_insert(f64::NEG_INFINITY);
        *e = e.max(p.infl_estimate);
    }
    let mut order: Vec<(usize, f64)> = best.into_iter().collect();
    if order.len() < n_copies {
        return Err(Error::invalid(format!(
            "{} unique training examples in pairs, need at least n_copies = {n_copies}",
            order.len()
        )));
    }
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut bases = truncated_linspace(order.len() - n_copies, n_egs);
    bases.dedup();
    Ok(bases
        .into_iter()
        .map(|b| (0..n_copies).map(|c| order[b + c].0).collect())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmStats {
    pub mean: f64,
    pub std: f64,
    pub accuracies: Vec<f64>,
}

impl ArmStats {
    fn new(accuracies: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&accuracies);
        ArmStats { mean, std, accuracies }
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemovalRow {
    pub threshold: f64,
    pub removed_count: usize,
    /// Why the row has no accuracies, if it was skipped.
    pub skipped: Option<String>,
    pub targeted: Option<ArmStats>,
    pub random: Option<ArmStats>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RemovalCurve {
    pub repeats: usize,
    /// Accuracy with nothing removed, one model per repeat seed.
    pub baseline: ArmStats,
    pub rows: Vec<RemovalRow>,
}

fn empty_class(train: &LabeledDataset, keep: &[usize]) -> Option<u32> {
    let mut present = vec![false; train.n_classes()];
    for &i in keep {
        present[train.label(i) as usize] = true;
    }
    let full = train.class_counts();
    (0..train.n_classes()).find(|&c| full[c] > 0 && !present[c]).map(|c| c as u32)
}

fn complement(n: usize, removed: &BTreeSet<usize>) -> Vec<usize> {
    (0..n).filter(|i| !removed.contains(i)).collect()
}

fn repeat_seed(seed: u64, r: usize) -> u64 {
    seed::derive(seed, &[stream::REPEAT, r as u64])
}

/// For each threshold, test accuracy after removing `{i : mem_i ≥ θ}` versus
/// removing the same number of uniformly random examples (fresh per repeat).
/// Repeat `r` uses the same training seed in every arm.
pub fn removal_experiment(
    train: &LabeledDataset,
    test: &LabeledDataset,
    learner: &LearnerSpec,
    mem: &[f64],
    thresholds: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<RemovalCurve> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    if mem.len() != train.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} memorization estimates for {} training examples",
            mem.len(),
            train.len()
        )));
    }
    for &th in thresholds {
        check_threshold("removal threshold", th)?;
    }
    let fitted = Learner::new(learner, train, seed)?;
    let accuracy = |keep: &[usize], r: usize| -> Result<f64> { Ok(fitted.train(train, keep, repeat_seed(seed, r))?.accuracy(test)) };
    let all: Vec<usize> = (0..train.len()).collect();
    let baseline = (0..repeats).into_par_iter().map(|r| accuracy(&all, r)).collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(thresholds.len());
    for (a, &th) in thresholds.iter().enumerate() {
        let removed: BTreeSet<usize> = (0..train.len()).filter(|&i| mem[i] >= th).collect();
        let keep = complement(train.len(), &removed);
        let skip = if keep.is_empty() {
            Some("removal leaves no training examples".to_string())
        } else {
            empty_class(train, &keep).map(|c| format!("removal leaves class {c} without examples"))
        };
        if let Some(reason) = skip {
            rows.push(RemovalRow {
                threshold: th,
                removed_count: removed.len(),
                skipped: Some(reason),
                targeted: None,
                random: None,
            });
            continue;
        }
        let results = (0..repeats)
            .into_par_iter()
            .map(|r| {
                let mut rng = seed::rng(seed, &[stream::RANDOM_REMOVAL, a as u64, r as u64]);
                let random_removed: BTreeSet<usize> = index::sample(&mut rng, train.len(), removed.len()).into_iter().collect();
                let random_keep = complement(train.len(), &random_removed);
                Ok((accuracy(&keep, r)?, accuracy(&random_keep, r)?))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(RemovalRow {
            threshold: th,
            removed_count: removed.len(),
            skipped: None,
            targeted: Some(ArmStats::new(results.iter().map(|x| x.0).collect())),
            random: Some(ArmStats::new(results.iter().map(|x| x.1).collect())),
        });
    }
    Ok(RemovalCurve {
        repeats,
        baseline: ArmStats::new(baseline),
        rows,
    })
}

impl RemovalCurve {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "threshold",
            "removed_count",
            "targeted_mean",
            "targeted_std",
            "random_mean",
            "random_std",
            "baseline_mean",
            "baseline_std",
            "repeats",
            "skipped",
        ])?;
        let stat = |a: &Option<ArmStats>, f: fn(&ArmStats) -> f64| a.as_ref().map(|s| f(s).to_string()).unwrap_or_default();
        for row in &self.rows {
            w.write_record([
                row.threshold.to_string(),
                row.removed_count.to_string(),
                stat(&row.targeted, |s| s.mean),
                stat(&row.targeted, |s| s.std),
                stat(&row.random, |s| s.mean),
                stat(&row.random, |s| s.std),
                self.baseline.mean.to_string(),
                self.baseline.std.to_string(),
                self.repeats.to_string(),
                row.skipped.clone().unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("removal csv", e))
    }

    /// Two columns, `threshold,accuracy`, for one arm; skipped rows omitted.
    pub fn write_plot_csv<W: Write>(&self, targeted: bool, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "accuracy"])?;
        for row in &self.rows {
            let arm = if targeted { &row.targeted } else { &row.random };
            if let Some(s) = arm {
                w.write_record([row.threshold.to_string(), s.mean.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io("plot csv", e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_difference: f64,
    pub t_statistic: f64,
    /// One-sided p-value for "mean of a − b is positive".
    pub p_value: f64,
}

impl PairedTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.mean_difference > 0.0 && self.p_value < alpha
    }
}

/// One-sided paired t-test of `mean(a - b) > 0`.
pub fn paired_one_sided_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("paired test needs two equal-length samples of size ≥ 2"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, sd) = mean_std(&diffs);
    let n = diffs.len() as f64;
    if sd == 0.0 {
        let p_value = if mean > 0.0 { 0.0 } else { 1.0 };
        let t_statistic = if mean == 0.0 { 0.0 } else { mean.signum() * f64::INFINITY };
        return Ok(PairedTest {
            n: diffs.len(),
            mean_difference: mean,
            t_statistic,
            p_value,
        });
    }
    let t = mean / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(PairedTest {
        n: diffs.len(),
        mean_difference: mean,
        t_statistic: t,
        p_value: 1.0 - dist.cdf(t),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarginalUtility {
    pub repeats: usize,
    /// Unique training examples in the pairs (removed in the reduced arm).
    pub n_removed: usize,
    /// Unique test examples in the pairs.
    pub n_influenced_test: usize,
    pub full: ArmStats,
    pub reduced: ArmStats,
    /// Full minus reduced test accuracy, per repeat.
    pub overall_difference: ArmStats,
    /// The same difference restricted to the influenced test examples.
    pub restricted_difference: ArmStats,
    /// Restricted difference scaled by `n_influenced_test / n_test`.
    pub contribution: ArmStats,
}

/// Accuracy lost by removing every training example that appears in a pair,
/// overall and on the test examples those pairs point to.
pub fn marginal_utility(
    train: &LabeledDataset,
    test: &LabeledDataset,
    learner: &LearnerSpec,
    pairs: &[InfluencePair],
    repeats: usize,
    seed: u64,
) -> Result<MarginalUtility> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let removed: BTreeSet<usize> = pairs.iter().map(|p| p.train_idx).collect();
    let influenced: BTreeSet<usize> = pairs.iter().map(|p| p.test_idx).collect();
    if let Some(&bad) = removed.iter().find(|&&i| i >= train.len()) {
        return Err(Error::ShapeMismatch(format!("pair references training example {bad}")));
    }
    if let Some(&bad) = influenced.iter().find(|&&j| j >= test.len()) {
        return Err(Error::ShapeMismatch(format!("pair references test example {bad}")));
    }
    let keep = complement(train.len(), &removed);
    if keep.is_empty() {
        return Err(Error::invalid("removal leaves no training examples"));
    }
    if let Some(c) = empty_class(train, &keep) {
        return Err(Error::invalid(format!("removal leaves class {c} without examples")));
    }
    let fitted = Learner::new(learner, train, seed)?;
    let all: Vec<usize> = (0..train.len()).collect();
    let eval = |subset: &[usize], r: usize| -> Result<(f64, f64)> {
        let model = fitted.train(train, subset, repeat_seed(seed, r))?;
        let correct: Vec<bool> = (0..test.len()).map(|j| model.predict(test.features(j)) == test.label(j)).collect();
        let overall = correct.iter().filter(|&&c| c).count() as f64 / test.len() as f64;
        let restricted = if influenced.is_empty() {
            0.0
        } else {
            influenced.iter().filter(|&&j| correct[j]).count() as f64 / influenced.len() as f64
        };
        Ok((overall, restricted))
    };
    let results = (0..repeats)
        .into_par_iter()
        .map(|r| Ok((eval(&all, r)?, eval(&keep, r)?)))
        .collect::<Result<Vec<_>>>()?;
    let share = influenced.len() as f64 / test.len() as f64;
    Ok(MarginalUtility {
        repeats,
        n_removed: removed.len(),
        n_influenced_test: influenced.len(),
        full: ArmStats::new(results.iter().map(|x| x.0 .0).collect()),
        reduced: ArmStats::new(results.iter().map(|x| x.1 .0).collect()),
        overall_difference: ArmStats::new(results.iter().map(|x| x.0 .0 - x.1 .0).collect()),
        restricted_difference: ArmStats::new(results.iter().map(|x| x.0 .1 - x.1 .1).collect()),
        contribution: ArmStats::new(results.iter().map(|x| (x.0 .1 - x.1 .1) * share).collect()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConsistencyRow {
    pub threshold: f64,
    pub jaccard: f64,
    /// Mean absolute estimate difference over the union (0 when empty).
    pub mean_abs_difference: f64,
    pub size_a: usize,
    pub size_b: usize,
    pub intersection: usize,
    pub union: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub rows: Vec<ConsistencyRow>,
}

fn consistency_row<K: Ord + Copy>(
    threshold: f64,
    a: &BTreeSet<K>,
    b: &BTreeSet<K>,
    value_a: impl Fn(K) -> Result<f64>,
    value_b: impl Fn(K) -> Result<f64>,
) -> Result<ConsistencyRow> {
    let union: Vec<K> = a.union(b).copied().collect();
    let intersection = a.intersection(b).count();
    let mut total = 0.0;
    for &k in &union {
        total += (value_a(k)? - value_b(k)?).abs();
    }
    Ok(ConsistencyRow {
        threshold,
        jaccard: if union.is_empty() { 1.0 } else { intersection as f64 / union.len() as f64 },
        mean_abs_difference: if union.is_empty() { 0.0 } else { total / union.len() as f64 },
        size_a: a.len(),
        size_b: b.len(),
        intersection,
        union: union.len(),
    })
}

/// Jaccard similarity and mean estimate difference of the sets
/// `{i : mem_i ≥ θ}` from two runs, per threshold.
pub fn mem_consistency(mem_a: &[f64], mem_b: &[f64], thresholds: &[f64]) -> Result<ConsistencyReport> {
    if mem_a.len() != mem_b.len() {
        return Err(Error::ShapeMismatch(format!(
            "memorization tables have {} and {} entries",
            mem_a.len(),
            mem_b.len()
        )));
    }
    let rows = thresholds
        .iter()
        .map(|&th| {
            check_threshold("consistency threshold", th)?;
            let pick = |m: &[f64]| (0..m.len()).filter(|&i| m[i] >= th).collect::<BTreeSet<_>>();
            consistency_row(th, &pick(mem_a), &pick(mem_b), |i| Ok(mem_a[i]), |i| Ok(mem_b[i]))
        })
        .collect::<Result<_>>()?;
    Ok(ConsistencyReport { rows })
}

/// As [`mem_consistency`] over pairs `(i, j)` with `infl_ij ≥ θ`, further
/// restricted to `mem_i ≥ mem_constraint` when one is given.
pub fn infl_consistency(
    mem_a: &[f64],
    infl_a: &InfluenceTable,
    mem_b: &[f64],
    infl_b: &InfluenceTable,
    thresholds: &[f64],
    mem_constraint: Option<f64>,
) -> Result<ConsistencyReport> {
    if (infl_a.n, infl_a.n_test) != (infl_b.n, infl_b.n_test) || mem_a.len() != infl_a.n || mem_b.len() != infl_b.n {
        return Err(Error::ShapeMismatch("influence/memorization tables disagree in shape".into()));
    }
    let lookup = |t: &InfluenceTable, (i, j): (usize, usize)| {
        t.get(i, j).ok_or_else(|| {
            Error::invalid(format!(
                "influence ({i}, {j}) was dropped by the sparse floor {}; lower the floor",
                t.floor()
            ))
        })
    };
    let rows = thresholds
        .iter()
        .map(|&th| {
            check_threshold("consistency threshold", th)?;
            let pick = |t: &InfluenceTable, m: &[f64]| -> Result<BTreeSet<(usize, usize)>> {
                if t.floor() > th {
                    return Err(Error::invalid(format!("sparse floor {} is above threshold {th}", t.floor())));
                }
                Ok(t.entries_at_least(th)
                    .into_iter()
                    .filter(|e| mem_constraint.is_none_or(|c| m[e.i] >= c))
                    .map(|e| (e.i, e.j))
                    .collect())
            };
            consistency_row(th, &pick(infl_a, mem_a)?, &pick(infl_b, mem_b)?, |k| lookup(infl_a, k), |k| lookup(infl_b, k))
        })
        .collect::<Result<_>>()?;
    Ok(ConsistencyReport { rows })
}

impl ConsistencyReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "jaccard", "mean_abs_difference", "size_a", "size_b", "intersection", "union"])?;
        for r in &self.rows {
            w.write_record([
                r.threshold.to_string(),
                r.jaccard.to_string(),
                r.mean_abs_difference.to_string(),
                r.size_a.to_string(),
                r.size_b.to_string(),
                r.intersection.to_string(),
                r.union.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("consistency csv", e))
    }
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
