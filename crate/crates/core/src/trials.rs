//! Trial execution: train one model per random size-`m` subset and record,
//! per trial, which training examples were included and which train/test
//! points the model classified correctly.
//!
//! Binary store layout (all integers little-endian):
//!
//! ```text
//! "MEMTRIAL"            8 bytes
//! version               u16 (= 1)
//! origin                u16 (0 = sampled, 1 = enumerated)
//! n, n_test, m, t       u64 each
//! seed                  u64
//! first_trial           u64  key of the first record's trial
//! spec_len              u64
//! learner spec          spec_len bytes of UTF-8 `key = value` text
//! t records             [inclusion: ceil(n/8)][train-correct: ceil(n/8)][test-correct: ceil(n_test/8)]
//! checksum              u64, XXH64 (seed 0) of every preceding byte
//! ```
//!
//! Bit `i` of a bitset is bit `i % 8` of byte `i / 8`.

use std::hash::Hasher;
use std::path::Path;

use rayon::prelude::*;
use twox_hash::XxHash64;

use crate::bitset::BitSet;
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::learners::{Learner, LearnerSpec};
use crate::seed::{self, stream};

pub const MAGIC: &[u8; 8] = b"MEMTRIAL";
pub const FORMAT_VERSION: u16 = 1;
/// Default ceiling on the number of subsets an enumeration may train.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

const HEADER_LEN: usize = 8 + 2 + 2 + 8 * 7;

#[derive(Clone, Debug, PartialEq)]
pub struct TrialPlan {
    pub n: usize,
    pub n_test: usize,
    pub m: usize,
    pub t: usize,
    pub seed: u64,
    pub learner: LearnerSpec,
}

impl TrialPlan {
    pub fn new(train: &LabeledDataset, test: &LabeledDataset, m: usize, t: usize, seed: u64, learner: LearnerSpec) -> Self {
        TrialPlan {
            n: train.len(),
            n_test: test.len(),
            m,
            t,
            seed,
            learner,
        }
    }

    /// `round(fraction * n)`, clamped to `[1, n]`.
    pub fn subset_size(n: usize, fraction: f64) -> usize {
        ((fraction * n as f64).round() as usize).clamp(1, n.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("training set is empty"));
        }
        if self.m == 0 || self.m > self.n {
            return Err(Error::invalid(format!("subset size m = {} must lie in [1, n = {}]", self.m, self.n)));
        }
        self.learner.validate()
    }

    fn check_data(&self, train: &LabeledDataset, test: &LabeledDataset) -> Result<()> {
        if train.len() != self.n || test.len() != self.n_test {
            return Err(Error::ShapeMismatch(format!(
                "plan expects n = {}, n_test = {}; datasets have {} and {}",
                self.n,
                self.n_test,
                train.len(),
                test.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoreOrigin {
    /// Subsets drawn at random; trial `k` is keyed by `(seed, k)`.
    Sampled,
    /// Every size-`m` subset exactly once, in lexicographic order.
    Enumerated,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialRecord {
    pub inclusion: BitSet,
    pub train_correct: BitSet,
    pub test_correct: BitSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialStore {
    plan: TrialPlan,
    origin: StoreOrigin,
    first_trial: u64,
    records: Vec<TrialRecord>,
}

fn subset_for_trial(plan: &TrialPlan, k: u64) -> Vec<usize> {
    let mut rng = seed::rng(plan.seed, &[stream::SUBSET, k]);
    let mut subset = rand::seq::index::sample(&mut rng, plan.n, plan.m).into_vec();
    subset.sort_unstable();
    subset
}

fn evaluate(
    learner: &Learner,
    train: &LabeledDataset,
    test: &LabeledDataset,
    subset: &[usize],
    learner_seed: u64,
) -> Result<TrialRecord> {
    let model = learner.train(train, subset, learner_seed)?;
    let mut train_correct = BitSet::new(train.len());
    for i in 0..train.len() {
        train_correct.set(i, model.predict(train.features(i)) == train.label(i));
    }
    let mut test_correct = BitSet::new(test.len());
    for j in 0..test.len() {
        test_correct.set(j, model.predict(test.features(j)) == test.label(j));
    }
    Ok(TrialRecord {
        inclusion: BitSet::from_indices(train.len(), subset.iter().copied()),
        train_correct,
        test_correct,
    })
}

fn with_pool<T: Send>(parallelism: usize, work: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(work))
}

/// Keeps the error of the lowest failing trial so failures are reported the
/// same way for any worker count.
fn first_error(results: Vec<Result<TrialRecord>>, first_trial: u64) -> Result<Vec<TrialRecord>> {
    let mut records = Vec::with_capacity(results.len());
    for (idx, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => {
                return Err(Error::Trial {
                    trial: first_trial + idx as u64,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(records)
}

/// Runs trials `0..plan.t` on `parallelism` workers.
pub fn run_trials(train: &LabeledDataset, test: &LabeledDataset, plan: &TrialPlan, parallelism: usize) -> Result<TrialStore> {
    if plan.t == 0 {
        return Err(Error::invalid("number of trials must be at least 1"));
    }
    run_trial_range(train, test, plan, 0, plan.t, parallelism)
}

/// Runs trials `first..first + count` of `plan`. The result equals the
/// corresponding slice of a full run.
pub fn run_trial_range(
    train: &LabeledDataset,
    test: &LabeledDataset,
    plan: &TrialPlan,
    first: u64,
    count: usize,
    parallelism: usize,
) -> Result<TrialStore> {
    plan.validate()?;
    plan.check_data(train, test)?;
    let learner = Learner::new(&plan.learner, train, plan.seed)?;
    let results = with_pool(parallelism, || {
        (0..count as u64)
            .into_par_iter()
            .map(|idx| {
                let k = first + idx;
                let subset = subset_for_trial(plan, k);
                evaluate(&learner, train, test, &subset, seed::derive(plan.seed, &[stream::LEARNER, k]))
            })
            .collect::<Vec<_>>()
    })?;
    let records = first_error(results, first)?;
    Ok(TrialStore {
        plan: TrialPlan { t: count, ..plan.clone() },
        origin: StoreOrigin::Sampled,
        first_trial: first,
        records,
    })
}

/// `C(n, k)`, or `None` past `u128`.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Advances `comb` to the next k-subset of `[0, n)` in lexicographic order.
pub(crate) fn next_combination(comb: &mut [usize], n: usize) -> bool {
    let k = comb.len();
    let Some(pos) = (0..k).rev().find(|&p| comb[p] < n - k + p) else {
        return false;
    };
    comb[pos] += 1;
    for q in pos + 1..k {
        comb[q] = comb[q - 1] + 1;
    }
    true
}

/// All size-`k` subsets of `[0, n)` in lexicographic order.
pub(crate) fn combinations(n: usize, k: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut current: Option<Vec<usize>> = if k <= n { Some((0..k).collect()) } else { None };
    std::iter::from_fn(move || {
        let out = current.clone()?;
        let mut next = out.clone();
        current = if next_combination(&mut next, n) { Some(next) } else { None };
        Some(out)
    })
}

/// One trial per size-`m` subset of the training set, lexicographic order.
/// Only deterministic learners qualify; the result makes the estimator exact.
pub fn enumerate_trials(
    train: &LabeledDataset,
    test: &LabeledDataset,
    m: usize,
    learner: &LearnerSpec,
    cap: u64,
    parallelism: usize,
) -> Result<TrialStore> {
    if !learner.is_deterministic() {
        return Err(Error::invalid(format!(
            "enumeration needs a deterministic learner, {} depends on its seed",
            learner.kind()
        )));
    }
    let required = binomial(train.len() as u64, m as u64).unwrap_or(u128::MAX);
    if required > cap as u128 {
        return Err(Error::EnumerationCap { required, cap });
    }
    let plan = TrialPlan::new(train, test, m, required as usize, 0, learner.clone());
    plan.validate()?;
    let built = Learner::new(learner, train, 0)?;
    let subsets: Vec<Vec<usize>> = combinations(train.len(), m).collect();
    let results = with_pool(parallelism, || {
        subsets
            .par_iter()
            .map(|subset| evaluate(&built, train, test, subset, 0))
            .collect::<Vec<_>>()
    })?;
    let records = first_error(results, 0)?;
    Ok(TrialStore {
        plan,
        origin: StoreOrigin::Enumerated,
        first_trial: 0,
        records,
    })
}

impl TrialStore {
    /// A store with no trials; the identity for [`TrialStore::merge`].
    pub fn empty(plan: &TrialPlan) -> Self {
        TrialStore {
            plan: TrialPlan { t: 0, ..plan.clone() },
            origin: StoreOrigin::Sampled,
            first_trial: 0,
            records: Vec::new(),
        }
    }

    /// Assembles a store from explicit records, checking every invariant.
    pub fn from_records(plan: TrialPlan, origin: StoreOrigin, first_trial: u64, records: Vec<TrialRecord>) -> Result<Self> {
        let store = TrialStore {
            plan: TrialPlan { t: records.len(), ..plan },
            origin,
            first_trial,
            records,
        };
        store.check_records()?;
        Ok(store)
    }

    fn check_records(&self) -> Result<()> {
        let p = &self.plan;
        for (k, r) in self.records.iter().enumerate() {
            if r.inclusion.len() != p.n || r.train_correct.len() != p.n || r.test_correct.len() != p.n_test {
                return Err(Error::CorruptStore(format!("trial {k}: bitset lengths disagree with the header")));
            }
            if r.inclusion.count_ones() != p.m {
                return Err(Error::CorruptStore(format!(
                    "trial {k}: {} examples included, expected m = {}",
                    r.inclusion.count_ones(),
                    p.m
                )));
            }
        }
        Ok(())
    }

    pub fn plan(&self) -> &TrialPlan {
        &self.plan
    }

    pub fn origin(&self) -> StoreOrigin {
        self.origin
    }

    pub fn first_trial(&self) -> u64 {
        self.first_trial
    }

    pub fn t(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    /// Same trials in a different order. Estimates do not depend on order.
    pub fn permuted(&self, order: &[usize]) -> Result<TrialStore> {
        let mut seen = vec![false; self.t()];
        for &k in order {
            if k >= self.t() || std::mem::replace(&mut seen[k], true) {
                return Err(Error::invalid("order is not a permutation of the trials"));
            }
        }
        if order.len() != self.t() {
            return Err(Error::invalid("order is not a permutation of the trials"));
        }
        Ok(TrialStore {
            records: order.iter().map(|&k| self.records[k].clone()).collect(),
            ..self.clone()
        })
    }

    fn compatible(&self, other: &TrialStore) -> Result<()> {
        let (a, b) = (&self.plan, &other.plan);
        if (a.n, a.n_test, a.m) != (b.n, b.n_test, b.m) {
            return Err(Error::ShapeMismatch(format!(
                "stores disagree on (n, n_test, m): ({}, {}, {}) vs ({}, {}, {})",
                a.n, a.n_test, a.m, b.n, b.n_test, b.m
            )));
        }
        if a.learner != b.learner {
            return Err(Error::ShapeMismatch("stores were produced by different learners".into()));
        }
        Ok(())
    }

    /// Concatenates two stores of the same plan whose trial ranges are
    /// disjoint and adjacent. Argument order does not matter.
    pub fn merge(&self, other: &TrialStore) -> Result<TrialStore> {
        self.compatible(other)?;
        if other.records.is_empty() {
            return Ok(self.clone());
        }
        if self.records.is_empty() {
            return Ok(other.clone());
        }
        if self.origin != StoreOrigin::Sampled || other.origin != StoreOrigin::Sampled {
            return Err(Error::ShapeMismatch("enumerated stores cannot be merged".into()));
        }
        if self.plan.seed != other.plan.seed {
            return Err(Error::ShapeMismatch(format!(
                "stores use different seeds ({} vs {})",
                self.plan.seed, other.plan.seed
            )));
        }
        let (lo, hi) = if self.first_trial <= other.first_trial { (self, other) } else { (other, self) };
        let lo_end = lo.first_trial + lo.t() as u64;
        if lo_end > hi.first_trial {
            return Err(Error::ShapeMismatch(format!(
                "trial ranges overlap: [{}, {}) and [{}, {})",
                lo.first_trial,
                lo_end,
                hi.first_trial,
                hi.first_trial + hi.t() as u64
            )));
        }
        if lo_end < hi.first_trial {
            return Err(Error::ShapeMismatch(format!(
                "trial ranges leave a gap: [{}, {}) then {}",
                lo.first_trial, lo_end, hi.first_trial
            )));
        }
        let mut records = lo.records.clone();
        records.extend(hi.records.iter().cloned());
        Ok(TrialStore {
            plan: TrialPlan { t: records.len(), ..lo.plan.clone() },
            origin: StoreOrigin::Sampled,
            first_trial: lo.first_trial,
            records,
        })
    }

    /// Exact encoded size for the given shape.
    pub fn encoded_len(n: usize, n_test: usize, t: usize, spec_len: usize) -> Option<usize> {
        let record = BitSet::byte_len(n).checked_mul(2)?.checked_add(BitSet::byte_len(n_test))?;
        record.checked_mul(t)?.checked_add(HEADER_LEN)?.checked_add(spec_len)?.checked_add(8)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.plan.learner.to_config_string();
        let p = &self.plan;
        let mut out = Vec::with_capacity(Self::encoded_len(p.n, p.n_test, self.t(), spec.len()).unwrap_or(0));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let origin: u16 = match self.origin {
            StoreOrigin::Sampled => 0,
            StoreOrigin::Enumerated => 1,
        };
        out.extend_from_slice(&origin.to_le_bytes());
        for v in [p.n as u64, p.n_test as u64, p.m as u64, self.t() as u64, p.seed, self.first_trial, spec.len() as u64] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(spec.as_bytes());
        for r in &self.records {
            r.inclusion.write_bytes(&mut out);
            r.train_correct.write_bytes(&mut out);
            r.test_correct.write_bytes(&mut out);
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<TrialStore> {
        let corrupt = |m: &str| Error::CorruptStore(m.to_string());
        if bytes.len() < HEADER_LEN + 8 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let u16_at = |at: usize| u16::from_le_bytes([bytes[at], bytes[at + 1]]);
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        let version = u16_at(8);
        if version != FORMAT_VERSION {
            return Err(Error::CorruptStore(format!("unsupported format version {version}")));
        }
        let origin = match u16_at(10) {
            0 => StoreOrigin::Sampled,
            1 => StoreOrigin::Enumerated,
            o => return Err(Error::CorruptStore(format!("unknown origin {o}"))),
        };
        let fields: Vec<u64> = (0..7).map(|k| u64_at(12 + 8 * k)).collect();
        let to_usize = |v: u64| usize::try_from(v).map_err(|_| corrupt("length field overflows"));
        let (n, n_test, m, t) = (to_usize(fields[0])?, to_usize(fields[1])?, to_usize(fields[2])?, to_usize(fields[3])?);
        let (seed, first_trial, spec_len) = (fields[4], fields[5], to_usize(fields[6])?);
        let expected = Self::encoded_len(n, n_test, t, spec_len).ok_or_else(|| corrupt("length fields overflow"))?;
        if bytes.len() != expected {
            return Err(Error::CorruptStore(format!(
                "length {} does not match the {} bytes implied by the header",
                bytes.len(),
                expected
            )));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 8);
        if checksum(payload) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(corrupt("checksum mismatch"));
        }
        let spec_text = std::str::from_utf8(&payload[HEADER_LEN..HEADER_LEN + spec_len])
            .map_err(|_| corrupt("learner spec is not UTF-8"))?;
        let learner = LearnerSpec::parse(spec_text).map_err(|e| Error::CorruptStore(format!("learner spec: {e}")))?;
        let plan = TrialPlan { n, n_test, m, t, seed, learner };
        plan.validate().map_err(|e| Error::CorruptStore(e.to_string()))?;

        let (bn, bt) = (BitSet::byte_len(n), BitSet::byte_len(n_test));
        let mut records = Vec::with_capacity(t);
        let body = &payload[HEADER_LEN + spec_len..];
        let record_len = 2 * bn + bt;
        for (k, chunk) in body.chunks_exact(record_len.max(1)).take(t).enumerate() {
            let bits = |range: std::ops::Range<usize>, len: usize| {
                BitSet::from_bytes(len, &chunk[range])
                    .ok_or_else(|| Error::CorruptStore(format!("trial {k}: padding bits set")))
            };
            records.push(TrialRecord {
                inclusion: bits(0..bn, n)?,
                train_correct: bits(bn..2 * bn, n)?,
                test_correct: bits(2 * bn..record_len, n_test)?,
            });
        }
        if records.len() != t {
            return Err(corrupt("record count mismatch"));
        }
        let store = TrialStore {
            plan,
            origin,
            first_trial,
            records,
        };
        store.check_records()?;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrialStore> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = XxHash64::with_seed(0);
    h.write(bytes);
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::ConstantRule;

    fn tiny() -> (LabeledDataset, LabeledDataset) {
        let train = LabeledDataset::unnamed(
            (0..12).map(|i| vec![i as f64, (i * i % 7) as f64]).collect(),
            (0..12).map(|i| (i % 3) as u32).collect(),
            3,
        )
        .unwrap();
        let test = LabeledDataset::unnamed(vec![vec![0.5, 1.0], vec![7.2, 3.0], vec![11.0, 0.0]], vec![0, 1, 2], 3).unwrap();
        (train, test)
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(4, 2), Some(6));
        assert_eq!(binomial(12, 8), Some(495));
        assert_eq!(binomial(5, 7), Some(0));
        assert_eq!(binomial(60, 30), Some(118264581564861424));
    }

    #[test]
    fn lexicographic_combinations() {
        let all: Vec<Vec<usize>> = combinations(4, 2).collect();
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(combinations(3, 0).count(), 1);
        assert_eq!(combinations(3, 4).count(), 0);
    }

    #[test]
    fn enumeration_counts() {
        let (train, test) = tiny();
        let knn = LearnerSpec::Knn { k: 1 };
        let small = train.select(&[0, 1, 2, 3]);
        assert_eq!(enumerate_trials(&small, &test, 2, &knn, DEFAULT_ENUMERATION_CAP, 1).unwrap().t(), 6);
        let store = enumerate_trials(&train, &test, 8, &knn, DEFAULT_ENUMERATION_CAP, 1).unwrap();
        assert_eq!(store.t(), 495);
        for i in 0..12 {
            let hits = store.records().iter().filter(|r| r.inclusion.contains(i)).count() as u128;
            assert_eq!(hits, binomial(11, 7).unwrap());
        }
        let err = enumerate_trials(&train, &test, 6, &knn, 100, 1).unwrap_err();
        assert!(matches!(err, Error::EnumerationCap { required: 924, cap: 100 }));
        let logreg = LearnerSpec::LogReg(crate::learners::SgdConfig::logreg_default());
        assert!(matches!(enumerate_trials(&train, &test, 8, &logreg, 1000, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn plan_validation() {
        let (train, test) = tiny();
        let plan = TrialPlan::new(&train, &test, 13, 5, 1, LearnerSpec::Knn { k: 1 });
        assert!(matches!(run_trials(&train, &test, &plan, 1), Err(Error::InvalidArgument(_))));
        let plan = TrialPlan::new(&train, &test, 8, 0, 1, LearnerSpec::Knn { k: 1 });
        assert!(run_trials(&train, &test, &plan, 1).is_err());
        let plan = TrialPlan { n: 11, ..TrialPlan::new(&train, &test, 8, 3, 1, LearnerSpec::Knn { k: 1 }) };
        assert!(matches!(run_trials(&train, &test, &plan, 1), Err(Error::ShapeMismatch(_))));
        assert_eq!(TrialPlan::subset_size(12, 0.7), 8);
        assert_eq!(TrialPlan::subset_size(1000, 0.7), 700);
        assert_eq!(TrialPlan::subset_size(3, 0.01), 1);
    }

    #[test]
    fn constant_majority_rows_identical() {
        // 9 of 12 examples are class 0, so every size-8 subset has majority 0.
        let train = LabeledDataset::unnamed(
            (0..12).map(|i| vec![i as f64]).collect(),
            (0..12).map(|i| if i < 9 { 0 } else { 1 + (i % 2) as u32 }).collect(),
            3,
        )
        .unwrap();
        let (_, test) = tiny();
        let test = LabeledDataset::unnamed((0..3).map(|j| vec![test.features(j)[0]]).collect(), test.labels().to_vec(), 3).unwrap();
        let plan = TrialPlan::new(&train, &test, 8, 40, 3, LearnerSpec::Constant(ConstantRule::Majority));
        let store = run_trials(&train, &test, &plan, 2).unwrap();
        for r in store.records() {
            for i in 0..12 {
                assert_eq!(r.train_correct.contains(i), train.label(i) == 0);
            }
            assert_eq!(r.test_correct, store.records()[0].test_correct);
        }
    }

    #[test]
    fn determinism_and_worker_independence() {
        let (train, test) = tiny();
        let plan = TrialPlan::new(&train, &test, 8, 100, 42, LearnerSpec::Knn { k: 1 });
        let a = run_trials(&train, &test, &plan, 1).unwrap();
        let b = run_trials(&train, &test, &plan, 1).unwrap();
        let c = run_trials(&train, &test, &plan, 8).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.to_bytes(), c.to_bytes());
        assert!(a.records().iter().all(|r| r.inclusion.count_ones() == 8));
    }

    #[test]
    fn subset_inclusion_is_uniform() {
        let train = LabeledDataset::unnamed((0..10).map(|i| vec![i as f64]).collect(), vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1], 2).unwrap();
        let plan = TrialPlan { n: 10, n_test: 1, m: 3, t: 10_000, seed: 5, learner: LearnerSpec::Knn { k: 1 } };
        let mut hits = [0usize; 10];
        for k in 0..plan.t as u64 {
            let s = subset_for_trial(&plan, k);
            assert_eq!(s.len(), 3);
            for i in s {
                hits[i] += 1;
            }
        }
        let sigma = (10_000.0f64 * 0.3 * 0.7).sqrt();
        for h in hits {
            assert!((h as f64 - 3000.0).abs() <= 5.0 * sigma, "{hits:?}");
        }
        let _ = train;
    }

    #[test]
    fn merge_semantics() {
        let (train, test) = tiny();
        let plan = TrialPlan::new(&train, &test, 8, 150, 9, LearnerSpec::Knn { k: 1 });
        let full = run_trials(&train, &test, &plan, 1).unwrap();
        let a = run_trial_range(&train, &test, &plan, 0, 100, 1).unwrap();
        let b = run_trial_range(&train, &test, &plan, 100, 50, 1).unwrap();
        assert_eq!(a.merge(&b).unwrap(), full);
        assert_eq!(b.merge(&a).unwrap(), full);
        assert_eq!(a.merge(&b).unwrap().t(), 150);
        assert_eq!(full.merge(&TrialStore::empty(&plan)).unwrap(), full);
        assert_eq!(TrialStore::empty(&plan).merge(&full).unwrap(), full);
        assert!(a.merge(&a).is_err());
        let gap = run_trial_range(&train, &test, &plan, 101, 5, 1).unwrap();
        assert!(a.merge(&gap).is_err());
        let other_m = run_trials(&train, &test, &TrialPlan { m: 7, ..plan.clone() }, 1).unwrap();
        assert!(matches!(full.merge(&other_m), Err(Error::ShapeMismatch(_))));
        let other_seed = run_trial_range(&train, &test, &TrialPlan { seed: 10, ..plan.clone() }, 150, 5, 1).unwrap();
        assert!(full.merge(&other_seed).is_err());
        let other_learner = run_trial_range(&train, &test, &TrialPlan { learner: LearnerSpec::Knn { k: 3 }, ..plan.clone() }, 150, 5, 1).unwrap();
        assert!(full.merge(&other_learner).is_err());
    }

    #[test]
    fn binary_round_trip_and_layout() {
        let (train, test) = tiny();
        let plan = TrialPlan::new(&train, &test, 8, 7, 3, LearnerSpec::Knn { k: 1 });
        let store = run_trial_range(&train, &test, &plan, 4, 7, 1).unwrap();
        let bytes = store.to_bytes();
        let spec_len = plan.learner.to_config_string().len();
        assert_eq!(bytes.len(), TrialStore::encoded_len(12, 3, 7, spec_len).unwrap());
        assert_eq!(bytes.len(), 8 + 2 + 2 + 7 * 8 + spec_len + 7 * (2 + 2 + 1) + 8);
        assert_eq!(&bytes[..8], b"MEMTRIAL");
        assert_eq!(TrialStore::from_bytes(&bytes).unwrap(), store);
        assert_eq!(TrialStore::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn corrupt_files_rejected() {
        let (train, test) = tiny();
        let plan = TrialPlan::new(&train, &test, 8, 3, 3, LearnerSpec::Knn { k: 1 });
        let bytes = run_trials(&train, &test, &plan, 1).unwrap().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(TrialStore::from_bytes(&bad), Err(Error::CorruptStore(m)) if m.contains("magic")));
        assert!(TrialStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut flipped = bytes.clone();
        let mid = bytes.len() - 12;
        flipped[mid] ^= 1;
        assert!(matches!(TrialStore::from_bytes(&flipped), Err(Error::CorruptStore(m)) if m.contains("checksum")));
        let mut huge = bytes.clone();
        huge[12 + 24..12 + 32].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(TrialStore::from_bytes(&huge).is_err());
        assert!(TrialStore::from_bytes(&[]).is_err());
    }
}
