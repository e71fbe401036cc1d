//! Subsampled memorization and influence estimates from a trial store.
//!
//! Every estimate is a difference of two conditional accuracies computed from
//! integer bit counts, so results do not depend on trial order or on how the
//! work is split across threads.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::bitset::BitSet;
use crate::error::{Error, Result};
use crate::trials::TrialStore;

/// Largest dense influence matrix (entries) the estimator will materialize.
pub const DENSE_LIMIT: usize = 100_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MemEstimate {
    pub estimate: f64,
    pub n_in: usize,
    pub n_out: usize,
    pub acc_in: f64,
    pub acc_out: f64,
    pub stderr: f64,
    pub fallback_used: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemEstimateTable {
    pub t: usize,
    pub rows: Vec<MemEstimate>,
}

/// One conditional accuracy; `None` when its denominator is zero.
fn ratio(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

fn variance_term(acc: Option<f64>, total: usize) -> f64 {
    match acc {
        Some(a) => a * (1.0 - a) / total as f64,
        // Fallback terms carry the largest possible single-draw variance.
        None => 0.25,
    }
}

fn conditional(hits_in: usize, n_in: usize, hits_total: usize, t: usize) -> MemEstimate {
    let n_out = t - n_in;
    let a_in = ratio(hits_in, n_in);
    let a_out = ratio(hits_total - hits_in, n_out);
    let acc_in = a_in.unwrap_or(0.5);
    let acc_out = a_out.unwrap_or(0.5);
    MemEstimate {
        estimate: acc_in - acc_out,
        n_in,
        n_out,
        acc_in,
        acc_out,
        stderr: (variance_term(a_in, n_in) + variance_term(a_out, n_out)).sqrt(),
        fallback_used: a_in.is_none() || a_out.is_none(),
    }
}

/// Store contents regrouped per example: bit `k` set iff the event held in
/// trial `k`.
struct Transposed {
    inclusion: Vec<BitSet>,
    train_correct: Vec<BitSet>,
    test_correct: Vec<BitSet>,
}

impl Transposed {
    fn new(store: &TrialStore) -> Self {
        let p = store.plan();
        let t = store.t();
        let mut inclusion = vec![BitSet::new(t); p.n];
        let mut train_correct = vec![BitSet::new(t); p.n];
        let mut test_correct = vec![BitSet::new(t); p.n_test];
        for (k, r) in store.records().iter().enumerate() {
            for i in r.inclusion.iter_ones() {
                inclusion[i].insert(k);
            }
            for i in r.train_correct.iter_ones() {
                train_correct[i].insert(k);
            }
            for j in r.test_correct.iter_ones() {
                test_correct[j].insert(k);
            }
        }
        Transposed {
            inclusion,
            train_correct,
            test_correct,
        }
    }
}

fn require_trials(store: &TrialStore) -> Result<()> {
    if store.t() == 0 {
        return Err(Error::invalid("trial store holds no trials"));
    }
    Ok(())
}

pub fn estimate_memorization(store: &TrialStore) -> Result<MemEstimateTable> {
    require_trials(store)?;
    let t = store.t();
    let tr = Transposed::new(store);
    let rows = (0..store.plan().n)
        .into_par_iter()
        .map(|i| {
            let correct = &tr.train_correct[i];
            conditional(
                tr.inclusion[i].intersection_count(correct),
                tr.inclusion[i].count_ones(),
                correct.count_ones(),
                t,
            )
        })
        .collect();
    Ok(MemEstimateTable { t, rows })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InfluenceMode {
    Dense,
    /// Keep only entries with estimate ≥ floor.
    Sparse(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InfluenceEntry {
    pub i: usize,
    pub j: usize,
    pub estimate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InfluenceValues {
    /// Row-major `n × n_test`.
    Dense(Vec<f64>),
    /// Sorted by `(i, j)`.
    Sparse { floor: f64, entries: Vec<InfluenceEntry> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfluenceTable {
    pub n: usize,
    pub n_test: usize,
    pub t: usize,
    pub n_in: Vec<usize>,
    pub values: InfluenceValues,
}

pub fn estimate_influence(store: &TrialStore, mode: InfluenceMode) -> Result<InfluenceTable> {
    require_trials(store)?;
    let (n, n_test, t) = (store.plan().n, store.plan().n_test, store.t());
    if let InfluenceMode::Sparse(floor) = mode {
        if !floor.is_finite() {
            return Err(Error::invalid("sparse floor must be finite"));
        }
    } else if n.saturating_mul(n_test) > DENSE_LIMIT {
        return Err(Error::invalid(format!(
            "dense influence would hold {n} x {n_test} entries; use sparse mode"
        )));
    }
    let tr = Transposed::new(store);
    let n_in: Vec<usize> = tr.inclusion.iter().map(BitSet::count_ones).collect();
    let test_totals: Vec<usize> = tr.test_correct.iter().map(BitSet::count_ones).collect();
    let (n_in_ref, totals, tr_ref) = (&n_in, &test_totals, &tr);
    let row = move |i: usize| {
        (0..n_test).map(move |j| {
            let (n_in, test_totals, tr) = (n_in_ref, totals, tr_ref);
            let hits_in = tr.inclusion[i].intersection_count(&tr.test_correct[j]);
            conditional(hits_in, n_in[i], test_totals[j], t).estimate
        })
    };
    let values = match mode {
        InfluenceMode::Dense => {
            let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| row(i).collect()).collect();
            InfluenceValues::Dense(rows.concat())
        }
        InfluenceMode::Sparse(floor) => {
            let rows: Vec<Vec<InfluenceEntry>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    row(i)
                        .enumerate()
                        .filter(|&(_, e)| e >= floor)
                        .map(|(j, estimate)| InfluenceEntry { i, j, estimate })
                        .collect()
                })
                .collect();
            InfluenceValues::Sparse {
                floor,
                entries: rows.concat(),
            }
        }
    };
    Ok(InfluenceTable {
        n,
        n_test,
        t,
        n_in,
        values,
    })
}

impl InfluenceTable {
    /// The estimate for `(i, j)`; `None` if a sparse table dropped it.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        match &self.values {
            InfluenceValues::Dense(v) => Some(v[i * self.n_test + j]),
            InfluenceValues::Sparse { entries, .. } => entries
                .binary_search_by(|e| (e.i, e.j).cmp(&(i, j)))
                .ok()
                .map(|k| entries[k].estimate),
        }
    }

    /// The floor below which entries may be missing (`-inf` when dense).
    pub fn floor(&self) -> f64 {
        match &self.values {
            InfluenceValues::Dense(_) => f64::NEG_INFINITY,
            InfluenceValues::Sparse { floor, .. } => *floor,
        }
    }

    pub fn fallback_used(&self, i: usize) -> bool {
        self.n_in[i] == 0 || self.n_in[i] == self.t
    }

    /// Entries with estimate ≥ `floor`, sorted by `(i, j)`.
    pub fn entries_at_least(&self, floor: f64) -> Vec<InfluenceEntry> {
        match &self.values {
            InfluenceValues::Dense(v) => v
                .iter()
                .enumerate()
                .filter(|&(_, &e)| e >= floor)
                .map(|(k, &estimate)| InfluenceEntry {
                    i: k / self.n_test,
                    j: k % self.n_test,
                    estimate,
                })
                .collect(),
            InfluenceValues::Sparse { entries, .. } => entries.iter().filter(|e| e.estimate >= floor).copied().collect(),
        }
    }

    /// The estimates as `(i, j, estimate)` rows: every entry when dense, the
    /// retained entries when sparse.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "j", "estimate"])?;
        for e in self.entries_at_least(f64::NEG_INFINITY) {
            w.write_record([e.i.to_string(), e.j.to_string(), e.estimate.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("influence csv", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

impl MemEstimateTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.estimate).collect()
    }

    /// `i,estimate,n_in,n_out,acc_in,acc_out,stderr,fallback`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "estimate", "n_in", "n_out", "acc_in", "acc_out", "stderr", "fallback"])?;
        for (i, r) in self.rows.iter().enumerate() {
            w.write_record([
                i.to_string(),
                r.estimate.to_string(),
                r.n_in.to_string(),
                r.n_out.to_string(),
                r.acc_in.to_string(),
                r.acc_out.to_string(),
                r.stderr.to_string(),
                r.fallback_used.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("estimate csv", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads back a table written by [`MemEstimateTable::write_csv`].
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let source = path.display().to_string();
        let mut r = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_err = |what: &str| Error::Parse {
                path: source.clone(),
                row: row + 2,
                message: format!("bad {what}"),
            };
            if rec.len() != 8 || rec[0].parse::<usize>().ok() != Some(row) {
                return Err(parse_err("row"));
            }
            let f = |k: usize, what: &str| rec[k].parse::<f64>().map_err(|_| parse_err(what));
            let u = |k: usize, what: &str| rec[k].parse::<usize>().map_err(|_| parse_err(what));
            rows.push(MemEstimate {
                estimate: f(1, "estimate")?,
                n_in: u(2, "n_in")?,
                n_out: u(3, "n_out")?,
                acc_in: f(4, "acc_in")?,
                acc_out: f(5, "acc_out")?,
                stderr: f(6, "stderr")?,
                fallback_used: rec[7].parse().map_err(|_| parse_err("fallback"))?,
            });
        }
        let t = rows.first().map_or(0, |r| r.n_in + r.n_out);
        if rows.iter().any(|r| r.n_in + r.n_out != t) {
            return Err(Error::Parse {
                path: source,
                row: 0,
                message: "n_in + n_out differs between rows".into(),
            });
        }
        Ok(MemEstimateTable { t, rows })
    }
}

/// Mean-squared-error bound for `t` trials at inclusion rate `p`:
/// `1/(pt) + 1/((1-p)t) + exp(-pt/16)/2`.
pub fn lemma1_bound(p: f64, t: u64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("p = {p} must lie in (0, 1)")));
    }
    if t == 0 {
        return Err(Error::invalid("t must be at least 1"));
    }
    let t = t as f64;
    Ok(1.0 / (p * t) + 1.0 / ((1.0 - p) * t) + (-p * t / 16.0).exp() / 2.0)
}

/// `min(m/n, 1 - m/n)`.
pub fn inclusion_rate(n: usize, m: usize) -> f64 {
    let q = m as f64 / n as f64;
    q.min(1.0 - q)
}

/// Per-index mean squared deviation of repeated estimates from exact values.
pub fn empirical_mse(samples: &[Vec<f64>], exact: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("no repetitions"));
    }
    if let Some(bad) = samples.iter().find(|s| s.len() != exact.len()) {
        return Err(Error::ShapeMismatch(format!(
            "repetition has {} values, exact has {}",
            bad.len(),
            exact.len()
        )));
    }
    let r = samples.len() as f64;
    Ok((0..exact.len())
        .map(|i| samples.iter().map(|s| (s[i] - exact[i]).powi(2)).sum::<f64>() / r)
        .collect())
}
