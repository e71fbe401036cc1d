//! One function per subcommand. Each reads its inputs from the run config
//! and the output directory and writes its results under the output
//! directory; the returned lines are a human-readable summary.

use std::path::{Path, PathBuf};

use meminfl::analysis::{self, write_file, InfluencePair};
use meminfl::dataset::{self, GroundTruth, LabeledDataset};
use meminfl::estimator::{self, InfluenceMode, InfluenceTable, MemEstimateTable};
use meminfl::oracle::{self, ExclusionArm, Probe};
use meminfl::seed;
use meminfl::trials::{self, StoreOrigin, TrialPlan, TrialStore};
use meminfl::{Error, Result};
use serde::Serialize;
use serde_json::json;

use crate::config::{DatasetSource, InfluenceOutput, RunConfig, TrialMode};

pub struct Data {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub truth: Option<GroundTruth>,
}

pub fn store_path(cfg: &RunConfig) -> PathBuf {
    cfg.output.join("trials").join("store.bin")
}

fn out(cfg: &RunConfig, parts: &[&str]) -> PathBuf {
    parts.iter().fold(cfg.output.clone(), |p, s| p.join(s))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_with<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    body(&mut buf)?;
    write_file(path, &buf)
}

fn echo_config(cfg: &RunConfig) -> Result<()> {
    write_file(cfg.output.join("config.toml"), cfg.to_toml().as_bytes())
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{}: file not found", path.display())))
    }
}

pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    match &cfg.dataset {
        DatasetSource::Synthetic(spec) => {
            let (train, test, truth) = dataset::generate_longtail(spec)?;
            Ok(Data {
                train,
                test,
                truth: Some(truth),
            })
        }
        DatasetSource::Csv { train, test, n_classes } => {
            require_file(train)?;
            require_file(test)?;
            let train = dataset::load_csv(train, *n_classes)?;
            let test = dataset::load_csv(test, Some(train.n_classes()))?;
            if test.dim() != train.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "train has {} features, test has {}",
                    train.dim(),
                    test.dim()
                )));
            }
            Ok(Data { train, test, truth: None })
        }
    }
}

pub fn subset_size(cfg: &RunConfig, n: usize) -> Result<usize> {
    let m = cfg.trials.m.unwrap_or_else(|| TrialPlan::subset_size(n, cfg.trials.m_fraction));
    if m == 0 || m > n {
        return Err(Error::invalid(format!("subset size m = {m} must lie in [1, n = {n}]")));
    }
    Ok(m)
}

pub fn plan(cfg: &RunConfig, data: &Data) -> Result<TrialPlan> {
    let m = subset_size(cfg, data.train.len())?;
    Ok(TrialPlan::new(&data.train, &data.test, m, cfg.trials.t, cfg.trials.seed, cfg.learner.clone()))
}

/// Describes why `store` was not produced by `cfg`, if it was not.
fn store_mismatch(store: &TrialStore, cfg: &RunConfig, plan: &TrialPlan) -> Option<String> {
    let p = store.plan();
    let mut diffs = Vec::new();
    if (p.n, p.n_test) != (plan.n, plan.n_test) {
        diffs.push(format!("dataset sizes ({}, {}) vs ({}, {})", p.n, p.n_test, plan.n, plan.n_test));
    }
    if p.m != plan.m {
        diffs.push(format!("m = {} vs {}", p.m, plan.m));
    }
    if p.learner != plan.learner {
        diffs.push(format!("learner {} vs {}", p.learner.kind(), plan.learner.kind()));
    }
    match (cfg.trials.mode, store.origin()) {
        (TrialMode::Sampled, StoreOrigin::Sampled) => {
            if p.seed != plan.seed {
                diffs.push(format!("seed {} vs {}", p.seed, plan.seed));
            }
            if store.first_trial() != 0 {
                diffs.push(format!("store starts at trial {}", store.first_trial()));
            }
        }
        (TrialMode::Enumerate, StoreOrigin::Enumerated) => {}
        (_, origin) => diffs.push(format!("store origin {origin:?} does not match the configured mode")),
    }
    (!diffs.is_empty()).then(|| format!("store/config mismatch: {}", diffs.join("; ")))
}

/// Loads the run's trial store and checks it against the config.
pub fn load_store(cfg: &RunConfig, data: &Data) -> Result<TrialStore> {
    let path = store_path(cfg);
    require_file(&path)?;
    let store = TrialStore::load(&path)?;
    let plan = plan(cfg, data)?;
    if let Some(msg) = store_mismatch(&store, cfg, &plan) {
        return Err(Error::ShapeMismatch(msg));
    }
    if store.t() == 0 {
        return Err(Error::invalid("trial store is empty; run `trials` first"));
    }
    Ok(store)
}

fn save_store(store: &TrialStore, path: &Path) -> Result<()> {
    let tmp = path.with_extension("bin.tmp");
    write_file(&tmp, &store.to_bytes())?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<Vec<String>> {
    let DatasetSource::Synthetic(spec) = &cfg.dataset else {
        return Err(Error::invalid("gen needs a synthetic dataset source"));
    };
    let (train, test, truth) = dataset::generate_longtail(spec)?;
    let dir = out(cfg, &["dataset"]);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    echo_config(cfg)?;
    dataset::save_csv(&train, dir.join("train.csv"))?;
    dataset::save_csv(&test, dir.join("test.csv"))?;
    dataset::save_truth_csv(&train, &truth.train_subpop, &truth.mislabeled, dir.join("train_truth.csv"))?;
    dataset::save_truth_csv(&test, &truth.test_subpop, &vec![false; test.len()], dir.join("test_truth.csv"))?;
    let singletons = (0..train.len()).filter(|&i| truth.is_singleton(i)).count();
    Ok(vec![format!(
        "wrote {} train / {} test examples to {} ({} mislabeled, {} singleton-subpopulation examples)",
        train.len(),
        test.len(),
        dir.display(),
        truth.mislabeled.iter().filter(|&&b| b).count(),
        singletons
    )])
}

pub fn cmd_trials(cfg: &RunConfig) -> Result<Vec<String>> {
    let data = load_data(cfg)?;
    let plan = plan(cfg, &data)?;
    let path = store_path(cfg);
    echo_config(cfg)?;
    let existing = if path.is_file() { Some(TrialStore::load(&path)?) } else { None };
    if let Some(store) = &existing {
        if let Some(msg) = store_mismatch(store, cfg, &plan) {
            return Err(Error::ShapeMismatch(msg));
        }
    }
    let par = cfg.trials.parallelism;
    match cfg.trials.mode {
        TrialMode::Enumerate => {
            if let Some(store) = existing {
                return Ok(vec![format!("store complete: {} enumerated trials, nothing to do", store.t())]);
            }
            let store = trials::enumerate_trials(&data.train, &data.test, plan.m, &plan.learner, cfg.trials.enumeration_cap, par)?;
            save_store(&store, &path)?;
            Ok(vec![format!("enumerated {} subsets of size {} into {}", store.t(), plan.m, path.display())])
        }
        TrialMode::Sampled => {
            let have = existing.as_ref().map_or(0, TrialStore::t);
            if have >= plan.t {
                return Ok(vec![format!("store complete: {have} trials (requested {}), nothing to do", plan.t)]);
            }
            let fresh = trials::run_trial_range(&data.train, &data.test, &plan, have as u64, plan.t - have, par)?;
            let store = match existing {
                Some(old) => old.merge(&fresh)?,
                None => fresh,
            };
            save_store(&store, &path)?;
            Ok(vec![format!(
                "ran trials {have}..{} (m = {}, learner {}) into {}",
                store.t(),
                plan.m,
                plan.learner.kind(),
                path.display()
            )])
        }
    }
}

fn influence_mode(cfg: &RunConfig) -> InfluenceMode {
    match cfg.estimate.influence {
        InfluenceOutput::Dense => InfluenceMode::Dense,
        InfluenceOutput::Sparse => InfluenceMode::Sparse(cfg.estimate.sparse_floor),
    }
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<Vec<String>> {
    let data = load_data(cfg)?;
    let store = load_store(cfg, &data)?;
    echo_config(cfg)?;
    let mem = estimator::estimate_memorization(&store)?;
    let infl = estimator::estimate_influence(&store, influence_mode(cfg))?;
    write_with(&out(cfg, &["estimates", "mem.csv"]), |b| mem.write_csv(b))?;
    write_file(out(cfg, &["estimates", "mem.json"]), (mem.to_json()? + "\n").as_bytes())?;
    write_with(&out(cfg, &["estimates", "influence.csv"]), |b| infl.write_csv(b))?;
    let (mode, floor) = match cfg.estimate.influence {
        InfluenceOutput::Dense => ("dense", None),
        InfluenceOutput::Sparse => ("sparse", Some(cfg.estimate.sparse_floor)),
    };
    write_json(
        &out(cfg, &["estimates", "influence.json"]),
        &json!({ "mode": mode, "floor": floor, "n": infl.n, "n_test": infl.n_test, "t": infl.t, "n_in": infl.n_in }),
    )?;
    let fallbacks = mem.rows.iter().filter(|r| r.fallback_used).count();
    let high = mem.rows.iter().filter(|r| r.estimate >= cfg.select.theta_mem).count();
    Ok(vec![
        format!("estimated {} examples from {} trials ({fallbacks} used the fallback)", mem.len(), mem.t),
        format!("{high} examples have memorization ≥ {}", cfg.select.theta_mem),
    ])
}

/// Selected pairs for the run, recomputed from its store.
pub fn pairs_for(cfg: &RunConfig, data: &Data, store: &TrialStore) -> Result<(MemEstimateTable, InfluenceTable, Vec<InfluencePair>)> {
    let mem = estimator::estimate_memorization(store)?;
    let infl = estimator::estimate_influence(store, influence_mode(cfg))?;
    let pairs = analysis::select_pairs(&mem, &infl, cfg.select.theta_mem, cfg.select.theta_infl, data.train.labels(), data.test.labels())?;
    Ok((mem, infl, pairs))
}

fn check_select_thresholds(cfg: &RunConfig) -> Result<()> {
    for (name, th) in [("theta_mem", cfg.select.theta_mem), ("theta_infl", cfg.select.theta_infl)] {
        if !(-1.0..=1.0).contains(&th) {
            return Err(Error::invalid(format!("threshold out of range: {name} = {th} is outside [-1, 1]")));
        }
    }
    Ok(())
}

pub fn cmd_select(cfg: &RunConfig) -> Result<Vec<String>> {
    check_select_thresholds(cfg)?;
    let data = load_data(cfg)?;
    let store = load_store(cfg, &data)?;
    echo_config(cfg)?;
    let (_, _, pairs) = pairs_for(cfg, &data, &store)?;
    write_with(&out(cfg, &["pairs", "pairs.csv"]), |buf| analysis::write_pairs_csv(&pairs, buf))?;
    let stats = analysis::pair_statistics(&pairs, data.test.len());
    let same_subpop = data.truth.as_ref().map(|gt| {
        pairs
            .iter()
            .filter(|p| gt.train_subpop[p.train_idx] == gt.test_subpop[p.test_idx])
            .count()
    });
    write_json(
        &out(cfg, &["pairs", "statistics.json"]),
        &json!({
            "theta_mem": cfg.select.theta_mem,
            "theta_infl": cfg.select.theta_infl,
            "statistics": stats,
            "pairs_sharing_subpopulation": same_subpop,
        }),
    )?;
    let mut lines = vec![format!(
        "{} pairs, {} unique test examples, {} with a single influencer",
        stats.n_pairs, stats.n_unique_test, stats.n_single_influencer
    )];
    let reps_path = out(cfg, &["pairs", "representatives.csv"]);
    match analysis::pick_representative(&pairs, cfg.select.n_copies, cfg.select.n_egs) {
        Ok(grid) => {
            let mut text = String::from("row,copy,train_idx\n");
            for (r, row) in grid.iter().enumerate() {
                for (c, i) in row.iter().enumerate() {
                    text += &format!("{r},{c},{i}\n");
                }
            }
            write_file(&reps_path, text.as_bytes())?;
        }
        Err(e) => {
            if reps_path.exists() {
                std::fs::remove_file(&reps_path).map_err(|err| Error::io(&reps_path, err))?;
            }
            lines.push(format!("no representatives: {e}"));
        }
    }
    Ok(lines)
}

#[derive(Serialize)]
struct LemmaRow {
    t: u64,
    repetitions: usize,
    bound: f64,
    mean_mse: f64,
    max_mse: f64,
    /// Indices whose own MSE exceeds the bound.
    exceedances: usize,
}

pub fn cmd_oracle(cfg: &RunConfig) -> Result<Vec<String>> {
    let data = load_data(cfg)?;
    let (train, test) = (&data.train, &data.test);
    let m = subset_size(cfg, train.len())?;
    let cap = cfg.oracle.cap;
    echo_config(cfg)?;
    let exact = |z: Probe<'_>, i: usize, arm| oracle::exact_subsampled_influence(train, z, &cfg.learner, m, i, arm, cap);

    let mut mem_csv = String::from("i,exact,exact_size_minus_one\n");
    let mut exact_mem = Vec::with_capacity(train.len());
    for i in 0..train.len() {
        let v = exact(Probe::train(train, i), i, ExclusionArm::SizeM)?.value;
        let alt = if m >= 2 {
            exact(Probe::train(train, i), i, ExclusionArm::SizeMinusOne)?.value.to_string()
        } else {
            String::new()
        };
        mem_csv += &format!("{i},{v},{alt}\n");
        exact_mem.push(v);
    }
    write_file(out(cfg, &["reports", "oracle_mem.csv"]), mem_csv.as_bytes())?;

    let mut infl_csv = String::from("i,j,exact,exact_size_minus_one\n");
    let mut exact_infl = Vec::with_capacity(train.len() * test.len());
    for i in 0..train.len() {
        for j in 0..test.len() {
            let z = Probe::train(test, j);
            let v = exact(z, i, ExclusionArm::SizeM)?.value;
            let alt = if m >= 2 {
                exact(z, i, ExclusionArm::SizeMinusOne)?.value.to_string()
            } else {
                String::new()
            };
            infl_csv += &format!("{i},{j},{v},{alt}\n");
            exact_infl.push(v);
        }
    }
    write_file(out(cfg, &["reports", "oracle_influence.csv"]), infl_csv.as_bytes())?;

    // The estimator on the enumeration store must reproduce the oracle.
    let store = trials::enumerate_trials(train, test, m, &cfg.learner, cap, cfg.trials.parallelism)?;
    let mem = estimator::estimate_memorization(&store)?;
    let infl = estimator::estimate_influence(&store, InfluenceMode::Dense)?;
    let mut max_diff: f64 = 0.0;
    for i in 0..train.len() {
        max_diff = max_diff.max((mem.rows[i].estimate - exact_mem[i]).abs());
        for j in 0..test.len() {
            max_diff = max_diff.max((infl.get(i, j).unwrap_or(f64::NAN) - exact_infl[i * test.len() + j]).abs());
        }
    }

    let p = estimator::inclusion_rate(train.len(), m);
    let mut lemma = Vec::new();
    if p > 0.0 {
        for &t in &cfg.oracle.lemma_t {
            let samples = (0..cfg.oracle.lemma_repetitions as u64)
                .map(|rep| {
                    let seed = seed::derive(cfg.oracle.seed, &[t, rep]);
                    let plan = TrialPlan::new(train, test, m, t as usize, seed, cfg.learner.clone());
                    let store = trials::run_trials(train, test, &plan, cfg.trials.parallelism)?;
                    Ok(estimator::estimate_memorization(&store)?.estimates())
                })
                .collect::<Result<Vec<_>>>()?;
            let mse = estimator::empirical_mse(&samples, &exact_mem)?;
            let bound = estimator::lemma1_bound(p, t)?;
            lemma.push(LemmaRow {
                t,
                repetitions: samples.len(),
                bound,
                mean_mse: mse.iter().sum::<f64>() / mse.len() as f64,
                max_mse: mse.iter().copied().fold(0.0, f64::max),
                exceedances: mse.iter().filter(|&&v| v > bound).count(),
            });
        }
    }
    let cost = oracle::loo_cost(train.len(), cfg.oracle.target_stderr, cfg.trials.t as u64)?;
    write_json(
        &out(cfg, &["reports", "oracle.json"]),
        &json!({
            "m": m,
            "enumerated_subsets": store.t(),
            "estimator_max_abs_difference": max_diff,
            "p": p,
            "lemma1": lemma,
            "loo_cost": cost,
        }),
    )?;
    let mut lines = vec![format!(
        "exact values over {} subsets; estimator on the enumeration store differs by at most {max_diff:e}",
        store.t()
    )];
    for row in &lemma {
        lines.push(format!(
            "t = {}: mean MSE {:.5} (max {:.5}) vs bound {:.5}",
            row.t, row.mean_mse, row.max_mse, row.bound
        ));
    }
    lines.push(format!(
        "leave-one-out at stderr {}: {} trainings vs {} subsampled",
        cost.target_stderr, cost.loo_trainings, cost.subsampled_trainings
    ));
    Ok(lines)
}

pub fn cmd_removal(cfg: &RunConfig) -> Result<Vec<String>> {
    let data = load_data(cfg)?;
    let store = load_store(cfg, &data)?;
    echo_config(cfg)?;
    let mem = estimator::estimate_memorization(&store)?.estimates();
    let r = &cfg.removal;
    let curve = analysis::removal_experiment(&data.train, &data.test, &cfg.learner, &mem, &r.thresholds, r.repeats, r.seed)?;
    let mut tests = Vec::new();
    let mut lines = vec![format!("baseline accuracy {:.4} ± {:.4}", curve.baseline.mean, curve.baseline.std)];
    for row in &curve.rows {
        match (&row.targeted, &row.random) {
            (Some(t), Some(rnd)) => {
                // Positive when targeted removal hurts more than random removal.
                let test = if r.repeats >= 2 {
                    Some(analysis::paired_one_sided_t_test(&rnd.accuracies, &t.accuracies)?)
                } else {
                    None
                };
                lines.push(format!(
                    "θ = {}: removed {}, targeted {:.4} ± {:.4}, random {:.4} ± {:.4}{}",
                    row.threshold,
                    row.removed_count,
                    t.mean,
                    t.std,
                    rnd.mean,
                    rnd.std,
                    test.map(|x| format!(", one-sided p = {:.3e}", x.p_value)).unwrap_or_default()
                ));
                tests.push(json!({ "threshold": row.threshold, "paired_test": test }));
            }
            _ => lines.push(format!(
                "θ = {}: removed {}, skipped ({})",
                row.threshold,
                row.removed_count,
                row.skipped.as_deref().unwrap_or("")
            )),
        }
    }
    write_with(&out(cfg, &["reports", "removal.csv"]), |b| curve.write_csv(b))?;
    write_with(&out(cfg, &["reports", "removal_targeted.csv"]), |b| curve.write_plot_csv(true, b))?;
    write_with(&out(cfg, &["reports", "removal_random.csv"]), |b| curve.write_plot_csv(false, b))?;
    write_json(&out(cfg, &["reports", "removal.json"]), &json!({ "curve": curve, "tests": tests }))?;
    Ok(lines)
}

pub fn cmd_marginal(cfg: &RunConfig) -> Result<Vec<String>> {
    check_select_thresholds(cfg)?;
    let data = load_data(cfg)?;
    let store = load_store(cfg, &data)?;
    echo_config(cfg)?;
    let (_, _, pairs) = pairs_for(cfg, &data, &store)?;
    let report = analysis::marginal_utility(&data.train, &data.test, &cfg.learner, &pairs, cfg.marginal.repeats, cfg.marginal.seed)?;
    write_json(&out(cfg, &["reports", "marginal.json"]), &report)?;
    Ok(vec![
        format!(
            "removed {} training examples; accuracy {:.4} -> {:.4}",
            report.n_removed, report.full.mean, report.reduced.mean
        ),
        format!(
            "overall drop {:.4} ± {:.4}; on the {} influenced test examples {:.4} ± {:.4}; contribution {:.4} ± {:.4}",
            report.overall_difference.mean,
            report.overall_difference.std,
            report.n_influenced_test,
            report.restricted_difference.mean,
            report.restricted_difference.std,
            report.contribution.mean,
            report.contribution.std
        ),
    ])
}

/// Influence for consistency: dense when it fits, otherwise sparse with a
/// floor safely below every threshold.
fn consistency_influence(cfg: &RunConfig, store: &TrialStore) -> Result<InfluenceTable> {
    let p = store.plan();
    if p.n.saturating_mul(p.n_test) <= estimator::DENSE_LIMIT {
        estimator::estimate_influence(store, InfluenceMode::Dense)
    } else {
        let min = cfg.consistency.infl_thresholds.iter().copied().fold(1.0, f64::min);
        estimator::estimate_influence(store, InfluenceMode::Sparse(min - 0.05))
    }
}

pub fn cmd_consistency(cfg_a: &RunConfig, cfg_b: &RunConfig) -> Result<Vec<String>> {
    let data_a = load_data(cfg_a)?;
    let data_b = load_data(cfg_b)?;
    if data_a.train != data_b.train || data_a.test != data_b.test {
        return Err(Error::ShapeMismatch("the two runs use different datasets".into()));
    }
    let store_a = load_store(cfg_a, &data_a)?;
    let store_b = load_store(cfg_b, &data_b)?;
    echo_config(cfg_a)?;
    let mem_a = estimator::estimate_memorization(&store_a)?.estimates();
    let mem_b = estimator::estimate_memorization(&store_b)?.estimates();
    let c = &cfg_a.consistency;
    let mem_report = analysis::mem_consistency(&mem_a, &mem_b, &c.mem_thresholds)?;
    let infl_a = consistency_influence(cfg_a, &store_a)?;
    let infl_b = consistency_influence(cfg_a, &store_b)?;
    let infl_report = analysis::infl_consistency(&mem_a, &infl_a, &mem_b, &infl_b, &c.infl_thresholds, c.mem_constraint)?;
    write_with(&out(cfg_a, &["reports", "consistency_mem.csv"]), |b| mem_report.write_csv(b))?;
    write_with(&out(cfg_a, &["reports", "consistency_infl.csv"]), |b| infl_report.write_csv(b))?;
    write_json(
        &out(cfg_a, &["reports", "consistency.json"]),
        &json!({
            "other_output": cfg_b.output.display().to_string(),
            "mem_constraint": c.mem_constraint,
            "memorization": mem_report,
            "influence": infl_report,
        }),
    )?;
    let mut lines = Vec::new();
    for r in mem_report.rows.iter() {
        lines.push(format!(
            "mem θ = {}: J = {:.3}, D = {:.4} (sizes {} / {})",
            r.threshold, r.jaccard, r.mean_abs_difference, r.size_a, r.size_b
        ));
    }
    for r in infl_report.rows.iter() {
        lines.push(format!(
            "infl θ = {}: J = {:.3}, D = {:.4} (sizes {} / {})",
            r.threshold, r.jaccard, r.mean_abs_difference, r.size_a, r.size_b
        ));
    }
    Ok(lines)
}
