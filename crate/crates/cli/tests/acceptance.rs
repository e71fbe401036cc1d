//! Acceptance suite: runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion.
//!
//! The process exits 0 regardless of outcomes so that a criterion that is not
//! met is reported rather than hidden behind a red test run; set
//! `MEMINFL_ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.

use std::time::{Duration, Instant};

use meminfl::analysis::{self, mean_std};
use meminfl::dataset::{generate_longtail, GroundTruth, LabeledDataset, SyntheticSpec};
use meminfl::estimator::{self, InfluenceMode};
use meminfl::learners::{ConstantRule, LearnerSpec, MlpSpec, SgdConfig};
use meminfl::oracle::{self, ExclusionArm, Probe};
use meminfl::seed;
use meminfl::trials::{self, TrialPlan, TrialStore, DEFAULT_ENUMERATION_CAP};
use meminfl_cli::{commands, RunConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

const KNN: LearnerSpec = LearnerSpec::Knn { k: 1 };

/// Shared canonical-benchmark runs.
struct Canonical {
    train: LabeledDataset,
    test: LabeledDataset,
    truth: GroundTruth,
    m: usize,
    knn_a: Option<TrialStore>,
    logreg: Option<TrialStore>,
}

impl Canonical {
    fn new() -> Self {
        let (train, test, truth) = generate_longtail(&SyntheticSpec::default()).expect("canonical benchmark");
        let m = TrialPlan::subset_size(train.len(), 0.7);
        Canonical {
            train,
            test,
            truth,
            m,
            knn_a: None,
            logreg: None,
        }
    }

    fn run(&self, learner: LearnerSpec, t: usize, seed: u64) -> TrialStore {
        let plan = TrialPlan::new(&self.train, &self.test, self.m, t, seed, learner);
        trials::run_trials(&self.train, &self.test, &plan, 1).expect("canonical trials")
    }

    fn knn_a(&mut self) -> &TrialStore {
        if self.knn_a.is_none() {
            self.knn_a = Some(self.run(KNN, 2000, 1));
        }
        self.knn_a.as_ref().unwrap()
    }

    fn logreg(&mut self) -> &TrialStore {
        if self.logreg.is_none() {
            self.logreg = Some(self.run(LearnerSpec::LogReg(SgdConfig::logreg_default()), 2000, 3));
        }
        self.logreg.as_ref().unwrap()
    }
}

/// The n = 12 long-tail micro-dataset and a probe set holding its test
/// points followed by every training point.
fn micro() -> (LabeledDataset, LabeledDataset) {
    let spec = SyntheticSpec {
        n_subpop: 6,
        zipf_exponent: 1.0,
        n_train: 12,
        n_test: 6,
        dim: 2,
        n_classes: 3,
        cluster_sep: 6.0,
        noise_rate: 0.1,
        seed: 7,
    };
    let (train, test, _) = generate_longtail(&spec).expect("micro dataset");
    let rows = (0..test.len())
        .map(|j| test.features(j).to_vec())
        .chain((0..train.len()).map(|i| train.features(i).to_vec()))
        .collect();
    let labels = test.labels().iter().chain(train.labels()).copied().collect();
    (train, LabeledDataset::unnamed(rows, labels, 3).expect("probe set"))
}

fn exact_tables(train: &LabeledDataset, probes: &LabeledDataset, m: usize, arm: ExclusionArm) -> (Vec<f64>, Vec<f64>) {
    let mem = (0..train.len())
        .map(|i| oracle::exact_memorization(train, &KNN, m, i, arm, DEFAULT_ENUMERATION_CAP).unwrap().value)
        .collect();
    let mut infl = Vec::new();
    for i in 0..train.len() {
        for j in 0..probes.len() {
            let z = Probe::train(probes, j);
            infl.push(oracle::exact_subsampled_influence(train, z, &KNN, m, i, arm, DEFAULT_ENUMERATION_CAP).unwrap().value);
        }
    }
    (mem, infl)
}

fn dense_values(table: &estimator::InfluenceTable) -> Vec<f64> {
    let mut v = Vec::with_capacity(table.n * table.n_test);
    for i in 0..table.n {
        for j in 0..table.n_test {
            v.push(table.get(i, j).unwrap());
        }
    }
    v
}

fn c1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let (train, probes) = micro();
    let store = trials::enumerate_trials(&train, &probes, 8, &KNN, DEFAULT_ENUMERATION_CAP, 1).unwrap();
    let mem = estimator::estimate_memorization(&store).unwrap().estimates();
    let infl = dense_values(&estimator::estimate_influence(&store, InfluenceMode::Dense).unwrap());
    let (exact_mem, exact_infl) = exact_tables(&train, &probes, 8, ExclusionArm::SizeM);
    let max_diff = mem
        .iter()
        .zip(&exact_mem)
        .chain(infl.iter().zip(&exact_infl))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    // Same comparison against the size-(m-1) exclusion arm, for the record.
    let (alt_mem, _) = exact_tables(&train, &probes, 8, ExclusionArm::SizeMinusOne);
    let alt_gap = mem.iter().zip(&alt_mem).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        store.t() == 495 && max_diff <= 1e-12 && elapsed < Duration::from_secs(10),
        format!(
            "{} trials, {} (i, z) values, max |estimate - exact| = {max_diff:e} (≤ 1e-12), {:.2?} (< 10 s); \
             gap to the size-(m-1) arm: {alt_gap:.4}",
            store.t(),
            exact_mem.len() + exact_infl.len(),
            elapsed
        ),
    )
}

fn c2_lemma1() -> Outcome {
    let start = Instant::now();
    let (train, probes) = micro();
    let (exact_mem, exact_infl) = exact_tables(&train, &probes, 8, ExclusionArm::SizeM);
    let p = estimator::inclusion_rate(12, 8);
    let mut pass = (p - 1.0 / 3.0).abs() < 1e-15;
    let mut parts = Vec::new();
    let mut previous = f64::INFINITY;
    for t in [64u64, 256, 1024] {
        let mut mem_samples = Vec::new();
        let mut infl_samples = Vec::new();
        for rep in 0..100u64 {
            let plan = TrialPlan::new(&train, &probes, 8, t as usize, seed::derive(2024, &[t, rep]), KNN);
            let store = trials::run_trials(&train, &probes, &plan, 1).unwrap();
            mem_samples.push(estimator::estimate_memorization(&store).unwrap().estimates());
            infl_samples.push(dense_values(&estimator::estimate_influence(&store, InfluenceMode::Dense).unwrap()));
        }
        let mse_mem = estimator::empirical_mse(&mem_samples, &exact_mem).unwrap();
        let mse_infl = estimator::empirical_mse(&infl_samples, &exact_infl).unwrap();
        let mean_mem = mse_mem.iter().sum::<f64>() / mse_mem.len() as f64;
        let mean_infl = mse_infl.iter().sum::<f64>() / mse_infl.len() as f64;
        let bound = estimator::lemma1_bound(p, t).unwrap();
        let over = mse_mem.iter().chain(&mse_infl).filter(|&&v| v > bound).count();
        pass &= mean_mem <= bound && mean_infl <= bound && mean_mem < previous;
        previous = mean_mem;
        parts.push(format!(
            "t={t}: mem MSE {mean_mem:.5}, infl MSE {mean_infl:.5}, bound {bound:.5}, {over} single-entry exceedances"
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    outcome(pass, format!("{}; {:.1?} (< 2 min)", parts.join("; "), elapsed))
}

fn c3_constant_zero(canon: &Canonical) -> Outcome {
    let mut total = 0usize;
    let mut nonzero = 0usize;
    let (micro_train, micro_probes) = micro();
    let datasets = [(&canon.train, &canon.test, canon.m), (&micro_train, &micro_probes, 8)];
    for (train, test, m) in datasets {
        for label in [0, 1] {
            let plan = TrialPlan::new(train, test, m, 200, 11, LearnerSpec::Constant(ConstantRule::Label(label)));
            let store = trials::run_trials(train, test, &plan, 1).unwrap();
            let mem = estimator::estimate_memorization(&store).unwrap();
            let infl = estimator::estimate_influence(&store, InfluenceMode::Dense).unwrap();
            for v in mem.estimates().into_iter().chain(dense_values(&infl)) {
                total += 1;
                nonzero += (v != 0.0) as usize;
            }
        }
    }
    outcome(nonzero == 0, format!("{nonzero} of {total} estimates differ from exactly 0"))
}

fn c4_mislabeled_singleton() -> Outcome {
    // Six class-0 points around the origin, five class-1 points around
    // (20, 0), and one class-1 point at (0, 8): eight σ from its neighbors,
    // which all carry label 0.
    let mut rng = seed::rng(99, &[]);
    use rand_distr::{Distribution, StandardNormal};
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (cx, label, count) in [(0.0, 0u32, 6), (20.0, 1, 5)] {
        for _ in 0..count {
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![cx + dx.clamp(-2.0, 2.0), dy.clamp(-2.0, 2.0)]);
            labels.push(label);
        }
    }
    rows.push(vec![0.0, 8.0]);
    labels.push(1);
    let target = rows.len() - 1;
    let train = LabeledDataset::unnamed(rows, labels, 2).unwrap();
    let test = train.select(&[0]);
    let exact_store = trials::enumerate_trials(&train, &test, 8, &KNN, DEFAULT_ENUMERATION_CAP, 1).unwrap();
    let exact = estimator::estimate_memorization(&exact_store).unwrap().rows[target].estimate;
    let plan = TrialPlan::new(&train, &test, 8, 1000, 5, KNN);
    let sampled_store = trials::run_trials(&train, &test, &plan, 1).unwrap();
    let sampled = estimator::estimate_memorization(&sampled_store).unwrap().rows[target].estimate;
    outcome(
        exact == 1.0 && sampled >= 0.95,
        format!("enumeration estimate {exact} (= 1), sampled t=1000 estimate {sampled} (≥ 0.95)"),
    )
}

fn c5_long_tail(canon: &mut Canonical) -> Outcome {
    let mem = estimator::estimate_memorization(canon.knn_a()).unwrap().estimates();
    let (mut tail, mut head) = (Vec::new(), Vec::new());
    for (i, &v) in mem.iter().enumerate() {
        if canon.truth.mislabeled[i] || canon.truth.is_singleton(i) {
            tail.push(v);
        } else {
            head.push(v);
        }
    }
    let (mt, mh) = (mean_std(&tail).0, mean_std(&head).0);
    outcome(
        mt - mh >= 0.25,
        format!(
            "mislabeled/singleton mean {mt:.4} (n={}) vs multi-representative mean {mh:.4} (n={}); gap {:.4} (≥ 0.25)",
            tail.len(),
            head.len(),
            mt - mh
        ),
    )
}

fn c6_removal(canon: &mut Canonical) -> Outcome {
    let mem = estimator::estimate_memorization(canon.logreg()).unwrap().estimates();
    let learner = LearnerSpec::LogReg(SgdConfig::logreg_default());
    let curve = analysis::removal_experiment(&canon.train, &canon.test, &learner, &mem, &[0.25], 20, 6).unwrap();
    let row = &curve.rows[0];
    let (Some(targeted), Some(random)) = (&row.targeted, &row.random) else {
        return outcome(false, format!("row skipped: {:?}", row.skipped));
    };
    let test = analysis::paired_one_sided_t_test(&random.accuracies, &targeted.accuracies).unwrap();
    outcome(
        test.significant(0.05),
        format!(
            "removed {}; baseline {:.4}, targeted {:.4} ± {:.4}, random {:.4} ± {:.4}; paired t = {:.2}, one-sided p = {:.2e} (< 0.05)",
            row.removed_count,
            curve.baseline.mean,
            targeted.mean,
            targeted.std,
            random.mean,
            random.std,
            test.t_statistic,
            test.p_value
        ),
    )
}

fn pair_summary(canon: &Canonical, store: &TrialStore) -> (usize, usize, usize, usize) {
    let mem = estimator::estimate_memorization(store).unwrap();
    let infl = estimator::estimate_influence(store, InfluenceMode::Dense).unwrap();
    let pairs = analysis::select_pairs(&mem, &infl, 0.25, 0.15, canon.train.labels(), canon.test.labels()).unwrap();
    let same = pairs
        .iter()
        .filter(|p| canon.truth.train_subpop[p.train_idx] == canon.truth.test_subpop[p.test_idx])
        .count();
    let stats = analysis::pair_statistics(&pairs, canon.test.len());
    (pairs.len(), same, stats.n_unique_test, stats.n_single_influencer)
}

fn c7_pairs(canon: &mut Canonical) -> Outcome {
    canon.logreg();
    canon.knn_a();
    let (n, same, uniq, single) = pair_summary(canon, canon.logreg.as_ref().unwrap());
    let (kn, ksame, kuniq, ksingle) = pair_summary(canon, canon.knn_a.as_ref().unwrap());
    let pass = n >= 20 && same as f64 >= 0.8 * n as f64 && 2 * single > uniq;
    outcome(
        pass,
        format!(
            "logreg t=2000: {n} pairs (≥ 20), {same} share a subpopulation ({:.1}% ≥ 80%), {single}/{uniq} influenced test examples \
             have one influencer ({:.1}% > 50%) [1-NN t=2000 for reference: {kn} pairs, {ksame} same, {ksingle}/{kuniq} single]",
            100.0 * same as f64 / n.max(1) as f64,
            100.0 * single as f64 / uniq.max(1) as f64
        ),
    )
}

fn c8_consistency(canon: &mut Canonical) -> Outcome {
    let a = estimator::estimate_memorization(canon.knn_a()).unwrap().estimates();
    let b = estimator::estimate_memorization(&canon.run(KNN, 2000, 2)).unwrap().estimates();
    let row = analysis::mem_consistency(&a, &b, &[0.25]).unwrap().rows[0];
    outcome(
        row.jaccard >= 0.7 && row.mean_abs_difference <= 0.05,
        format!(
            "J = {:.4} (≥ 0.7), D = {:.4} (≤ 0.05), set sizes {} / {}",
            row.jaccard, row.mean_abs_difference, row.size_a, row.size_b
        ),
    )
}

fn c9_last_layer(canon: &Canonical) -> Outcome {
    let t = 500;
    let base = MlpSpec::default();
    let count = |learner: LearnerSpec| {
        let store = canon.run(learner, t, 9);
        estimator::estimate_memorization(&store)
            .unwrap()
            .rows
            .iter()
            .filter(|r| r.estimate >= 0.25)
            .count()
    };
    let frozen = count(LearnerSpec::FrozenLinear {
        base: base.clone(),
        head: SgdConfig::logreg_default(),
    });
    let full = count(LearnerSpec::Mlp(base));
    let ratio = frozen as f64 / full.max(1) as f64;
    outcome(
        full > 0 && ratio < 0.25,
        format!("t={t} shared subsets: frozen_linear {frozen} vs mlp {full} examples with mem ≥ 0.25; ratio {ratio:.3} (< 0.25)"),
    )
}

fn c10_determinism() -> Outcome {
    let mut problems = Vec::new();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let outputs: Vec<Vec<Vec<u8>>> = dirs
        .iter()
        .map(|d| {
            let cfg = RunConfig::load(
                None,
                &[
                    "trials.t=300".into(),
                    "trials.seed=4".into(),
                    format!("output.dir={:?}", d.path().display().to_string()),
                ],
                Some(1),
            )
            .unwrap();
            for cmd in [commands::cmd_gen, commands::cmd_trials, commands::cmd_estimate, commands::cmd_select] {
                cmd(&cfg).unwrap();
            }
            ["estimates/mem.csv", "estimates/influence.csv", "pairs/pairs.csv", "pairs/statistics.json", "trials/store.bin"]
                .iter()
                .map(|f| std::fs::read(d.path().join(f)).unwrap())
                .collect()
        })
        .collect();
    if outputs[0] != outputs[1] {
        problems.push("pipeline outputs differ between reruns");
    }

    let (train, test, _) = generate_longtail(&SyntheticSpec::default()).unwrap();
    let plan = TrialPlan::new(&train, &test, 700, 120, 8, KNN);
    let one = trials::run_trials(&train, &test, &plan, 1).unwrap();
    let eight = trials::run_trials(&train, &test, &plan, 8).unwrap();
    if one.to_bytes() != eight.to_bytes() {
        problems.push("parallelism 1 and 8 give different stores");
    }
    let path = dirs[0].path().join("roundtrip.bin");
    one.save(&path).unwrap();
    let loaded = TrialStore::load(&path).unwrap();
    if loaded != one || std::fs::read(&path).unwrap() != one.to_bytes() {
        problems.push("save/load is not exact");
    }
    let a = trials::run_trial_range(&train, &test, &plan, 0, 70, 1).unwrap();
    let b = trials::run_trial_range(&train, &test, &plan, 70, 50, 1).unwrap();
    if a.merge(&b).unwrap().to_bytes() != one.to_bytes() || b.merge(&a).unwrap() != one {
        problems.push("merge of split runs differs from the single run");
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            "pipeline CSV/JSON outputs byte-identical across reruns; parallelism 1 = 8; save/load and merge exact".to_string()
        } else {
            problems.join("; ")
        },
    )
}

fn main() {
    let mut canon = Canonical::new();
    let mut results: Vec<(u32, &str, Outcome, Duration)> = Vec::new();
    let mut record = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let elapsed = start.elapsed();
        println!(
            "criterion {n:>2} {name}: {} ({:.1?}) — {}",
            if o.pass { "PASS" } else { "FAIL" },
            elapsed,
            o.detail
        );
        results.push((n, name, o, elapsed));
    };
    record(1, "oracle equivalence", &mut c1_oracle_equivalence);
    record(2, "lemma 1 bound", &mut c2_lemma1);
    record(3, "trivial-learner zero", &mut || c3_constant_zero(&canon));
    record(4, "mislabeled singleton", &mut c4_mislabeled_singleton);
    record(5, "long-tail structure", &mut || c5_long_tail(&mut canon));
    record(6, "removal directionality", &mut || c6_removal(&mut canon));
    record(7, "pair structure", &mut || c7_pairs(&mut canon));
    record(8, "consistency", &mut || c8_consistency(&mut canon));
    record(9, "last-layer analog", &mut || c9_last_layer(&canon));
    record(10, "infrastructure determinism", &mut c10_determinism);
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria pass{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() { String::new() } else { format!("; failing: {failed:?}") }
    );
    if !failed.is_empty() && std::env::var("MEMINFL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
