//! Run configuration: a TOML file with one table per pipeline stage, plus
//! `section.key=value` overrides from the command line.

use std::path::{Path, PathBuf};

use meminfl::analysis::{DEFAULT_THETA_INFL, DEFAULT_THETA_MEM};
use meminfl::config::{parse_table, toml_float, Section};
use meminfl::dataset::SyntheticSpec;
use meminfl::learners::LearnerSpec;
use meminfl::trials::DEFAULT_ENUMERATION_CAP;
use meminfl::{Error, Result};
use toml::{Table, Value};

pub const SECTIONS: &[&str] = &[
    "dataset",
    "learner",
    "trials",
    "estimate",
    "select",
    "removal",
    "marginal",
    "consistency",
    "oracle",
    "output",
];

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Csv {
        train: PathBuf,
        test: PathBuf,
        n_classes: Option<usize>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrialMode {
    Sampled,
    Enumerate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialsConfig {
    pub mode: TrialMode,
    pub m_fraction: f64,
    /// Explicit subset size; overrides `m_fraction`.
    pub m: Option<usize>,
    pub t: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub enumeration_cap: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InfluenceOutput {
    Dense,
    Sparse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateConfig {
    pub influence: InfluenceOutput,
    pub sparse_floor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectConfig {
    pub theta_mem: f64,
    pub theta_infl: f64,
    pub n_copies: usize,
    pub n_egs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemovalConfig {
    pub thresholds: Vec<f64>,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginalConfig {
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyConfig {
    pub mem_thresholds: Vec<f64>,
    pub infl_thresholds: Vec<f64>,
    /// Memorization floor applied to influence pairs; `None` drops it.
    pub mem_constraint: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    pub cap: u64,
    pub lemma_t: Vec<u64>,
    pub lemma_repetitions: usize,
    pub seed: u64,
    pub target_stderr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub learner: LearnerSpec,
    pub trials: TrialsConfig,
    pub estimate: EstimateConfig,
    pub select: SelectConfig,
    pub removal: RemovalConfig,
    pub marginal: MarginalConfig,
    pub consistency: ConsistencyConfig,
    pub oracle: OracleConfig,
    pub output: PathBuf,
}

fn default_thresholds() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

/// Splits `section.key=value`; the value is read as TOML, or as a bare string
/// when it does not parse.
fn parse_override(text: &str) -> Result<(String, String, Value)> {
    let (path, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {text:?} is not section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("override {text:?} is not section.key=value")))?;
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((section.to_string(), key.to_string(), value))
}

fn section_table<'a>(root: &'a Table, name: &str) -> Result<&'a Table> {
    static EMPTY: std::sync::OnceLock<Table> = std::sync::OnceLock::new();
    match root.get(name) {
        None => Ok(EMPTY.get_or_init(Table::new)),
        Some(Value::Table(t)) => Ok(t),
        Some(_) => Err(Error::Config(format!("{name} must be a table"))),
    }
}

fn check_fraction(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(Error::Config(format!("{name} = {v} must lie in (0, 1)")))
    }
}

fn positive(name: &str, v: usize) -> Result<usize> {
    if v == 0 {
        Err(Error::Config(format!("{name} must be at least 1")))
    } else {
        Ok(v)
    }
}

impl RunConfig {
    /// Reads `path` (if given), applies `overrides`, and validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String], parallelism: Option<usize>) -> Result<Self> {
        let mut root = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                parse_table(&text)?
            }
            None => Table::new(),
        };
        for o in overrides {
            let (section, key, value) = parse_override(o)?;
            let entry = root.entry(section.clone()).or_insert_with(|| Value::Table(Table::new()));
            match entry {
                Value::Table(t) => {
                    t.insert(key, value);
                }
                _ => return Err(Error::Config(format!("{section} must be a table"))),
            }
        }
        if let Some(p) = parallelism {
            let trials = root.entry("trials").or_insert_with(|| Value::Table(Table::new()));
            if let Value::Table(t) = trials {
                t.insert("parallelism".into(), Value::Integer(p as i64));
            }
        }
        Self::from_table(&root)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_table(&parse_table(text)?)
    }

    pub fn from_table(root: &Table) -> Result<Self> {
        let unknown: Vec<&str> = root.keys().map(String::as_str).filter(|k| !SECTIONS.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown sections: {}", unknown.join(", "))));
        }

        let mut s = Section::new("dataset", section_table(root, "dataset")?);
        let dataset = match s.str_opt("source")?.unwrap_or("synthetic") {
            "synthetic" => {
                let d = SyntheticSpec::default();
                let spec = SyntheticSpec {
                    n_subpop: s.usize_or("n_subpop", d.n_subpop)?,
                    zipf_exponent: s.f64_or("zipf_exponent", d.zipf_exponent)?,
                    n_train: s.usize_or("n_train", d.n_train)?,
                    n_test: s.usize_or("n_test", d.n_test)?,
                    dim: s.usize_or("dim", d.dim)?,
                    n_classes: s.usize_or("n_classes", d.n_classes)?,
                    cluster_sep: s.f64_or("cluster_sep", d.cluster_sep)?,
                    noise_rate: s.f64_or("noise_rate", d.noise_rate)?,
                    seed: s.u64_or("seed", d.seed)?,
                };
                spec.validate().map_err(|e| Error::Config(format!("[dataset] {e}")))?;
                DatasetSource::Synthetic(spec)
            }
            "csv" => {
                let mut path = |key| -> Result<PathBuf> {
                    s.str_opt(key)?
                        .map(PathBuf::from)
                        .ok_or_else(|| Error::Config(format!("[dataset] csv source needs {key}")))
                };
                let (train, test) = (path("train")?, path("test")?);
                DatasetSource::Csv {
                    train,
                    test,
                    n_classes: s.u64_opt("n_classes")?.map(|c| c as usize),
                }
            }
            other => return Err(Error::Config(format!("[dataset] unknown source {other:?}"))),
        };
        s.finish()?;

        let learner = match root.get("learner") {
            None => LearnerSpec::Knn { k: 1 },
            Some(_) => LearnerSpec::from_table(section_table(root, "learner")?)?,
        };

        let mut s = Section::new("trials", section_table(root, "trials")?);
        let mode = match s.str_opt("mode")?.unwrap_or("sampled") {
            "sampled" => TrialMode::Sampled,
            "enumerate" => TrialMode::Enumerate,
            other => return Err(Error::Config(format!("[trials] unknown mode {other:?}"))),
        };
        let trials = TrialsConfig {
            mode,
            m_fraction: check_fraction("[trials] m_fraction", s.f64_or("m_fraction", 0.7)?)?,
            m: s.u64_opt("m")?.map(|m| m as usize),
            t: positive("[trials] t", s.usize_or("t", 2000)?)?,
            seed: s.u64_or("seed", 0)?,
            parallelism: positive("[trials] parallelism", s.usize_or("parallelism", 1)?)?,
            enumeration_cap: s.u64_or("enumeration_cap", DEFAULT_ENUMERATION_CAP)?,
        };
        s.finish()?;

        let mut s = Section::new("estimate", section_table(root, "estimate")?);
        let estimate = EstimateConfig {
            influence: match s.str_opt("influence")?.unwrap_or("dense") {
                "dense" => InfluenceOutput::Dense,
                "sparse" => InfluenceOutput::Sparse,
                other => return Err(Error::Config(format!("[estimate] unknown influence mode {other:?}"))),
            },
            sparse_floor: s.f64_or("sparse_floor", 0.1)?,
        };
        s.finish()?;

        let mut s = Section::new("select", section_table(root, "select")?);
        let select = SelectConfig {
            theta_mem: s.f64_or("theta_mem", DEFAULT_THETA_MEM)?,
            theta_infl: s.f64_or("theta_infl", DEFAULT_THETA_INFL)?,
            n_copies: positive("[select] n_copies", s.usize_or("n_copies", 3)?)?,
            n_egs: positive("[select] n_egs", s.usize_or("n_egs", 5)?)?,
        };
        s.finish()?;

        let mut s = Section::new("removal", section_table(root, "removal")?);
        let removal = RemovalConfig {
            thresholds: s.f64_list_opt("thresholds")?.unwrap_or_else(default_thresholds),
            repeats: positive("[removal] repeats", s.usize_or("repeats", 20)?)?,
            seed: s.u64_or("seed", 0)?,
        };
        s.finish()?;

        let mut s = Section::new("marginal", section_table(root, "marginal")?);
        let marginal = MarginalConfig {
            repeats: positive("[marginal] repeats", s.usize_or("repeats", 20)?)?,
            seed: s.u64_or("seed", 0)?,
        };
        s.finish()?;

        let mut s = Section::new("consistency", section_table(root, "consistency")?);
        let consistency = ConsistencyConfig {
            mem_thresholds: s.f64_list_opt("mem_thresholds")?.unwrap_or_else(default_thresholds),
            infl_thresholds: s.f64_list_opt("infl_thresholds")?.unwrap_or_else(|| vec![0.15, 0.2, 0.3, 0.5]),
            mem_constraint: if s.bool_or("apply_mem_constraint", true)? {
                Some(s.f64_or("mem_constraint", DEFAULT_THETA_MEM)?)
            } else {
                s.allow("mem_constraint");
                None
            },
        };
        s.finish()?;

        let mut s = Section::new("oracle", section_table(root, "oracle")?);
        let oracle = OracleConfig {
            cap: s.u64_or("cap", DEFAULT_ENUMERATION_CAP)?,
            lemma_t: match s.f64_list_opt("lemma_t")? {
                None => vec![64, 256, 1024],
                Some(v) => v
                    .into_iter()
                    .map(|x| {
                        if x >= 1.0 && x.fract() == 0.0 {
                            Ok(x as u64)
                        } else {
                            Err(Error::Config(format!("[oracle] lemma_t entries must be positive integers, got {x}")))
                        }
                    })
                    .collect::<Result<_>>()?,
            },
            lemma_repetitions: positive("[oracle] lemma_repetitions", s.usize_or("lemma_repetitions", 100)?)?,
            seed: s.u64_or("seed", 0)?,
            target_stderr: s.f64_or("target_stderr", 0.05)?,
        };
        s.finish()?;

        let mut s = Section::new("output", section_table(root, "output")?);
        let output = PathBuf::from(s.str_opt("dir")?.unwrap_or("out"));
        s.finish()?;

        Ok(RunConfig {
            dataset,
            learner,
            trials,
            estimate,
            select,
            removal,
            marginal,
            consistency,
            oracle,
            output,
        })
    }

    /// The fully resolved configuration, defaults included, in the same
    /// format [`RunConfig::parse`] reads.
    pub fn to_toml(&self) -> String {
        let f = |v: f64| toml_float(v);
        let list = |v: &[f64]| format!("[{}]", v.iter().map(|x| toml_float(*x)).collect::<Vec<_>>().join(", "));
        let quote = |p: &Path| Value::String(p.display().to_string()).to_string();
        let mut out = String::from("[dataset]\n");
        match &self.dataset {
            DatasetSource::Synthetic(d) => {
                out += &format!(
                    "source = \"synthetic\"\nn_subpop = {}\nzipf_exponent = {}\nn_train = {}\nn_test = {}\ndim = {}\nn_classes = {}\ncluster_sep = {}\nnoise_rate = {}\nseed = {}\n",
                    d.n_subpop,
                    f(d.zipf_exponent),
                    d.n_train,
                    d.n_test,
                    d.dim,
                    d.n_classes,
                    f(d.cluster_sep),
                    f(d.noise_rate),
                    d.seed
                );
            }
            DatasetSource::Csv { train, test, n_classes } => {
                out += &format!("source = \"csv\"\ntrain = {}\ntest = {}\n", quote(train), quote(test));
                if let Some(c) = n_classes {
                    out += &format!("n_classes = {c}\n");
                }
            }
        }
        out += "\n[learner]\n";
        out += &self.learner.to_config_string();
        let t = &self.trials;
        out += &format!(
            "\n[trials]\nmode = \"{}\"\nm_fraction = {}\n",
            match t.mode {
                TrialMode::Sampled => "sampled",
                TrialMode::Enumerate => "enumerate",
            },
            f(t.m_fraction)
        );
        if let Some(m) = t.m {
            out += &format!("m = {m}\n");
        }
        out += &format!(
            "t = {}\nseed = {}\nparallelism = {}\nenumeration_cap = {}\n",
            t.t, t.seed, t.parallelism, t.enumeration_cap
        );
        out += &format!(
            "\n[estimate]\ninfluence = \"{}\"\nsparse_floor = {}\n",
            match self.estimate.influence {
                InfluenceOutput::Dense => "dense",
                InfluenceOutput::Sparse => "sparse",
            },
            f(self.estimate.sparse_floor)
        );
        let s = &self.select;
        out += &format!(
            "\n[select]\ntheta_mem = {}\ntheta_infl = {}\nn_copies = {}\nn_egs = {}\n",
            f(s.theta_mem),
            f(s.theta_infl),
            s.n_copies,
            s.n_egs
        );
        out += &format!(
            "\n[removal]\nthresholds = {}\nrepeats = {}\nseed = {}\n",
            list(&self.removal.thresholds),
            self.removal.repeats,
            self.removal.seed
        );
        out += &format!("\n[marginal]\nrepeats = {}\nseed = {}\n", self.marginal.repeats, self.marginal.seed);
        let c = &self.consistency;
        out += &format!(
            "\n[consistency]\nmem_thresholds = {}\ninfl_thresholds = {}\napply_mem_constraint = {}\n",
            list(&c.mem_thresholds),
            list(&c.infl_thresholds),
            c.mem_constraint.is_some()
        );
        if let Some(mc) = c.mem_constraint {
            out += &format!("mem_constraint = {}\n", f(mc));
        }
        let o = &self.oracle;
        out += &format!(
            "\n[oracle]\ncap = {}\nlemma_t = [{}]\nlemma_repetitions = {}\nseed = {}\ntarget_stderr = {}\n",
            o.cap,
            o.lemma_t.iter().map(u64::to_string).collect::<Vec<_>>().join(", "),
            o.lemma_repetitions,
            o.seed,
            f(o.target_stderr)
        );
        out += &format!("\n[output]\ndir = {}\n", quote(&self.output));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c.dataset, DatasetSource::Synthetic(SyntheticSpec::default()));
        assert_eq!(c.learner, LearnerSpec::Knn { k: 1 });
        assert_eq!(c.trials.m_fraction, 0.7);
        assert_eq!(c.trials.t, 2000);
        assert_eq!((c.select.theta_mem, c.select.theta_infl), (0.25, 0.15));
        assert_eq!(c.output, PathBuf::from("out"));
    }

    #[test]
    fn round_trip_through_toml() {
        let text = "[dataset]\nsource = \"csv\"\ntrain = \"a.csv\"\ntest = \"b.csv\"\n[learner]\nkind = \"logreg\"\nepochs = 7\n[trials]\nm = 5\nt = 9\n[consistency]\napply_mem_constraint = false\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(RunConfig::parse(&c.to_toml()).unwrap(), c);
        let d = RunConfig::parse("").unwrap();
        assert_eq!(RunConfig::parse(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn unknown_keys_are_listed() {
        let err = RunConfig::parse("[trials]\nt = 5\nbogus = 1\nzap = 2\n").unwrap_err();
        assert_eq!(err.to_string(), "config error: unknown keys in [trials]: bogus, zap");
        assert!(RunConfig::parse("[nope]\n").unwrap_err().to_string().contains("unknown sections: nope"));
        assert!(RunConfig::parse("[learner]\nkind = \"knn\"\nepochs = 3\n").is_err());
    }

    #[test]
    fn invalid_values() {
        assert!(RunConfig::parse("[trials]\nm_fraction = 1.0\n").is_err());
        assert!(RunConfig::parse("[trials]\nm_fraction = 0\n").is_err());
        assert!(RunConfig::parse("[trials]\nt = 0\n").is_err());
        assert!(RunConfig::parse("[trials]\nt = \"many\"\n").is_err());
        assert!(RunConfig::parse("[dataset]\nsource = \"csv\"\n").is_err());
        assert!(RunConfig::parse("[dataset]\nn_classes = 1\n").is_err());
    }

    #[test]
    fn overrides() {
        let (s, k, v) = parse_override("trials.t=17").unwrap();
        assert_eq!((s.as_str(), k.as_str(), v), ("trials", "t", Value::Integer(17)));
        let (_, _, v) = parse_override("output.dir=runs/a").unwrap();
        assert_eq!(v, Value::String("runs/a".into()));
        let (_, _, v) = parse_override("removal.thresholds=[0.1, 0.2]").unwrap();
        assert!(matches!(v, Value::Array(_)));
        assert!(parse_override("nodot=1").is_err());
        assert!(parse_override("a.b").is_err());
        let c = RunConfig::load(None, &["trials.t=17".into(), "learner.kind=knn".into(), "learner.k=3".into()], Some(4)).unwrap();
        assert_eq!((c.trials.t, c.trials.parallelism), (17, 4));
        assert_eq!(c.learner, LearnerSpec::Knn { k: 3 });
    }
}
