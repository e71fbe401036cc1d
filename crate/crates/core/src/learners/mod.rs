//! Training algorithms behind one interface.
//!
//! A [`LearnerSpec`] describes an algorithm; [`Learner::new`] prepares it
//! against the full training set (only the frozen-representation learner
//! needs that step) and [`Learner::train`] fits a [`Model`] on any subset.
//! Every source of randomness is keyed by the seed passed in, so training is
//! reentrant and reproducible.

mod knn;
mod linear;
mod mlp;
mod sgd;

pub use knn::{knn_vote, KnnModel};
pub use linear::{LinearModel, Standardizer};
pub use mlp::{fit_representation, MlpModel, RepresentationMap};
pub use sgd::SgdConfig;

use std::sync::Arc;

use toml::Table;

use crate::config::{parse_table, toml_float, Section};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// One-hidden-layer ReLU network hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub hidden_width: usize,
    pub sgd: SgdConfig,
}

impl Default for MlpSpec {
    fn default() -> Self {
        MlpSpec {
            hidden_width: 64,
            sgd: SgdConfig {
                epochs: 60,
                learning_rate: 0.05,
                batch_size: 16,
                l2: 0.0,
                momentum: 0.0,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstantRule {
    Label(u32),
    /// Most frequent label of the training subset, lowest class on ties.
    Majority,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LearnerSpec {
    /// k-nearest neighbours under Euclidean distance.
    Knn { k: usize },
    /// Multinomial logistic regression trained by minibatch SGD.
    LogReg(SgdConfig),
    Mlp(MlpSpec),
    Constant(ConstantRule),
    /// A fresh softmax head over the hidden layer of an MLP trained once on
    /// the full training set.
    FrozenLinear { base: MlpSpec, head: SgdConfig },
}

impl LearnerSpec {
    /// True when training is a pure function of the data, independent of the
    /// seed.
    pub fn is_deterministic(&self) -> bool {
        matches!(self, LearnerSpec::Knn { .. } | LearnerSpec::Constant(_))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LearnerSpec::Knn { .. } => "knn",
            LearnerSpec::LogReg(_) => "logreg",
            LearnerSpec::Mlp(_) => "mlp",
            LearnerSpec::Constant(_) => "constant",
            LearnerSpec::FrozenLinear { .. } => "frozen_linear",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerSpec::Knn { k } if *k == 0 => Err(Error::invalid("knn: k must be at least 1")),
            LearnerSpec::Knn { .. } | LearnerSpec::Constant(_) => Ok(()),
            LearnerSpec::LogReg(sgd) => sgd.validate("logreg"),
            LearnerSpec::Mlp(m) => m.validate(),
            LearnerSpec::FrozenLinear { base, head } => {
                base.validate()?;
                head.validate("frozen_linear head")
            }
        }
    }

    /// Canonical `key = value` form, readable by [`LearnerSpec::parse`].
    pub fn to_config_string(&self) -> String {
        let mut out = format!("kind = \"{}\"\n", self.kind());
        let sgd_lines = |out: &mut String, prefix: &str, s: &SgdConfig| {
            out.push_str(&format!("{prefix}epochs = {}\n", s.epochs));
            out.push_str(&format!("{prefix}learning_rate = {}\n", toml_float(s.learning_rate)));
            out.push_str(&format!("{prefix}batch_size = {}\n", s.batch_size));
            out.push_str(&format!("{prefix}l2 = {}\n", toml_float(s.l2)));
            out.push_str(&format!("{prefix}momentum = {}\n", toml_float(s.momentum)));
        };
        match self {
            LearnerSpec::Knn { k } => {
                out.push_str(&format!("k = {k}\nmetric = \"euclidean\"\n"));
            }
            LearnerSpec::LogReg(s) => sgd_lines(&mut out, "", s),
            LearnerSpec::Mlp(m) => {
                out.push_str(&format!("hidden_width = {}\n", m.hidden_width));
                sgd_lines(&mut out, "", &m.sgd);
            }
            LearnerSpec::Constant(ConstantRule::Label(y)) => out.push_str(&format!("label = {y}\n")),
            LearnerSpec::Constant(ConstantRule::Majority) => out.push_str("label = \"majority\"\n"),
            LearnerSpec::FrozenLinear { base, head } => {
                out.push_str(&format!("hidden_width = {}\n", base.hidden_width));
                sgd_lines(&mut out, "base_", &base.sgd);
                sgd_lines(&mut out, "", head);
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_table(&parse_table(text)?)
    }

    pub fn from_table(table: &Table) -> Result<Self> {
        let mut s = Section::new("learner", table);
        let spec = Self::from_section(&mut s)?;
        s.finish()?;
        Ok(spec)
    }

    /// Reads a learner from `s`, leaving unknown-key checks to the caller.
    pub fn from_section<'a>(s: &mut Section<'a>) -> Result<Self> {
        let kind = s
            .str_opt("kind")?
            .ok_or_else(|| Error::Config("[learner] kind is required".into()))?;
        let spec = match kind {
            "knn" => {
                if let Some(metric) = s.str_opt("metric")? {
                    if metric != "euclidean" {
                        return Err(Error::Config(format!("[learner] unsupported metric {metric:?}")));
                    }
                }
                LearnerSpec::Knn { k: s.usize_or("k", 1)? }
            }
            "logreg" => LearnerSpec::LogReg(SgdConfig::from_section(s, "", SgdConfig::logreg_default())?),
            "mlp" => LearnerSpec::Mlp(MlpSpec::from_section(s, "")?),
            "constant" => {
                let rule = match s.str_opt("label") {
                    Ok(Some("majority")) => ConstantRule::Majority,
                    Ok(Some(other)) => {
                        return Err(Error::Config(format!(
                            "[learner] label must be an integer or \"majority\", got {other:?}"
                        )))
                    }
                    Ok(None) => {
                        return Err(Error::Config("[learner] constant learner needs a label".into()))
                    }
                    Err(_) => {
                        let y = s.u64_opt("label")?.unwrap_or(0);
                        ConstantRule::Label(u32::try_from(y).map_err(|_| Error::Config("[learner] label too large".into()))?)
                    }
                };
                LearnerSpec::Constant(rule)
            }
            "frozen_linear" => LearnerSpec::FrozenLinear {
                base: MlpSpec::from_section(s, "base_")?,
                head: SgdConfig::from_section(s, "", SgdConfig::logreg_default())?,
            },
            other => return Err(Error::Config(format!("[learner] unknown kind {other:?}"))),
        };
        spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(spec)
    }
}

impl MlpSpec {
    fn validate(&self) -> Result<()> {
        if self.hidden_width == 0 {
            return Err(Error::invalid("mlp: hidden_width must be at least 1"));
        }
        self.sgd.validate("mlp")
    }

    fn from_section<'a>(s: &mut Section<'a>, prefix: &'static str) -> Result<Self> {
        let d = MlpSpec::default();
        let hidden_width = s.usize_or("hidden_width", d.hidden_width)?;
        Ok(MlpSpec {
            hidden_width,
            sgd: SgdConfig::from_section(s, prefix, d.sgd)?,
        })
    }
}

/// A trained predictor. Predictions are hard labels; score ties go to the
/// lowest class index.
#[derive(Clone, Debug)]
pub enum Model {
    Constant(u32),
    Knn(KnnModel),
    Linear(LinearModel),
    Mlp(MlpModel),
    Frozen {
        representation: Arc<RepresentationMap>,
        head: LinearModel,
    },
}

impl Model {
    pub fn predict(&self, x: &[f64]) -> u32 {
        match self {
            Model::Constant(y) => *y,
            Model::Knn(m) => m.predict(x),
            Model::Linear(m) => m.predict(x),
            Model::Mlp(m) => m.predict(x),
            Model::Frozen { representation, head } => head.predict(&representation.apply(x)),
        }
    }

    pub fn predict_all(&self, data: &LabeledDataset) -> Vec<u32> {
        (0..data.len()).map(|i| self.predict(data.features(i))).collect()
    }

    /// Fraction of `data` classified correctly.
    pub fn accuracy(&self, data: &LabeledDataset) -> f64 {
        let correct = (0..data.len())
            .filter(|&i| self.predict(data.features(i)) == data.label(i))
            .count();
        correct as f64 / data.len().max(1) as f64
    }
}

/// A learner ready to train on subsets of one training set.
#[derive(Clone, Debug)]
pub struct Learner {
    spec: LearnerSpec,
    n_classes: usize,
    representation: Option<Arc<RepresentationMap>>,
}

impl Learner {
    /// Prepares `spec`. For `frozen_linear` this fits the representation on
    /// all of `full_train` once, keyed by `seed`.
    pub fn new(spec: &LearnerSpec, full_train: &LabeledDataset, seed: u64) -> Result<Self> {
        spec.validate()?;
        let representation = match spec {
            LearnerSpec::FrozenLinear { base, .. } => Some(Arc::new(fit_representation(
                base,
                full_train,
                seed::derive(seed, &[stream::REPRESENTATION]),
            )?)),
            _ => None,
        };
        Ok(Learner {
            spec: spec.clone(),
            n_classes: full_train.n_classes(),
            representation,
        })
    }

    pub fn spec(&self) -> &LearnerSpec {
        &self.spec
    }

    pub fn is_deterministic(&self) -> bool {
        self.spec.is_deterministic()
    }

    pub fn representation(&self) -> Option<&RepresentationMap> {
        self.representation.as_deref()
    }

    /// Trains on the examples of `data` at `subset` (positions in that order).
    pub fn train(&self, data: &LabeledDataset, subset: &[usize], seed: u64) -> Result<Model> {
        if subset.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let n_classes = self.n_classes.max(data.n_classes());
        Ok(match &self.spec {
            LearnerSpec::Constant(ConstantRule::Label(y)) => Model::Constant(*y),
            LearnerSpec::Constant(ConstantRule::Majority) => {
                let mut counts = vec![0usize; n_classes];
                for &i in subset {
                    counts[data.label(i) as usize] += 1;
                }
                Model::Constant(argmax_by(&counts) as u32)
            }
            LearnerSpec::Knn { k } => Model::Knn(KnnModel::fit(data, subset, *k, n_classes)),
            LearnerSpec::LogReg(sgd) => {
                let rows: Vec<&[f64]> = subset.iter().map(|&i| data.features(i)).collect();
                let labels: Vec<u32> = subset.iter().map(|&i| data.label(i)).collect();
                Model::Linear(LinearModel::fit(&rows, &labels, n_classes, sgd, seed)?)
            }
            LearnerSpec::Mlp(spec) => Model::Mlp(MlpModel::fit(data, subset, n_classes, spec, seed)?),
            LearnerSpec::FrozenLinear { head, .. } => {
                let representation = self
                    .representation
                    .clone()
                    .ok_or_else(|| Error::invalid("frozen_linear learner has no representation"))?;
                let mapped: Vec<Vec<f64>> = subset.iter().map(|&i| representation.apply(data.features(i))).collect();
                let rows: Vec<&[f64]> = mapped.iter().map(Vec::as_slice).collect();
                let labels: Vec<u32> = subset.iter().map(|&i| data.label(i)).collect();
                let head = LinearModel::fit(&rows, &labels, n_classes, head, seed)?;
                Model::Frozen { representation, head }
            }
        })
    }
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax_by<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
