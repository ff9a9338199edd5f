//! Run configuration files.

use std::path::{Path, PathBuf};

use csrobust::cost::{make_task, CostMatrix, TaskSpec};
use csrobust::data::{load_mnist_idx, split_folds, synth_blobs, Dataset};
use csrobust::numcore::{Rng, Scalar};
use csrobust::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

/// Everything that affects a run's results.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub precision: Precision,
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub cost: Option<CostSource>,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    /// MNIST-style image and label files, optionally gzipped.
    Idx { images: PathBuf, labels: PathBuf },
    /// Rows of `label, features...` with features in [0, 1].
    Csv { path: PathBuf, classes: usize },
    /// Gaussian blobs.
    Synth {
        classes: usize,
        dim: usize,
        per_class: usize,
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
}

/// How the loaded examples are divided. After a seeded shuffle the first
/// `holdout` examples form the test set and the next `pool` (default: the
/// rest) are split into folds, one of which is used for validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    pub holdout: usize,
    pub pool: Option<usize>,
    pub folds: usize,
    pub validation_fold: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            holdout: 0,
            pool: None,
            folds: 5,
            validation_fold: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden layer widths; input and output sizes come from the data.
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![100, 100] }
    }
}

/// A generated task or a cost-matrix CSV, exactly one of the two.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSource {
    pub task: Option<TaskSpec>,
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    #[default]
    Test,
    Validation,
    Train,
    /// Every loaded example, before splitting.
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Defaults to the training radius.
    pub epsilon: Option<f64>,
    pub epsilons: Vec<f64>,
    pub split: EvalSplit,
    pub clip_to_unit: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            epsilon: None,
            epsilons: vec![0.05, 0.1, 0.15],
            split: EvalSplit::Test,
            clip_to_unit: false,
        }
    }
}

/// Train, validation and test parts of the configured data.
pub struct Splits<S> {
    pub all: Dataset<S>,
    pub train: Dataset<S>,
    pub validation: Dataset<S>,
    pub test: Option<Dataset<S>>,
}

impl<S: Scalar> Splits<S> {
    pub fn get(&self, which: EvalSplit) -> Result<&Dataset<S>, CliError> {
        match which {
            EvalSplit::Train => Ok(&self.train),
            EvalSplit::Validation => Ok(&self.validation),
            EvalSplit::All => Ok(&self.all),
            EvalSplit::Test => self
                .test
                .as_ref()
                .ok_or_else(|| CliError::config("eval.split", "the test split is empty; set split.holdout")),
        }
    }
}

/// Pulls the offending key out of a deserializer message such as
/// "missing field `images`".
fn field_from_message(msg: &str) -> Option<String> {
    let start = msg.find('`')? + 1;
    let len = msg[start..].find('`')?;
    Some(msg[start..start + len].to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e: toml::de::Error| {
            let message = e.message().to_string();
            let field = field_from_message(&message).unwrap_or_else(|| "config".into());
            CliError::config(field, message)
        })
    }

    /// Reads and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("--config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.data {
            DataSource::Idx { images, labels } => {
                fix(images);
                fix(labels);
            }
            DataSource::Csv { path, .. } => fix(path),
            DataSource::Synth { .. } => {}
        }
        if let Some(CostSource { path: Some(p), .. }) = &mut self.cost {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let exists = |field: &str, p: &Path| {
            if p.is_file() {
                Ok(())
            } else {
                Err(CliError::config(field, format!("no such file: {}", p.display())))
            }
        };
        match &self.data {
            DataSource::Idx { images, labels } => {
                exists("data.images", images)?;
                exists("data.labels", labels)?;
            }
            DataSource::Csv { path, classes } => {
                exists("data.path", path)?;
                if *classes < 2 {
                    return Err(CliError::config("data.classes", "need at least two classes"));
                }
            }
            DataSource::Synth { classes, dim, per_class, spread, .. } => {
                if *classes < 2 || *dim == 0 || *per_class == 0 {
                    return Err(CliError::config("data", "synthetic data needs classes ≥ 2, dim ≥ 1, per_class ≥ 1"));
                }
                if !(*spread >= 0.0 && spread.is_finite()) {
                    return Err(CliError::config("data.spread", "spread must be finite and ≥ 0"));
                }
            }
        }
        if self.split.folds < 2 {
            return Err(CliError::config("split.folds", "need at least two folds"));
        }
        if self.split.validation_fold >= self.split.folds {
            return Err(CliError::config("split.validation_fold", "must be below split.folds"));
        }
        if self.model.hidden.iter().any(|&w| w == 0) {
            return Err(CliError::config("model.hidden", "layer widths must be positive"));
        }
        self.train.validate().map_err(|e| CliError::config("train", e.to_string()))?;
        match &self.cost {
            Some(CostSource { task: Some(_), path: Some(_) }) | Some(CostSource { task: None, path: None }) => {
                return Err(CliError::config("cost", "give exactly one of cost.task and cost.path"));
            }
            Some(CostSource { path: Some(p), .. }) => exists("cost.path", p)?,
            Some(_) => {}
            None if self.train.loss.needs_cost() => {
                return Err(CliError::config("cost", "this loss needs a cost matrix"));
            }
            None => {}
        }
        if let Some(e) = self.eval.epsilon {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(CliError::config("eval.epsilon", "must be finite and ≥ 0"));
            }
        }
        if self.eval.epsilons.is_empty() || self.eval.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(CliError::config("eval.epsilons", "need a nonempty list of finite radii ≥ 0"));
        }
        Ok(())
    }

    pub fn eval_epsilon(&self) -> f64 {
        self.eval.epsilon.unwrap_or(self.train.epsilon)
    }

    /// Loads the data and divides it per `[split]`.
    pub fn splits<S: Scalar>(&self) -> Result<Splits<S>, CliError> {
        let all: Dataset<S> = match &self.data {
            DataSource::Idx { images, labels } => load_mnist_idx(images, labels)?,
            DataSource::Csv { path, classes } => Dataset::read_csv(path, *classes)?,
            DataSource::Synth { classes, dim, per_class, spread, seed } => {
                synth_blobs(&mut Rng::new(*seed), *classes, *dim, *per_class, *spread)
            }
        };
        let s = &self.split;
        let root = Rng::new(s.seed);
        let perm = root.substream("desk").permutation(all.len());
        let pool_len = s.pool.unwrap_or(all.len().saturating_sub(s.holdout));
        if s.holdout + pool_len > all.len() {
            return Err(CliError::config(
                "split",
                format!("holdout {} and pool {pool_len} exceed the {} examples", s.holdout, all.len()),
            ));
        }
        let pool = all.subset(&perm[s.holdout..s.holdout + pool_len]);
        let folds = split_folds(pool.len(), s.folds, &mut root.substream("folds"))
            .and_then(|f| f.with_validation(s.validation_fold))
            .map_err(|e| CliError::config("split", e.to_string()))?;
        let test = (s.holdout > 0).then(|| all.subset(&perm[..s.holdout]));
        Ok(Splits {
            train: pool.subset(&folds.train_indices()),
            validation: pool.subset(&folds.validation_indices()),
            test,
            all,
        })
    }

    pub fn cost_matrix(&self, classes: usize) -> Result<Option<CostMatrix>, CliError> {
        let Some(src) = &self.cost else { return Ok(None) };
        let c = match (&src.task, &src.path) {
            (Some(task), _) => make_task(task, classes).map_err(|e| CliError::config("cost.task", e.to_string()))?,
            (_, Some(path)) => CostMatrix::parse_cost_matrix(path)?,
            _ => unreachable!("validated"),
        };
        if c.classes() != classes {
            return Err(CliError::config(
                "cost",
                format!("cost matrix has {} classes, data has {classes}", c.classes()),
            ));
        }
        Ok(Some(c))
    }

    /// Layer widths for data of dimension `d` with `m` classes.
    pub fn arch(&self, d: usize, m: usize) -> Vec<usize> {
        let mut arch = vec![d];
        arch.extend(&self.model.hidden);
        arch.push(m);
        arch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYNTH: &str = r#"
        [data]
        source = "synth"
        classes = 3
        dim = 4
        per_class = 10
        spread = 0.05
    "#;

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::parse(SYNTH).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.precision, Precision::F64);
        assert_eq!(cfg.model.hidden, vec![100, 100]);
        assert_eq!(cfg.eval_epsilon(), 0.1);
    }

    #[test]
    fn unknown_keys_name_the_field() {
        let err = RunConfig::parse(&format!("{SYNTH}\n[train]\nepochz = 3\n")).unwrap_err();
        assert_eq!(err.field(), Some("epochz"));
        let err = RunConfig::parse("[data]\nsource = \"idx\"\nimages = \"a\"\n").unwrap_err();
        assert_eq!(err.field(), Some("labels"));
    }

    #[test]
    fn cost_is_required_for_cost_losses() {
        let cfg = RunConfig::parse(&format!("{SYNTH}\n[train]\nloss = \"cs-robust\"\n")).unwrap();
        assert_eq!(cfg.validate().unwrap_err().field(), Some("cost"));
    }

    #[test]
    fn splits_are_disjoint_and_sized() {
        let cfg = RunConfig::parse(&format!("{SYNTH}\n[split]\nholdout = 5\n")).unwrap();
        let s = cfg.splits::<f64>().unwrap();
        assert_eq!(s.test.as_ref().unwrap().len(), 5);
        assert_eq!(s.train.len() + s.validation.len(), 25);
        assert_eq!(s.validation.len(), 5);
    }
}
