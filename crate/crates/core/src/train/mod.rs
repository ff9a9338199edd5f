//! Training: objectives, optimizers, schedules, model selection and the
//! two-stage search for the robustness weight α.

mod eval;
mod losses;
mod optim;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use eval::{classification_error, evaluate, metrics_from_records, predictions, Metrics};
pub use losses::{
    ce_loss, ce_on_tape, cs_robust_loss, mean_ce_loss, overall_robust_loss, robust_term_on_tape, standard_cs_loss,
    standard_cs_on_tape, LossKind, Objective,
};
pub use optim::{OptimizerKind, OptimizerState};

use crate::certify::{certify_dataset, Perturbation};
use crate::cost::{cs_robust_error, misclassification_cost, overall_robust_error, CostMatrix};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Network;
use crate::numcore::{Rng, Scalar};

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Target radius.
    pub epsilon: f64,
    /// Radius at epoch 0, raised linearly to `epsilon` over the warmup.
    pub epsilon_start: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplier applied every `lr_decay_every` epochs after the warmup.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Validation classification error a checkpoint must stay under to be
    /// selected on its robust metric.
    pub selection_threshold: f64,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    pub clip_to_unit: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            epsilon_start: 0.05,
            warmup_epochs: 20,
            epochs: 60,
            batch_size: 50,
            lr: 0.001,
            lr_decay: 0.5,
            lr_decay_every: 10,
            alpha: 1.0,
            seed: 0,
            selection_threshold: 0.04,
            loss: LossKind::OverallRobust,
            optimizer: OptimizerKind::Adam,
            clip_to_unit: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid(msg));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be finite and ≥ 0, got {}", self.epsilon));
        }
        if !(self.epsilon_start >= 0.0 && self.epsilon_start <= self.epsilon) {
            return bad(format!(
                "epsilon_start must lie in [0, epsilon], got {} with epsilon {}",
                self.epsilon_start, self.epsilon
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be finite and ≥ 0, got {}", self.alpha));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr must be positive and lr_decay in (0, 1]".into());
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be at least 1".into());
        }
        Ok(())
    }

    /// Radius in effect during `epoch` (0-based).
    pub fn epsilon_at(&self, epoch: usize) -> f64 {
        if epoch >= self.warmup_epochs {
            return self.epsilon;
        }
        let t = epoch as f64 / self.warmup_epochs as f64;
        self.epsilon_start + (self.epsilon - self.epsilon_start) * t
    }

    /// Learning rate in effect during `epoch`; decay starts after warmup.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = epoch.saturating_sub(self.warmup_epochs) / self.lr_decay_every;
        self.lr * self.lr_decay.powi(steps as i32)
    }

    fn perturbation<S: Scalar>(&self, eps: f64) -> Perturbation<S> {
        Perturbation {
            epsilon: S::lit(eps),
            clip_to_unit: self.clip_to_unit,
        }
    }
}

/// One epoch's record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub epsilon: f64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_class_err: f64,
    /// Loss-appropriate validation metric at the target radius; empty when
    /// undefined.
    pub val_robust_metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.epochs {
            w.serialize(r).map_err(|e| Error::invalid(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        let mut text = String::from_utf8(bytes).expect("csv output is utf-8");
        if self.epochs.is_empty() {
            text = "epoch,epsilon,lr,train_loss,val_class_err,val_robust_metric\n".into();
        }
        Ok(text)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }
}

/// The chosen checkpoint. `flagged` means no epoch met the classification
/// threshold and the fallback rule applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub epoch: usize,
    pub flagged: bool,
}

/// Among epochs with validation classification error under `threshold`,
/// the one with the smallest robust metric; otherwise the one with the
/// smallest classification error, flagged. Ties go to the earlier epoch.
pub fn select_model(history: &TrainHistory, threshold: f64) -> Result<Selection> {
    let eligible = history
        .epochs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.val_class_err < threshold)
        .filter_map(|(i, r)| r.val_robust_metric.map(|m| (i, m)))
        .fold(None, |best: Option<(usize, f64)>, (i, m)| match best {
            Some((_, bm)) if bm <= m => best,
            _ => Some((i, m)),
        });
    if let Some((epoch, _)) = eligible {
        return Ok(Selection { epoch, flagged: false });
    }
    let fallback = history
        .epochs
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, r)| match best {
            Some((_, be)) if be <= r.val_class_err => best,
            _ => Some((i, r.val_class_err)),
        });
    match fallback {
        Some((epoch, _)) => Ok(Selection { epoch, flagged: true }),
        None => Err(Error::invalid("no checkpoints to select from")),
    }
}

/// Result of a completed run.
#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    /// The selected checkpoint.
    pub model: Network<S>,
    pub selection: Selection,
    pub history: TrainHistory,
    /// The network after every epoch.
    pub checkpoints: Vec<Network<S>>,
}

/// A run that stopped early; `checkpoint` is the last network whose
/// parameters were all finite.
#[derive(Debug)]
pub struct TrainFailure<S> {
    pub error: Error,
    pub checkpoint: Network<S>,
    pub history: TrainHistory,
}

impl<S> From<TrainFailure<S>> for Error {
    fn from(f: TrainFailure<S>) -> Self {
        f.error
    }
}

/// The validation metric matching the training objective, at the target radius.
pub fn validation_metric<S: Scalar>(
    net: &Network<S>,
    val: &Dataset<S>,
    config: &TrainConfig,
    cost: Option<&CostMatrix>,
) -> Result<Option<f64>> {
    let pert = config.perturbation::<S>(config.epsilon);
    let defined = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    };
    match config.loss {
        LossKind::Ce => defined(classification_error(net, val)),
        LossKind::StandardCs => {
            let c = cost.ok_or_else(|| Error::invalid("this loss needs a cost matrix"))?;
            defined(misclassification_cost(&predictions(net, val)?, val.labels(), c))
        }
        LossKind::OverallRobust => defined(overall_robust_error(&certify_dataset(net, val, &pert)?)),
        LossKind::CsRobust => {
            let c = cost.ok_or_else(|| Error::invalid("this loss needs a cost matrix"))?;
            defined(cs_robust_error(&certify_dataset(net, val, &pert)?, c))
        }
    }
}

fn objective_for<S: Scalar>(
    config: &TrainConfig,
    eps: f64,
    cost: Option<&CostMatrix>,
    class_counts: &[f64],
) -> Result<Objective<S>> {
    let pert = config.perturbation::<S>(eps);
    let need = || cost.cloned().ok_or_else(|| Error::invalid("this loss needs a cost matrix"));
    Ok(match config.loss {
        LossKind::Ce => Objective::ce(),
        LossKind::StandardCs => Objective::standard_cs(need()?),
        LossKind::OverallRobust => Objective::overall_robust(pert),
        LossKind::CsRobust => Objective::cs_robust(pert, need()?, S::lit(config.alpha), class_counts)?,
    })
}

/// Minibatch training from `init` with per-epoch checkpoints and selection.
///
/// Each epoch shuffles with its own seeded stream. For the cost-sensitive
/// robust loss the class counts `N_j` of the training split are scaled to
/// the batch size, making each batch loss an unbiased estimate of the
/// full-split objective.
pub fn train<S: Scalar>(
    init: Network<S>,
    train_set: &Dataset<S>,
    val_set: &Dataset<S>,
    config: &TrainConfig,
    cost: Option<&CostMatrix>,
) -> std::result::Result<TrainOutcome<S>, TrainFailure<S>> {
    let mut history = TrainHistory::default();
    let fail = |error: Error, checkpoint: &Network<S>, history: &TrainHistory| TrainFailure {
        error,
        checkpoint: checkpoint.clone(),
        history: history.clone(),
    };
    let setup = || -> Result<()> {
        config.validate()?;
        if train_set.is_empty() || val_set.is_empty() {
            return Err(Error::invalid("training and validation sets must be nonempty"));
        }
        for d in [train_set, val_set] {
            if d.dim() != init.input_dim() || d.classes() != init.num_classes() {
                return Err(Error::shape("dataset does not match the network"));
            }
        }
        if config.loss.needs_cost() {
            match cost {
                Some(c) if c.classes() == init.num_classes() => {}
                _ => return Err(Error::invalid("this loss needs a cost matrix with one row per class")),
            }
        }
        Ok(())
    };
    if let Err(e) = setup() {
        return Err(fail(e, &init, &history));
    }

    let arch = init.arch();
    let n = train_set.len();
    let split_counts: Vec<f64> = train_set.class_counts().iter().map(|&c| c as f64).collect();
    let root = Rng::new(config.seed);
    let mut params = init.params();
    let mut opt = OptimizerState::new(config.optimizer, &params);
    let mut net = init;
    let mut checkpoints = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let eps = config.epsilon_at(epoch);
        let lr = S::lit(config.lr_at(epoch));
        let order = root.substream_indexed("shuffle", epoch as u64).permutation(n);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let scale = batch.len() as f64 / n as f64;
            let counts: Vec<f64> = split_counts.iter().map(|&c| c * scale).collect();
            let diverged = |reason: String| Error::Diverged { epoch, batch: b, reason };
            let step = objective_for::<S>(config, eps, cost, &counts)
                .and_then(|obj| obj.value_and_grad(&net, train_set, batch));
            let (loss, grads) = match step {
                Ok(v) => v,
                Err(e) if e.is_numerical() => return Err(fail(diverged(e.to_string()), &net, &history)),
                Err(e) => return Err(fail(e, &net, &history)),
            };
            if let Err(e) = opt.step(&mut params, &grads, lr) {
                return Err(fail(diverged(e.to_string()), &net, &history));
            }
            if params.iter().any(|p| !p.is_finite()) {
                return Err(fail(diverged("non-finite parameters".into()), &net, &history));
            }
            net = match Network::from_params(&arch, params.clone()) {
                Ok(v) => v,
                Err(e) => return Err(fail(e, &net, &history)),
            };
            loss_sum += loss.as_f64();
            batches += 1;
        }
        let evaluated = classification_error(&net, val_set)
            .and_then(|ce| validation_metric(&net, val_set, config, cost).map(|m| (ce, m)));
        let (val_class_err, val_robust_metric) = match evaluated {
            Ok(v) => v,
            Err(e) => return Err(fail(e, &net, &history)),
        };
        history.epochs.push(EpochRecord {
            epoch,
            epsilon: eps,
            lr: lr.as_f64(),
            train_loss: loss_sum / batches as f64,
            val_class_err,
            val_robust_metric,
        });
        checkpoints.push(net.clone());
    }

    let selection = select_model(&history, config.selection_threshold).map_err(|e| fail(e, &net, &history))?;
    Ok(TrainOutcome {
        model: checkpoints[selection.epoch].clone(),
        selection,
        history,
        checkpoints,
    })
}

/// The coarse α grid.
pub fn coarse_alpha_grid() -> [f64; 5] {
    [1e-2, 1e-1, 1.0, 1e1, 1e2]
}

/// The fine α grid around a coarse choice.
pub fn fine_alpha_grid(coarse: f64) -> [f64; 7] {
    let mut out = [0.0; 7];
    for (k, v) in out.iter_mut().enumerate() {
        *v = coarse * 2f64.powi(k as i32 - 3);
    }
    out
}

/// One α evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaTrial {
    pub stage: u8,
    pub alpha: f64,
    pub classification_error: Option<f64>,
    pub cs_robust_error: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaTuning {
    pub coarse_grid: Vec<f64>,
    pub fine_grid: Vec<f64>,
    pub trials: Vec<AlphaTrial>,
    pub coarse_choice: f64,
    pub chosen: f64,
    /// Set when some stage had no α under the classification threshold.
    pub flagged: bool,
}

fn pick(trials: &[AlphaTrial], threshold: f64) -> Option<(f64, bool)> {
    let scored: Vec<(f64, f64, f64)> = trials
        .iter()
        .filter_map(|t| Some((t.alpha, t.classification_error?, t.cs_robust_error?)))
        .collect();
    let min_by_robust = |items: &mut dyn Iterator<Item = &(f64, f64, f64)>| {
        items.fold(None, |best: Option<(f64, f64)>, &(a, _, r)| match best {
            Some((_, br)) if br <= r => best,
            _ => Some((a, r)),
        })
    };
    if let Some((a, _)) = min_by_robust(&mut scored.iter().filter(|t| t.1 < threshold)) {
        return Some((a, false));
    }
    min_by_robust(&mut scored.iter()).map(|(a, _)| (a, true))
}

/// Two-stage α search. `evaluate(α)` trains a model and returns its
/// validation (classification error, cost-sensitive robust error). Failed
/// evaluations are recorded and skipped.
pub fn tune_alpha(mut evaluate: impl FnMut(f64) -> Result<(f64, f64)>, threshold: f64) -> Result<AlphaTuning> {
    let mut trials = Vec::new();
    let mut run = |stage: u8, alpha: f64, trials: &mut Vec<AlphaTrial>| {
        let t = match evaluate(alpha) {
            Ok((ce, cre)) => AlphaTrial {
                stage,
                alpha,
                classification_error: Some(ce),
                cs_robust_error: Some(cre),
                error: None,
            },
            Err(e) => AlphaTrial {
                stage,
                alpha,
                classification_error: None,
                cs_robust_error: None,
                error: Some(e.to_string()),
            },
        };
        trials.push(t);
    };
    let coarse = coarse_alpha_grid();
    for &a in &coarse {
        run(1, a, &mut trials);
    }
    let (coarse_choice, flag1) =
        pick(&trials, threshold).ok_or_else(|| Error::invalid("every coarse α evaluation failed"))?;
    let fine = fine_alpha_grid(coarse_choice);
    for &a in &fine {
        run(2, a, &mut trials);
    }
    let (chosen, flag2) =
        pick(&trials[coarse.len()..], threshold).ok_or_else(|| Error::invalid("every fine α evaluation failed"))?;
    Ok(AlphaTuning {
        coarse_grid: coarse.to_vec(),
        fine_grid: fine.to_vec(),
        trials,
        coarse_choice,
        chosen,
        flagged: flag1 || flag2,
    })
}
