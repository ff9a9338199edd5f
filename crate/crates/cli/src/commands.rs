//! Subcommand implementations, generic over the working precision.

use std::path::Path;

use csrobust::certify::{certify_dataset, pairwise_grid, write_records_jsonl, Perturbation};
use csrobust::model::{init_params, load, save, ModelMeta, Network};
use csrobust::numcore::{Rng, Scalar};
use csrobust::train::{
    classification_error, evaluate, metrics_from_records, train, tune_alpha, validation_metric, LossKind, Metrics,
    TrainConfig,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{RunConfig, Splits};
use crate::error::CliError;

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::output(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::output(path, e))
}

fn perturbation<S: Scalar>(cfg: &RunConfig, eps: f64) -> Perturbation<S> {
    let p = Perturbation::linf(S::lit(eps));
    if cfg.eval.clip_to_unit {
        p.clipped()
    } else {
        p
    }
}

fn load_model<S: Scalar>(path: &Path, splits: &Splits<S>) -> Result<(Network<S>, ModelMeta), CliError> {
    let (net, meta) = load::<S>(path)?;
    if net.input_dim() != splits.train.dim() || net.num_classes() != splits.train.classes() {
        return Err(CliError::config(
            "--model",
            format!(
                "model maps {} inputs to {} classes, data has {} and {}",
                net.input_dim(),
                net.num_classes(),
                splits.train.dim(),
                splits.train.classes()
            ),
        ));
    }
    Ok((net, meta))
}

/// Explains each metric left empty.
fn warnings(metrics: &Metrics, has_cost: bool) -> Vec<String> {
    if !has_cost {
        return vec!["no cost matrix configured; cost-sensitive metrics are null".into()];
    }
    let mut out = Vec::new();
    if metrics.cs_robust_error.is_none() {
        out.push("no example has a costed target; cs_robust_error and robust_cost are null".into());
    }
    if metrics.misclassification_cost.is_none() {
        out.push("misclassification_cost is undefined for this data".into());
    }
    out
}

fn run_training<S: Scalar>(
    cfg: &RunConfig,
    train_cfg: &TrainConfig,
    splits: &Splits<S>,
) -> Result<csrobust::train::TrainOutcome<S>, (CliError, Option<Network<S>>)> {
    let cost = cfg.cost_matrix(splits.train.classes()).map_err(|e| (e, None))?;
    let arch = cfg.arch(splits.train.dim(), splits.train.classes());
    let init = init_params::<S>(&arch, &mut Rng::new(train_cfg.seed).substream("init"))
        .map_err(|e| (CliError::config("model.hidden", e.to_string()), None))?;
    train(init, &splits.train, &splits.validation, train_cfg, cost.as_ref())
        .map_err(|f| (CliError::Core(f.error), Some(f.checkpoint)))
}

fn model_meta(t: &TrainConfig) -> ModelMeta {
    ModelMeta {
        epsilon: t.epsilon,
        alpha: if t.loss == LossKind::CsRobust { t.alpha } else { 0.0 },
        seed: t.seed,
    }
}

/// Trains, then writes `model.bin`, `history.csv` and `summary.json`. A
/// diverged run leaves its last finite network in `checkpoint.bin`.
pub fn cmd_train<S: Scalar>(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let splits = cfg.splits::<S>()?;
    let outcome = match run_training(cfg, &cfg.train, &splits) {
        Ok(o) => o,
        Err((e, checkpoint)) => {
            if let Some(net) = checkpoint {
                save(&net, &model_meta(&cfg.train), out.join("checkpoint.bin"))?;
            }
            return Err(e);
        }
    };
    save(&outcome.model, &model_meta(&cfg.train), out.join("model.bin"))?;
    outcome.history.write_csv(out.join("history.csv"))?;

    let cost = cfg.cost_matrix(splits.train.classes())?;
    let eps = cfg.eval_epsilon();
    let (metrics, _) = evaluate(&outcome.model, &splits.validation, &perturbation(cfg, eps), cost.as_ref())?;
    let summary = json!({
        "selected_epoch": outcome.selection.epoch,
        "selection_flagged": outcome.selection.flagged,
        "epochs_run": outcome.history.len(),
        "seed": cfg.train.seed,
        "validation_metrics": metrics,
        "warnings": warnings(&metrics, cost.is_some()),
        "config": cfg,
    });
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Certifies the evaluation split; writes `records.jsonl` and `metrics.json`.
pub fn cmd_certify<S: Scalar>(cfg: &RunConfig, model: &Path, out: &Path) -> Result<Value, CliError> {
    let splits = cfg.splits::<S>()?;
    let data = splits.get(cfg.eval.split)?;
    let (net, _) = load_model(model, &splits)?;
    let cost = cfg.cost_matrix(data.classes())?;
    let eps = cfg.eval_epsilon();
    let records = certify_dataset(&net, data, &perturbation(cfg, eps))?;
    let metrics = metrics_from_records(&net, data, &records, eps, cost.as_ref())?;
    write_records_jsonl(&records, out.join("records.jsonl"))?;
    let report = json!({
        "split": cfg.eval.split,
        "metrics": metrics,
        "warnings": warnings(&metrics, cost.is_some()),
    });
    write_json(&out.join("metrics.json"), &report)?;
    Ok(report)
}

/// Writes the pairwise robust-error grid to `grid.csv`.
pub fn cmd_heatmap<S: Scalar>(cfg: &RunConfig, model: &Path, out: &Path) -> Result<Value, CliError> {
    let splits = cfg.splits::<S>()?;
    let data = splits.get(cfg.eval.split)?;
    let (net, _) = load_model(model, &splits)?;
    let grid = pairwise_grid(&net, data, &perturbation(cfg, cfg.eval_epsilon()))?;
    grid.write_csv(out.join("grid.csv"))?;
    Ok(json!({ "classes": grid.classes(), "epsilon": cfg.eval_epsilon() }))
}

/// Runs the two-stage α search with the configured cost-sensitive robust
/// training; writes `tuning.json`.
pub fn cmd_tune_alpha<S: Scalar>(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    if cfg.cost.is_none() {
        return Err(CliError::config("cost", "tuning α needs a cost matrix"));
    }
    let splits = cfg.splits::<S>()?;
    let cost = cfg.cost_matrix(splits.train.classes())?;
    let mut eval = |alpha: f64| -> csrobust::Result<(f64, f64)> {
        let t = TrainConfig { loss: LossKind::CsRobust, alpha, ..cfg.train.clone() };
        let outcome = run_training(cfg, &t, &splits).map_err(|(e, _)| match e {
            CliError::Core(e) => e,
            other => csrobust::Error::InvalidArgument(other.to_string()),
        })?;
        let ce = classification_error(&outcome.model, &splits.validation)?;
        let robust = validation_metric(&outcome.model, &splits.validation, &t, cost.as_ref())?
            .ok_or(csrobust::Error::UndefinedMetric("cost-sensitive robust error"))?;
        Ok((ce, robust))
    };
    let tuning = tune_alpha(&mut eval, cfg.train.selection_threshold)?;
    write_json(&out.join("tuning.json"), &tuning)?;
    Ok(json!({ "chosen": tuning.chosen, "flagged": tuning.flagged }))
}

#[derive(Serialize)]
struct SweepRow {
    model: &'static str,
    epsilon: f64,
    classification_error: f64,
    overall_robust_error: f64,
    cs_robust_error: Option<f64>,
    robust_cost: Option<f64>,
}

/// Evaluates a baseline and a cost-sensitive model at every configured
/// radius; writes `sweep.csv`.
pub fn cmd_sweep_eps<S: Scalar>(cfg: &RunConfig, baseline: &Path, model: &Path, out: &Path) -> Result<Value, CliError> {
    let splits = cfg.splits::<S>()?;
    let data = splits.get(cfg.eval.split)?;
    let cost = cfg.cost_matrix(data.classes())?;
    let models = [("baseline", load_model(baseline, &splits)?.0), ("cost-sensitive", load_model(model, &splits)?.0)];
    let path = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::output(&path, e))?;
    let mut rows = 0;
    for &eps in &cfg.eval.epsilons {
        for (name, net) in &models {
            let (m, _) = evaluate(net, data, &perturbation(cfg, eps), cost.as_ref())?;
            w.serialize(SweepRow {
                model: name,
                epsilon: eps,
                classification_error: m.classification_error,
                overall_robust_error: m.overall_robust_error,
                cs_robust_error: m.cs_robust_error,
                robust_cost: m.robust_cost,
            })
            .map_err(|e| CliError::output(&path, e))?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| CliError::output(&path, e))?;
    Ok(json!({ "rows": rows }))
}
