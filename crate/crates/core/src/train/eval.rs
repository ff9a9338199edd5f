use serde::{Deserialize, Serialize};

use crate::certify::{certify_dataset, CertificationRecord, Perturbation};
use crate::cost::{cs_robust_error, misclassification_cost, overall_robust_error, robust_cost, CostMatrix};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{argmax, Network};
use crate::numcore::Scalar;

const EVAL_CHUNK: usize = 512;

/// Predicted class of every example, via batched forward passes.
pub fn predictions<S: Scalar>(net: &Network<S>, data: &Dataset<S>) -> Result<Vec<usize>> {
    if data.dim() != net.input_dim() {
        return Err(Error::shape("dataset does not match the network input"));
    }
    let mut out = Vec::with_capacity(data.len());
    let d = data.dim();
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let n = EVAL_CHUNK.min(data.len() - start);
        let logits = net.logits_batch(&data.features()[start * d..(start + n) * d], n)?;
        out.extend((0..n).map(|k| argmax(logits.row(k))));
    }
    Ok(out)
}

pub fn classification_error<S: Scalar>(net: &Network<S>, data: &Dataset<S>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::UndefinedMetric("no examples"));
    }
    let wrong = predictions(net, data)?
        .iter()
        .zip(data.labels())
        .filter(|(p, y)| p != y)
        .count();
    Ok(wrong as f64 / data.len() as f64)
}

/// Clean and certified metrics of a model on a dataset. Cost-dependent
/// entries are `None` without a cost matrix or when no example is a
/// candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub examples: usize,
    pub epsilon: f64,
    pub classification_error: f64,
    pub overall_robust_error: f64,
    pub cs_robust_error: Option<f64>,
    pub robust_cost: Option<f64>,
    pub misclassification_cost: Option<f64>,
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Metrics from already computed certification records.
pub fn metrics_from_records<S: Scalar>(
    net: &Network<S>,
    data: &Dataset<S>,
    records: &[CertificationRecord],
    epsilon: f64,
    cost: Option<&CostMatrix>,
) -> Result<Metrics> {
    let preds = predictions(net, data)?;
    let classification_error = classification_error(net, data)?;
    let (cs, rc, mc) = match cost {
        Some(c) => (
            defined(cs_robust_error(records, c))?,
            defined(robust_cost(records, c))?,
            defined(misclassification_cost(&preds, data.labels(), c))?,
        ),
        None => (None, None, None),
    };
    Ok(Metrics {
        examples: data.len(),
        epsilon,
        classification_error,
        overall_robust_error: overall_robust_error(records)?,
        cs_robust_error: cs,
        robust_cost: rc,
        misclassification_cost: mc,
    })
}

/// Certifies every example and summarizes.
pub fn evaluate<S: Scalar>(
    net: &Network<S>,
    data: &Dataset<S>,
    pert: &Perturbation<S>,
    cost: Option<&CostMatrix>,
) -> Result<(Metrics, Vec<CertificationRecord>)> {
    let records = certify_dataset(net, data, pert)?;
    let metrics = metrics_from_records(net, data, &records, pert.epsilon.as_f64(), cost)?;
    Ok((metrics, records))
}
