//! Training objectives, evaluated per example on a tape and summed in index
//! order so that values and gradients do not depend on thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certify::{certify_on_tape, margin_objectives, Perturbation};
use crate::cost::CostMatrix;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{NetVars, Network};
use crate::numcore::{logsumexp, Scalar, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Cross-entropy on clean logits.
    Ce,
    /// Cost-weighted cross-entropy on clean logit differences.
    StandardCs,
    /// Cross-entropy on negated dual bounds against every class.
    OverallRobust,
    /// Clean cross-entropy plus a cost-weighted robust regularizer.
    CsRobust,
}

impl LossKind {
    pub fn is_robust(self) -> bool {
        matches!(self, LossKind::OverallRobust | LossKind::CsRobust)
    }

    pub fn needs_cost(self) -> bool {
        matches!(self, LossKind::StandardCs | LossKind::CsRobust)
    }
}

/// `log Σ exp(logits) − logits[y]`.
pub fn ce_loss<S: Scalar>(logits: &[S], y: usize) -> S {
    logsumexp(logits) - logits[y]
}

pub fn ce_on_tape<'t, S: Scalar>(logits: Var<'t, S>, y: usize) -> Var<'t, S> {
    logits.logsumexp() - logits.index(y)
}

/// `log(1 + Σ_{j≠y} C[y][j] exp(f_j − f_y))`.
pub fn standard_cs_on_tape<'t, S: Scalar>(logits: Var<'t, S>, y: usize, cost_row: &[f64]) -> Var<'t, S> {
    let others: Vec<usize> = (0..cost_row.len()).filter(|&j| j != y).collect();
    let weights = others.iter().map(|&j| S::lit(cost_row[j])).collect();
    let m = cost_row.len();
    let diffs = logits.gather(&others) - logits.gather(&vec![y; m - 1]);
    diffs.log1p_sum_exp(weights)
}

/// `log(1 + Σ_t w_t exp(−J_t))` with `J` the dual bounds for `e_y − e_t`.
pub fn robust_term_on_tape<'t, S: Scalar>(
    vars: &NetVars<'t, S>,
    x: &[S],
    y: usize,
    pert: &Perturbation<S>,
    targets: &[usize],
    weights: Vec<S>,
) -> Var<'t, S> {
    let m = vars.biases.last().expect("nonempty network").value().len();
    let (_, j) = certify_on_tape(vars, &pert.region(x), &margin_objectives(m, y, targets));
    (-j).log1p_sum_exp(weights)
}

/// A fully specified batch objective.
#[derive(Clone, Debug)]
pub struct Objective<S> {
    pub kind: LossKind,
    pub pert: Perturbation<S>,
    pub cost: Option<CostMatrix>,
    pub alpha: S,
    /// `δ_j / N_j` per class; only used by [`LossKind::CsRobust`].
    pub class_weights: Vec<S>,
}

impl<S: Scalar> Objective<S> {
    pub fn ce() -> Self {
        Self {
            kind: LossKind::Ce,
            pert: Perturbation::linf(S::zero()),
            cost: None,
            alpha: S::zero(),
            class_weights: Vec::new(),
        }
    }

    pub fn standard_cs(cost: CostMatrix) -> Self {
        Self {
            kind: LossKind::StandardCs,
            cost: Some(cost),
            ..Self::ce()
        }
    }

    pub fn overall_robust(pert: Perturbation<S>) -> Self {
        Self {
            kind: LossKind::OverallRobust,
            pert,
            ..Self::ce()
        }
    }

    /// `class_counts` are the `N_j`; classes with no costed targets or no
    /// examples get weight zero.
    pub fn cs_robust(pert: Perturbation<S>, cost: CostMatrix, alpha: S, class_counts: &[f64]) -> Result<Self> {
        if !(alpha >= S::zero()) {
            return Err(Error::invalid(format!("alpha must be ≥ 0, got {alpha}")));
        }
        if class_counts.len() != cost.classes() {
            return Err(Error::shape("one class count per cost-matrix row"));
        }
        let class_weights = class_counts
            .iter()
            .enumerate()
            .map(|(j, &n)| {
                if n > 0.0 && !cost.targets_of(j).is_empty() {
                    S::lit(1.0 / n)
                } else {
                    S::zero()
                }
            })
            .collect();
        Ok(Self {
            kind: LossKind::CsRobust,
            pert,
            cost: Some(cost),
            alpha,
            class_weights,
        })
    }

    fn cost(&self) -> &CostMatrix {
        self.cost.as_ref().expect("cost-sensitive objectives carry a cost matrix")
    }

    fn validate(&self, net: &Network<S>) -> Result<()> {
        if self.kind.needs_cost() {
            match &self.cost {
                Some(c) if c.classes() == net.num_classes() => {}
                Some(c) => {
                    return Err(Error::shape(format!(
                        "cost matrix has {} classes, network {}",
                        c.classes(),
                        net.num_classes()
                    )))
                }
                None => return Err(Error::invalid("this loss needs a cost matrix")),
            }
        }
        if self.kind == LossKind::CsRobust && self.class_weights.len() != net.num_classes() {
            return Err(Error::shape("one class weight per class"));
        }
        Ok(())
    }

    /// This example's share of the batch loss, where `scale = 1 / batch size`.
    pub fn example_on_tape<'t>(&self, vars: &NetVars<'t, S>, x: &[S], y: usize, scale: S) -> Var<'t, S> {
        let tape = vars.weights[0].tape();
        match self.kind {
            LossKind::Ce => ce_on_tape(vars.logits(tape.constant(Tensor::vector(x.to_vec()))), y).scale(scale),
            LossKind::StandardCs => {
                let logits = vars.logits(tape.constant(Tensor::vector(x.to_vec())));
                standard_cs_on_tape(logits, y, self.cost().row(y)).scale(scale)
            }
            LossKind::OverallRobust => {
                let m = vars.biases.last().expect("nonempty network").value().len();
                let targets: Vec<usize> = (0..m).filter(|&t| t != y).collect();
                let ones = vec![S::one(); targets.len()];
                robust_term_on_tape(vars, x, y, &self.pert, &targets, ones).scale(scale)
            }
            LossKind::CsRobust => {
                let clean = ce_on_tape(vars.logits(tape.constant(Tensor::vector(x.to_vec()))), y).scale(scale);
                let w = self.class_weights[y];
                let targets = self.cost().targets_of(y);
                if self.alpha == S::zero() || w == S::zero() || targets.is_empty() {
                    return clean;
                }
                let weights = targets.iter().map(|&t| S::lit(self.cost().get(y, t))).collect();
                let robust = robust_term_on_tape(vars, x, y, &self.pert, &targets, weights);
                clean + robust.scale(self.alpha * w)
            }
        }
    }

    /// The batch loss recorded on one tape (used for gradient checking).
    pub fn batch_on_tape<'t>(&self, vars: &NetVars<'t, S>, data: &Dataset<S>, batch: &[usize]) -> Var<'t, S> {
        let scale = S::one() / S::lit(batch.len() as f64);
        let mut terms = batch.iter().map(|&i| self.example_on_tape(vars, data.x(i), data.y(i), scale));
        let first = terms.next().expect("nonempty batch");
        terms.fold(first, |acc, t| acc + t)
    }

    fn check(&self, net: &Network<S>, data: &Dataset<S>, batch: &[usize]) -> Result<()> {
        self.validate(net)?;
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if data.dim() != net.input_dim() || data.classes() != net.num_classes() {
            return Err(Error::shape("dataset does not match the network"));
        }
        if let Some(&i) = batch.iter().find(|&&i| i >= data.len()) {
            return Err(Error::invalid(format!("index {i} outside dataset of {}", data.len())));
        }
        Ok(())
    }

    /// Batch loss value.
    pub fn value(&self, net: &Network<S>, data: &Dataset<S>, batch: &[usize]) -> Result<S> {
        self.check(net, data, batch)?;
        let scale = S::one() / S::lit(batch.len() as f64);
        let terms: Vec<S> = batch
            .par_iter()
            .map(|&i| {
                let tape = Tape::new();
                let vars = net.on_tape(&tape);
                self.example_on_tape(&vars, data.x(i), data.y(i), scale).item()
            })
            .collect();
        let total = terms.into_iter().fold(None, |acc: Option<S>, t| Some(acc.map_or(t, |a| a + t)));
        let total = total.expect("nonempty batch");
        if !total.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        Ok(total)
    }

    /// Batch loss and its gradient in [`Network::params`] order.
    pub fn value_and_grad(&self, net: &Network<S>, data: &Dataset<S>, batch: &[usize]) -> Result<(S, Vec<Tensor<S>>)> {
        self.check(net, data, batch)?;
        let scale = S::one() / S::lit(batch.len() as f64);
        let per_example: Vec<Result<(S, Vec<Tensor<S>>)>> = batch
            .par_iter()
            .map(|&i| {
                let tape = Tape::new();
                let vars = net.on_tape(&tape);
                let loss = self.example_on_tape(&vars, data.x(i), data.y(i), scale);
                let grads = tape.backward(loss)?;
                Ok((loss.item(), vars.params().into_iter().map(|p| grads.get(p)).collect()))
            })
            .collect();
        let mut iter = per_example.into_iter();
        let (mut total, grads) = iter.next().expect("nonempty batch")?;
        let mut acc: Vec<Vec<S>> = grads.iter().map(|g| g.to_vec()).collect();
        for item in iter {
            let (v, g) = item?;
            total += v;
            for (a, g) in acc.iter_mut().zip(&g) {
                for (a, &b) in a.iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let shapes: Vec<Vec<usize>> = grads.iter().map(|g| g.shape().to_vec()).collect();
        let grads = acc
            .into_iter()
            .zip(shapes)
            .map(|(data, shape)| Tensor::new(shape, data))
            .collect::<Result<Vec<_>>>()?;
        Ok((total, grads))
    }
}

fn all_indices<S: Scalar>(data: &Dataset<S>) -> Vec<usize> {
    (0..data.len()).collect()
}

/// Mean cross-entropy over the whole dataset.
pub fn mean_ce_loss<S: Scalar>(net: &Network<S>, data: &Dataset<S>) -> Result<S> {
    Objective::ce().value(net, data, &all_indices(data))
}

/// Overall robust loss over the whole dataset.
pub fn overall_robust_loss<S: Scalar>(net: &Network<S>, data: &Dataset<S>, pert: &Perturbation<S>) -> Result<S> {
    Objective::overall_robust(*pert).value(net, data, &all_indices(data))
}

/// Cost-sensitive robust loss over the whole dataset with its own `N_j`.
pub fn cs_robust_loss<S: Scalar>(
    net: &Network<S>,
    data: &Dataset<S>,
    pert: &Perturbation<S>,
    cost: &CostMatrix,
    alpha: S,
) -> Result<S> {
    let counts: Vec<f64> = data.class_counts().iter().map(|&n| n as f64).collect();
    Objective::cs_robust(*pert, cost.clone(), alpha, &counts)?.value(net, data, &all_indices(data))
}

/// Cost-weighted clean cross-entropy over the whole dataset.
pub fn standard_cs_loss<S: Scalar>(net: &Network<S>, data: &Dataset<S>, cost: &CostMatrix) -> Result<S> {
    Objective::standard_cs(cost.clone()).value(net, data, &all_indices(data))
}
