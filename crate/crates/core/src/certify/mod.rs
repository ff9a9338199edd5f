//! Certified lower bounds on logit margins over an ℓ∞ ball.
//!
//! Everything here is built on the dual network in [`dual`], recorded on a
//! tape so that the same code path yields values for certification and
//! gradients for training.

mod attack;
pub mod dual;
mod grid;

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use attack::{attack_oracle, sampled_objective_min, AttackSampler};
pub use dual::{
    bounds_on_tape, certify_on_tape, dual_on_tape, dual_on_tape_traced, margin_objectives, InputRegion, TapeBounds,
};
pub use grid::{pairwise_grid, PairGrid};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{AffineLayer, Network};
use crate::numcore::{grad, NeuronState, Scalar, Tape, Tensor};

/// The adversary's budget: an ℓ∞ radius, optionally intersected with the
/// unit box of valid inputs. Clipping is off unless asked for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation<S> {
    pub epsilon: S,
    #[serde(default)]
    pub clip_to_unit: bool,
}

impl<S: Scalar> Perturbation<S> {
    pub fn linf(epsilon: S) -> Self {
        Self {
            epsilon,
            clip_to_unit: false,
        }
    }

    pub fn clipped(self) -> Self {
        Self {
            clip_to_unit: true,
            ..self
        }
    }

    pub fn region(&self, x: &[S]) -> InputRegion<S> {
        InputRegion::around(x, self.epsilon, self.clip_to_unit)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon >= S::zero()) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be finite and ≥ 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

fn check_input<S: Scalar>(net: &Network<S>, x: &[S], pert: &Perturbation<S>) -> Result<()> {
    pert.validate()?;
    if x.len() != net.input_dim() {
        return Err(Error::shape(format!(
            "input has {} features, network expects {}",
            x.len(),
            net.input_dim()
        )));
    }
    Ok(())
}

/// Elementwise bounds on each hidden layer's pre-activations.
#[derive(Clone, Debug, PartialEq)]
pub struct PreactBounds<S> {
    pub lower: Vec<Vec<S>>,
    pub upper: Vec<Vec<S>>,
}

/// Index sets of one hidden layer under given bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerPartition<S> {
    pub inactive: Vec<usize>,
    pub active: Vec<usize>,
    pub unstable: Vec<usize>,
    /// Relaxation slope of every neuron.
    pub slopes: Vec<S>,
}

pub type NeuronPartition<S> = Vec<LayerPartition<S>>;

impl<S: Scalar> PreactBounds<S> {
    pub fn layers(&self) -> usize {
        self.lower.len()
    }

    pub fn partition(&self) -> NeuronPartition<S> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| {
                let mut p = LayerPartition {
                    inactive: Vec::new(),
                    active: Vec::new(),
                    unstable: Vec::new(),
                    slopes: Vec::with_capacity(l.len()),
                };
                for (j, (&lj, &uj)) in l.iter().zip(u).enumerate() {
                    let slope = match NeuronState::classify(lj, uj) {
                        NeuronState::Inactive => {
                            p.inactive.push(j);
                            S::zero()
                        }
                        NeuronState::Active => {
                            p.active.push(j);
                            S::one()
                        }
                        NeuronState::Unstable => {
                            p.unstable.push(j);
                            uj / (uj - lj)
                        }
                    };
                    p.slopes.push(slope);
                }
                p
            })
            .collect()
    }

    /// Checks the bounds match the hidden widths of `net`.
    pub fn check_against(&self, net: &Network<S>) -> Result<()> {
        let widths: Vec<usize> = net.layers()[..net.hidden_layers()].iter().map(|l| l.out_dim()).collect();
        let ok = self.lower.len() == widths.len()
            && self.upper.len() == widths.len()
            && widths
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&w, (l, u))| l.len() == w && u.len() == w);
        if ok {
            Ok(())
        } else {
            Err(Error::shape("pre-activation bounds do not match the network's hidden layers"))
        }
    }
}

fn bounds_from_tape<S: Scalar>(b: &TapeBounds<'_, S>) -> Result<PreactBounds<S>> {
    let out = PreactBounds {
        lower: b.lower.iter().map(|v| v.value().to_vec()).collect(),
        upper: b.upper.iter().map(|v| v.value().to_vec()).collect(),
    };
    if out.lower.iter().chain(&out.upper).flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pre-activation bounds"));
    }
    Ok(out)
}

/// Sound bounds on every hidden pre-activation for inputs within `pert` of `x`.
pub fn compute_bounds<S: Scalar>(net: &Network<S>, x: &[S], pert: &Perturbation<S>) -> Result<PreactBounds<S>> {
    check_input(net, x, pert)?;
    let tape = Tape::new();
    let vars = net.on_tape(&tape);
    bounds_from_tape(&bounds_on_tape(&vars, &pert.region(x)))
}

/// Reference implementation of [`compute_bounds`]: one scalar dual pass per
/// neuron and sign on each truncated network. Quadratic in network size.
pub fn compute_bounds_naive<S: Scalar>(net: &Network<S>, x: &[S], pert: &Perturbation<S>) -> Result<PreactBounds<S>> {
    check_input(net, x, pert)?;
    let mut bounds = PreactBounds {
        lower: Vec::new(),
        upper: Vec::new(),
    };
    for h in 0..net.hidden_layers() {
        let layers: Vec<AffineLayer<S>> = net.layers()[..=h].to_vec();
        let truncated = Network::new(layers)?;
        let width = truncated.num_classes();
        let (mut lower, mut upper) = (Vec::with_capacity(width), Vec::with_capacity(width));
        for j in 0..width {
            let e = Tensor::<S>::basis(width, j).to_vec();
            let neg: Vec<S> = e.iter().map(|&v| -v).collect();
            lower.push(dual_bound(&truncated, &bounds, x, pert, &e)?.value);
            upper.push(-dual_bound(&truncated, &bounds, x, pert, &neg)?.value);
        }
        bounds.lower.push(lower);
        bounds.upper.push(upper);
    }
    Ok(bounds)
}

/// The dual lower bound for one objective, with the dual variables that
/// produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct DualBound<S> {
    /// `J ≤ cᵀ f(x + Δ)` for every admissible `Δ`.
    pub value: S,
    /// `ν_h` for each hidden layer, first layer first.
    pub nu: Vec<Vec<S>>,
    /// `ν̂` at the input.
    pub nu_hat_input: Vec<S>,
}

/// Evaluates the dual objective for `c` on the logits with given bounds.
pub fn dual_bound<S: Scalar>(
    net: &Network<S>,
    bounds: &PreactBounds<S>,
    x: &[S],
    pert: &Perturbation<S>,
    c: &[S],
) -> Result<DualBound<S>> {
    check_input(net, x, pert)?;
    bounds.check_against(net)?;
    if c.len() != net.num_classes() {
        return Err(Error::shape(format!("objective has {} entries, network has {} outputs", c.len(), net.num_classes())));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("dual objective"));
    }
    let tape = Tape::new();
    let vars = net.on_tape(&tape);
    let tb = TapeBounds::from_values(&tape, &bounds.lower, &bounds.upper);
    let objective = Tensor::matrix(c.len(), 1, c.to_vec())?;
    let mut trace = Vec::new();
    let j = dual_on_tape_traced(&vars, &tb, &pert.region(x), &objective, &mut trace);
    let value = j.value().data()[0];
    if !value.is_finite() {
        return Err(Error::NonFinite("dual bound"));
    }
    let nu_hat_input = trace.pop().expect("input term is always traced").value().to_vec();
    let nu = trace.into_iter().rev().map(|v| v.value().to_vec()).collect();
    Ok(DualBound {
        value,
        nu,
        nu_hat_input,
    })
}

/// `J` together with its gradient with respect to the network parameters
/// (in [`Network::params`] order). Bounds are recomputed on the tape, so the
/// gradient includes their dependence on the parameters.
pub fn dual_bound_grad<S: Scalar>(
    net: &Network<S>,
    x: &[S],
    pert: &Perturbation<S>,
    c: &[S],
) -> Result<(S, Vec<Tensor<S>>)> {
    check_input(net, x, pert)?;
    if c.len() != net.num_classes() {
        return Err(Error::shape("objective length differs from the number of classes"));
    }
    let arch = net.arch();
    let region = pert.region(x);
    let objective = Tensor::matrix(c.len(), 1, c.to_vec())?;
    grad(&net.params(), |_, params| {
        let vars = crate::model::NetVars {
            weights: params.iter().step_by(2).copied().collect(),
            biases: params.iter().skip(1).step_by(2).copied().collect(),
        };
        debug_assert_eq!(vars.len() + 1, arch.len());
        let (_, j) = certify_on_tape(&vars, &region, &objective);
        Ok(j.sum())
    })
}

/// One target's bound and verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetBound {
    pub target: usize,
    pub bound: f64,
    pub certified: bool,
}

/// Per-example certification outcome against a set of target classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationRecord {
    pub id: usize,
    pub label: usize,
    pub targets: Vec<TargetBound>,
}

impl CertificationRecord {
    /// True when every target is certified (vacuously so for no targets).
    pub fn certified(&self) -> bool {
        self.targets.iter().all(|t| t.certified)
    }

    pub fn bound_for(&self, target: usize) -> Option<f64> {
        self.targets.iter().find(|t| t.target == target).map(|t| t.bound)
    }

    /// Whether every target in `classes` that this record covers is certified.
    pub fn certified_against(&self, classes: &[usize]) -> bool {
        self.targets
            .iter()
            .filter(|t| classes.contains(&t.target))
            .all(|t| t.certified)
    }
}

/// Bounds `J` for `e_y − e_t` over each target `t`; bounds on the hidden
/// layers are computed once and shared.
pub fn certify_example<S: Scalar>(
    net: &Network<S>,
    x: &[S],
    y: usize,
    pert: &Perturbation<S>,
    targets: &[usize],
) -> Result<CertificationRecord> {
    certify_indexed(net, 0, x, y, pert, targets)
}

fn certify_indexed<S: Scalar>(
    net: &Network<S>,
    id: usize,
    x: &[S],
    y: usize,
    pert: &Perturbation<S>,
    targets: &[usize],
) -> Result<CertificationRecord> {
    check_input(net, x, pert)?;
    let m = net.num_classes();
    if y >= m {
        return Err(Error::invalid(format!("label {y} outside {m} classes")));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= m || t == y) {
        return Err(Error::invalid(format!("target {t} is not a class other than {y}")));
    }
    let mut record = CertificationRecord {
        id,
        label: y,
        targets: Vec::with_capacity(targets.len()),
    };
    if targets.is_empty() {
        return Ok(record);
    }
    let tape = Tape::new();
    let vars = net.on_tape(&tape);
    let (_, j) = certify_on_tape(&vars, &pert.region(x), &margin_objectives(m, y, targets));
    let values = j.value();
    for (&target, &v) in targets.iter().zip(values.data()) {
        if !v.is_finite() {
            return Err(Error::NonFinite("dual bound"));
        }
        record.targets.push(TargetBound {
            target,
            bound: v.as_f64(),
            certified: v >= S::zero(),
        });
    }
    Ok(record)
}

/// Certifies every example against every other class, in parallel; records
/// come back in dataset order.
pub fn certify_dataset<S: Scalar>(
    net: &Network<S>,
    data: &Dataset<S>,
    pert: &Perturbation<S>,
) -> Result<Vec<CertificationRecord>> {
    if data.classes() != net.num_classes() {
        return Err(Error::shape(format!(
            "dataset has {} classes, network {}",
            data.classes(),
            net.num_classes()
        )));
    }
    let m = net.num_classes();
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let y = data.y(i);
            let targets: Vec<usize> = (0..m).filter(|&t| t != y).collect();
            certify_indexed(net, i, data.x(i), y, pert, &targets)
        })
        .collect()
}

/// Writes one JSON object per line.
pub fn write_records_jsonl(records: &[CertificationRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads records written by [`write_records_jsonl`].
pub fn read_records_jsonl(path: impl AsRef<Path>) -> Result<Vec<CertificationRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::malformed(path, format!("line {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::numcore::Rng;

    fn single_layer() -> Network<f64> {
        Network::new(vec![
            AffineLayer::new(Tensor::from_rows(&[vec![1.0, -1.0]]), Tensor::vector(vec![0.0])).unwrap(),
            AffineLayer::new(Tensor::from_rows(&[vec![1.0]]), Tensor::vector(vec![0.0])).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn first_layer_hand_formula() {
        let b = compute_bounds(&single_layer(), &[0.0, 0.0], &Perturbation::linf(0.5)).unwrap();
        assert_eq!(b.lower, vec![vec![-1.0]]);
        assert_eq!(b.upper, vec![vec![1.0]]);
    }

    #[test]
    fn zero_radius_is_exact() {
        let net = init_params::<f64>(&[4, 8, 8, 3], &mut Rng::new(2)).unwrap();
        let x = [0.1, 0.7, 0.3, 0.9];
        let b = compute_bounds(&net, &x, &Perturbation::linf(0.0)).unwrap();
        let f = net.forward(&x).unwrap();
        for (h, pre) in f.preacts.iter().take(2).enumerate() {
            for j in 0..pre.len() {
                assert!((b.lower[h][j] - pre[j]).abs() <= 1e-12);
                assert!((b.upper[h][j] - pre[j]).abs() <= 1e-12);
            }
        }
        let c = [1.0, -1.0, 0.0];
        let j = dual_bound(&net, &b, &x, &Perturbation::linf(0.0), &c).unwrap().value;
        assert!((j - (f.logits[0] - f.logits[1])).abs() <= 1e-9);
    }

    #[test]
    fn zero_objective_gives_zero() {
        let net = init_params::<f64>(&[3, 5, 2], &mut Rng::new(4)).unwrap();
        let x = [0.2, 0.4, 0.6];
        let p = Perturbation::linf(0.3);
        let b = compute_bounds(&net, &x, &p).unwrap();
        assert_eq!(dual_bound(&net, &b, &x, &p, &[0.0, 0.0]).unwrap().value, 0.0);
    }

    #[test]
    fn naive_and_matrix_bounds_agree() {
        let net = init_params::<f64>(&[5, 7, 6, 5, 3], &mut Rng::new(8)).unwrap();
        let x = [0.5, 0.1, 0.9, 0.3, 0.6];
        for p in [Perturbation::linf(0.05), Perturbation::linf(0.2).clipped()] {
            let fast = compute_bounds(&net, &x, &p).unwrap();
            let slow = compute_bounds_naive(&net, &x, &p).unwrap();
            for (a, b) in fast.lower.iter().flatten().zip(slow.lower.iter().flatten()) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
            for (a, b) in fast.upper.iter().flatten().zip(slow.upper.iter().flatten()) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn empty_targets_are_vacuous() {
        let net = init_params::<f64>(&[2, 3, 3], &mut Rng::new(1)).unwrap();
        let r = certify_example(&net, &[0.5, 0.5], 1, &Perturbation::linf(0.1), &[]).unwrap();
        assert!(r.targets.is_empty() && r.certified());
        assert!(certify_example(&net, &[0.5, 0.5], 1, &Perturbation::linf(0.1), &[1]).is_err());
    }

    #[test]
    fn mismatched_bounds_are_rejected() {
        let net = init_params::<f64>(&[2, 3, 2], &mut Rng::new(1)).unwrap();
        let b = PreactBounds {
            lower: vec![vec![0.0; 2]],
            upper: vec![vec![0.0; 2]],
        };
        assert!(matches!(
            dual_bound(&net, &b, &[0.0, 0.0], &Perturbation::linf(0.1), &[1.0, -1.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn records_round_trip_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        let recs = vec![CertificationRecord {
            id: 3,
            label: 1,
            targets: vec![TargetBound {
                target: 0,
                bound: -0.25,
                certified: false,
            }],
        }];
        write_records_jsonl(&recs, &p).unwrap();
        assert_eq!(read_records_jsonl(&p).unwrap(), recs);
    }
}
