//! Random-search adversary used to probe the soundness of the bounds.

use super::Perturbation;
use crate::error::{Error, Result};
use crate::model::{argmax, Network};
use crate::numcore::{Rng, Scalar};

const CHUNK: usize = 256;
const MAX_CORNER_BITS: usize = 12;

/// Generates perturbations `Δ` within the admissible region: `samples`
/// uniform draws, then all sign corners over a random subset of up to 12
/// coordinates with the rest pinned to one random corner.
pub struct AttackSampler<'a, S> {
    x: &'a [S],
    lo: Vec<S>,
    hi: Vec<S>,
    uniform_left: usize,
    corner_coords: Vec<usize>,
    base_corner: Vec<bool>,
    next_corner: usize,
    rng: Rng,
}

impl<'a, S: Scalar> AttackSampler<'a, S> {
    pub fn new(x: &'a [S], pert: &Perturbation<S>, samples: usize, rng: &mut Rng) -> Self {
        let eps = pert.epsilon;
        let (lo, hi): (Vec<S>, Vec<S>) = x
            .iter()
            .map(|&xi| {
                if pert.clip_to_unit {
                    let lo = (-eps).max(-xi).min(S::zero());
                    let hi = eps.min(S::one() - xi).max(S::zero());
                    (lo, hi)
                } else {
                    (-eps, eps)
                }
            })
            .unzip();
        let d = x.len();
        let bits = d.min(MAX_CORNER_BITS);
        let mut rng = rng.substream("attack");
        let corner_coords = rng.sample_indices(d, bits);
        let base_corner = (0..d).map(|_| rng.below(2) == 1).collect();
        Self {
            x,
            lo,
            hi,
            uniform_left: samples,
            corner_coords,
            base_corner,
            next_corner: 0,
            rng,
        }
    }

    /// Total number of perturbations this sampler yields.
    pub fn total(&self) -> usize {
        self.uniform_left + (1usize << self.corner_coords.len()) - self.next_corner
    }

    /// Fills `out` with the next perturbation, or returns false when done.
    pub fn next_into(&mut self, out: &mut Vec<S>) -> bool {
        out.clear();
        if self.uniform_left > 0 {
            self.uniform_left -= 1;
            for (&lo, &hi) in self.lo.iter().zip(&self.hi) {
                let u = S::lit(self.rng.uniform());
                out.push((lo + (hi - lo) * u).max(lo).min(hi));
            }
            return true;
        }
        if self.next_corner >= 1usize << self.corner_coords.len() {
            return false;
        }
        let mut corner = self.base_corner.clone();
        for (bit, &c) in self.corner_coords.iter().enumerate() {
            corner[c] = (self.next_corner >> bit) & 1 == 1;
        }
        self.next_corner += 1;
        out.extend(corner.iter().enumerate().map(|(i, &up)| if up { self.hi[i] } else { self.lo[i] }));
        true
    }

    /// Next chunk of perturbed inputs `x + Δ`, flattened, with their `Δ`.
    fn next_chunk(&mut self) -> Option<(Vec<S>, Vec<Vec<S>>)> {
        let (mut inputs, mut deltas) = (Vec::new(), Vec::new());
        let mut delta = Vec::with_capacity(self.x.len());
        while deltas.len() < CHUNK && self.next_into(&mut delta) {
            inputs.extend(self.x.iter().zip(&delta).map(|(&a, &b)| a + b));
            deltas.push(delta.clone());
        }
        (!deltas.is_empty()).then_some((inputs, deltas))
    }
}

fn check<S: Scalar>(net: &Network<S>, x: &[S], pert: &Perturbation<S>) -> Result<()> {
    super::check_input(net, x, pert)
}

/// Searches for `Δ` with `predict(x + Δ) ∈ targets`; returns the first found.
pub fn attack_oracle<S: Scalar>(
    net: &Network<S>,
    x: &[S],
    y: usize,
    pert: &Perturbation<S>,
    targets: &[usize],
    budget: usize,
    rng: &mut Rng,
) -> Result<Option<Vec<S>>> {
    check(net, x, pert)?;
    if budget == 0 {
        return Err(Error::invalid("attack budget must be at least 1"));
    }
    if y >= net.num_classes() {
        return Err(Error::invalid(format!("label {y} outside {} classes", net.num_classes())));
    }
    if targets.is_empty() {
        return Ok(None);
    }
    let mut sampler = AttackSampler::new(x, pert, budget, rng);
    while let Some((inputs, deltas)) = sampler.next_chunk() {
        let logits = net.logits_batch(&inputs, deltas.len())?;
        for (k, delta) in deltas.into_iter().enumerate() {
            if targets.contains(&argmax(logits.row(k))) {
                return Ok(Some(delta));
            }
        }
    }
    Ok(None)
}

/// Smallest `cᵀ f(x + Δ)` over `Δ = 0` and the sampler's perturbations, with
/// the minimizing `Δ`. An upper bound on the true minimum over the region.
pub fn sampled_objective_min<S: Scalar>(
    net: &Network<S>,
    x: &[S],
    pert: &Perturbation<S>,
    c: &[S],
    samples: usize,
    rng: &mut Rng,
) -> Result<(S, Vec<S>)> {
    check(net, x, pert)?;
    if c.len() != net.num_classes() {
        return Err(Error::shape("objective length differs from the number of classes"));
    }
    let objective = |logits: &[S]| logits.iter().zip(c).map(|(&f, &w)| f * w).sum::<S>();
    let mut best = (objective(&net.logits(x)?), vec![S::zero(); x.len()]);
    let mut sampler = AttackSampler::new(x, pert, samples, rng);
    while let Some((inputs, deltas)) = sampler.next_chunk() {
        let logits = net.logits_batch(&inputs, deltas.len())?;
        for (k, delta) in deltas.into_iter().enumerate() {
            let v = objective(logits.row(k));
            if v < best.0 {
                best = (v, delta);
            }
        }
    }
    Ok(best)
}
