//! The dual network: pre-activation bounds and the lower bound `J` recorded
//! on a tape, so the same code serves certification and training.
//!
//! Layer indexing: affine maps `A_0 .. A_L`, hidden pre-activations
//! `ẑ_h = A_h(z_h)` for `h < L` with `z_0 = x` and `z_{h+1} = relu(ẑ_h)`.
//! For an objective `c` on the output of `A_t` the backward pass is
//!
//! ```text
//! ν_t   = −c
//! ν̂_t   = W_tᵀ ν_t
//! ν_h   = D_h ν̂_{h+1}       ν̂_h = W_hᵀ ν_h        (h = t−1 .. 0)
//! J     = −Σ ν_hᵀ b_h − ν̂_0ᵀ x − ε‖ν̂_0‖₁ + Σ_h Σ_{j unstable} ℓ_{h,j} [ν_{h,j}]₊
//! ```
//!
//! Columns of `c` are independent objectives; all of them share one pass.

use crate::model::NetVars;
use crate::numcore::{Scalar, Tape, Tensor, Var};

/// The ℓ∞ region an adversary may move the input within.
#[derive(Clone, Debug)]
pub enum InputRegion<S> {
    /// `‖x' − x‖∞ ≤ eps`.
    Ball { x: Tensor<S>, eps: S },
    /// Axis-aligned box given by center and per-coordinate radius.
    Box { center: Tensor<S>, radius: Tensor<S> },
}

impl<S: Scalar> InputRegion<S> {
    /// The ε-ball around `x`, optionally intersected with `[0, 1]^d`.
    pub fn around(x: &[S], eps: S, clip_to_unit: bool) -> Self {
        if !clip_to_unit {
            return InputRegion::Ball {
                x: Tensor::vector(x.to_vec()),
                eps,
            };
        }
        let half = S::lit(0.5);
        let (mut center, mut radius) = (Vec::with_capacity(x.len()), Vec::with_capacity(x.len()));
        for &xi in x {
            let lo = (xi - eps).max(S::zero());
            let hi = (xi + eps).min(S::one());
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (xi, xi) };
            center.push((lo + hi) * half);
            radius.push((hi - lo) * half);
        }
        InputRegion::Box {
            center: Tensor::vector(center),
            radius: Tensor::vector(radius),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InputRegion::Ball { x, .. } => x.len(),
            InputRegion::Box { center, .. } => center.len(),
        }
    }

    /// Lowest and highest admissible value of each coordinate.
    pub fn extent(&self) -> (Vec<S>, Vec<S>) {
        match self {
            InputRegion::Ball { x, eps } => (
                x.data().iter().map(|&v| v - *eps).collect(),
                x.data().iter().map(|&v| v + *eps).collect(),
            ),
            InputRegion::Box { center, radius } => (
                center.data().iter().zip(radius.data()).map(|(&c, &r)| c - r).collect(),
                center.data().iter().zip(radius.data()).map(|(&c, &r)| c + r).collect(),
            ),
        }
    }
}

enum RegionVars<'t, S: Scalar> {
    Ball { x: Var<'t, S>, eps: S },
    Box { center: Var<'t, S>, radius: Var<'t, S> },
}

impl<'t, S: Scalar> RegionVars<'t, S> {
    fn record(tape: &'t Tape<S>, region: &InputRegion<S>) -> Self {
        match region {
            InputRegion::Ball { x, eps } => RegionVars::Ball {
                x: tape.constant(x.clone()),
                eps: *eps,
            },
            InputRegion::Box { center, radius } => RegionVars::Box {
                center: tape.constant(center.clone()),
                radius: tape.constant(radius.clone()),
            },
        }
    }

    fn center(&self) -> Var<'t, S> {
        match self {
            RegionVars::Ball { x, .. } => *x,
            RegionVars::Box { center, .. } => *center,
        }
    }

    /// `max_{z ∈ region} ±ν̂ᵀ(z − center)` per column of `nu_hat`.
    fn spread(&self, nu_hat: Var<'t, S>) -> Var<'t, S> {
        match self {
            RegionVars::Ball { eps, .. } => nu_hat.col_l1().scale(*eps),
            RegionVars::Box { radius, .. } => nu_hat.abs().matvec_t(*radius),
        }
    }
}

/// Pre-activation bounds of every hidden layer, recorded on a tape together
/// with the relaxation quantities derived from them.
pub struct TapeBounds<'t, S: Scalar> {
    pub lower: Vec<Var<'t, S>>,
    pub upper: Vec<Var<'t, S>>,
    /// Relaxation slopes `D_h`.
    pub slopes: Vec<Var<'t, S>>,
    /// `ℓ_h` restricted to unstable neurons.
    pub unstable_lower: Vec<Var<'t, S>>,
}

impl<'t, S: Scalar> TapeBounds<'t, S> {
    fn empty() -> Self {
        Self {
            lower: Vec::new(),
            upper: Vec::new(),
            slopes: Vec::new(),
            unstable_lower: Vec::new(),
        }
    }

    /// Records externally supplied bounds as constants.
    pub fn from_values(tape: &'t Tape<S>, lower: &[Vec<S>], upper: &[Vec<S>]) -> Self {
        let mut out = Self::empty();
        for (l, u) in lower.iter().zip(upper) {
            out.push(tape.constant(Tensor::vector(l.clone())), tape.constant(Tensor::vector(u.clone())));
        }
        out
    }

    fn push(&mut self, lower: Var<'t, S>, upper: Var<'t, S>) {
        self.slopes.push(lower.relax_slope(upper));
        self.unstable_lower.push(lower.unstable_lower(upper));
        self.lower.push(lower);
        self.upper.push(upper);
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }
}

struct PassTerms<'t, S: Scalar> {
    /// Terms linear in the objective: `−Σ ν_hᵀ b_h − ν̂_0ᵀ x`.
    linear: Var<'t, S>,
    /// `ε‖ν̂_0‖₁` (nonnegative, even in the objective).
    spread: Var<'t, S>,
    /// `Σ ℓᵀ[ν]₊` over unstable neurons (nonpositive).
    relax_pos: Var<'t, S>,
    /// `Σ ℓᵀ[−ν]₊`, the same term for the negated objective.
    relax_neg: Option<Var<'t, S>>,
}

/// Runs the dual pass downward from `ν̂` at the input of affine layer `top`.
fn backward_pass<'t, S: Scalar>(
    net: &NetVars<'t, S>,
    bounds: &TapeBounds<'t, S>,
    region: &RegionVars<'t, S>,
    top: usize,
    mut nu_hat: Var<'t, S>,
    mut linear: Var<'t, S>,
    want_neg: bool,
    mut trace: Option<&mut Vec<Var<'t, S>>>,
) -> PassTerms<'t, S> {
    let tape = linear.tape();
    let cols = linear.value().len();
    let zero = || tape.constant(Tensor::zeros(&[cols]));
    let mut relax_pos: Option<Var<'t, S>> = None;
    let mut relax_neg: Option<Var<'t, S>> = None;
    for h in (0..top).rev() {
        let nu = nu_hat.row_scale(bounds.slopes[h]);
        if let Some(t) = trace.as_mut() {
            t.push(nu);
        }
        let l = bounds.unstable_lower[h];
        let pos = nu.relu().matvec_t(l);
        relax_pos = Some(relax_pos.map_or(pos, |acc| acc + pos));
        if want_neg {
            let neg = (-nu).relu().matvec_t(l);
            relax_neg = Some(relax_neg.map_or(neg, |acc| acc + neg));
        }
        linear = linear - nu.matvec_t(net.biases[h]);
        nu_hat = net.weights[h].matmul_tn(nu);
    }
    linear = linear - nu_hat.matvec_t(region.center());
    if let Some(t) = trace {
        t.push(nu_hat);
    }
    PassTerms {
        linear,
        spread: region.spread(nu_hat),
        relax_pos: relax_pos.unwrap_or_else(zero),
        relax_neg: if want_neg {
            Some(relax_neg.unwrap_or_else(zero))
        } else {
            None
        },
    }
}

/// Bounds on every hidden pre-activation over `region`.
///
/// The first hidden layer uses `W_0 x + b_0 ∓ ε‖W_0‖_{1,row}` directly; each
/// deeper layer runs one dual pass on the truncated network with the identity
/// objective, i.e. every neuron's `±e_j` objectives at once.
pub fn bounds_on_tape<'t, S: Scalar>(net: &NetVars<'t, S>, region: &InputRegion<S>) -> TapeBounds<'t, S> {
    let tape = net.weights[0].tape();
    let rv = RegionVars::record(tape, region);
    bounds_with_region(net, &rv)
}

fn bounds_with_region<'t, S: Scalar>(net: &NetVars<'t, S>, rv: &RegionVars<'t, S>) -> TapeBounds<'t, S> {
    let hidden = net.len() - 1;
    let mut bounds = TapeBounds::empty();
    if hidden == 0 {
        return bounds;
    }
    let w0 = net.weights[0];
    let pre = w0.matvec(rv.center()) + net.biases[0];
    let radius = match rv {
        RegionVars::Ball { eps, .. } => w0.row_l1().scale(*eps),
        RegionVars::Box { radius, .. } => w0.abs().matvec(*radius),
    };
    bounds.push(pre - radius, pre + radius);

    for h in 1..hidden {
        let nu_hat = -net.weights[h].transpose();
        let terms = backward_pass(net, &bounds, rv, h, nu_hat, net.biases[h], true, None);
        let relax_neg = terms.relax_neg.expect("requested");
        let lower = terms.linear + (terms.relax_pos - terms.spread);
        let upper = terms.linear + (terms.spread - relax_neg);
        bounds.push(lower, upper);
    }
    bounds
}

/// Dual lower bounds `J` for each column of `objective` (an `m × T` matrix of
/// objectives on the logits), given bounds for the same region.
pub fn dual_on_tape<'t, S: Scalar>(
    net: &NetVars<'t, S>,
    bounds: &TapeBounds<'t, S>,
    region: &InputRegion<S>,
    objective: &Tensor<S>,
) -> Var<'t, S> {
    let tape = net.weights[0].tape();
    let rv = RegionVars::record(tape, region);
    dual_with_region(net, bounds, &rv, objective, None)
}

/// As [`dual_on_tape`], also pushing `ν` of each hidden layer (top down)
/// followed by `ν̂` at the input onto `trace`.
pub fn dual_on_tape_traced<'t, S: Scalar>(
    net: &NetVars<'t, S>,
    bounds: &TapeBounds<'t, S>,
    region: &InputRegion<S>,
    objective: &Tensor<S>,
    trace: &mut Vec<Var<'t, S>>,
) -> Var<'t, S> {
    let tape = net.weights[0].tape();
    let rv = RegionVars::record(tape, region);
    dual_with_region(net, bounds, &rv, objective, Some(trace))
}

fn dual_with_region<'t, S: Scalar>(
    net: &NetVars<'t, S>,
    bounds: &TapeBounds<'t, S>,
    rv: &RegionVars<'t, S>,
    objective: &Tensor<S>,
    trace: Option<&mut Vec<Var<'t, S>>>,
) -> Var<'t, S> {
    let tape = net.weights[0].tape();
    let last = net.len() - 1;
    let c = tape.constant(objective.clone());
    // ν_L = −c, so −ν_Lᵀ b_L = cᵀ b_L and ν̂_L = −W_Lᵀ c.
    let linear = c.matvec_t(net.biases[last]);
    let nu_hat = -net.weights[last].matmul_tn(c);
    let terms = backward_pass(net, bounds, rv, last, nu_hat, linear, false, trace);
    (terms.linear + terms.relax_pos) - terms.spread
}

/// Bounds followed by `J` for every column of `objective`, sharing one
/// recording of the region.
pub fn certify_on_tape<'t, S: Scalar>(
    net: &NetVars<'t, S>,
    region: &InputRegion<S>,
    objective: &Tensor<S>,
) -> (TapeBounds<'t, S>, Var<'t, S>) {
    let tape = net.weights[0].tape();
    let rv = RegionVars::record(tape, region);
    let bounds = bounds_with_region(net, &rv);
    let j = dual_with_region(net, &bounds, &rv, objective, None);
    (bounds, j)
}

/// Objective matrix whose columns are `e_y − e_t` for each target `t`.
pub fn margin_objectives<S: Scalar>(classes: usize, y: usize, targets: &[usize]) -> Tensor<S> {
    let t = targets.len();
    let mut data = vec![S::zero(); classes * t];
    for (col, &target) in targets.iter().enumerate() {
        data[y * t + col] += S::one();
        data[target * t + col] -= S::one();
    }
    Tensor::matrix(classes, t, data).expect("sized above")
}
