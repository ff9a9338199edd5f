//! Reverse-mode differentiation over whole linear-algebra primitives.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Node ids are
//! assigned in creation order, so parents always have smaller ids than their
//! children and the reverse sweep in [`Tape::backward`] is a single pass from
//! the root down to id 0.
//!
//! Conventions at non-differentiable points: `relu'(0) = 0`, `|·|'(0) = 0`, and
//! the relaxation slope is treated as locally constant on stable neurons.

use std::cell::RefCell;
use std::ops::{Add, Mul, Neg, Sub};

use super::tensor::{log1p_sum_exp_of_logs, logsumexp, sign0};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

enum Op<S> {
    Leaf,
    MatVec(usize, usize),
    MatVecT(usize, usize),
    MatMul(usize, usize),
    MatMulTn(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Neg(usize),
    Scale(usize, S),
    Mul(usize, usize),
    Relu(usize),
    Abs(usize),
    L1(usize),
    ColL1(usize),
    RowL1(usize),
    RowScale { m: usize, d: usize },
    RelaxSlope { lower: usize, upper: usize },
    UnstableLower { lower: usize, upper: usize },
    Sum(usize),
    Dot(usize, usize),
    Gather(usize, Vec<usize>),
    Concat(Vec<usize>),
    LogSumExp(usize),
    Log1pSumExp { exps: usize, weights: Vec<S> },
}

impl<S> Op<S> {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatVec(a, b)
            | Op::MatVecT(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulTn(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Dot(a, b) => vec![*a, *b],
            Op::RowScale { m, d } => vec![*m, *d],
            Op::RelaxSlope { lower, upper } | Op::UnstableLower { lower, upper } => vec![*lower, *upper],
            Op::Transpose(a)
            | Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::L1(a)
            | Op::ColL1(a)
            | Op::RowL1(a)
            | Op::Sum(a)
            | Op::Gather(a, _)
            | Op::LogSumExp(a)
            | Op::Log1pSumExp { exps: a, .. } => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    /// Whether some leaf below this node is differentiable.
    live: bool,
}

/// Which side of the ReLU relaxation a neuron falls on, from its bounds.
///
/// `u ≤ 0` is inactive (this includes `ℓ = u = 0`), otherwise `ℓ ≥ 0` is
/// active, otherwise the neuron is unstable and relaxed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeuronState {
    Inactive,
    Active,
    Unstable,
}

impl NeuronState {
    #[inline]
    pub fn classify<S: Scalar>(lower: S, upper: S) -> Self {
        if upper <= S::zero() {
            NeuronState::Inactive
        } else if lower >= S::zero() {
            NeuronState::Active
        } else {
            NeuronState::Unstable
        }
    }
}

/// Recording of a computation, confined to a single thread.
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    kinks: Option<RefCell<Vec<i8>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            kinks: None,
        }
    }

    /// A tape that also records which side of every kink (ReLU, `|·|`,
    /// relaxation partition) each element fell on. Two evaluations with equal
    /// signatures lie in the same smooth piece of the recorded function.
    pub fn with_kink_tracking() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            kinks: Some(RefCell::new(Vec::new())),
        }
    }

    pub fn kink_signature(&self) -> Option<Vec<i8>> {
        self.kinks.as_ref().map(|k| k.borrow().clone())
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Records an input; gradients are reported for leaves.
    pub fn leaf(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push_node(value, Op::Leaf, true)
    }

    /// Records an input that is never differentiated. The reverse sweep skips
    /// every node that depends only on constants.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn scalar(&self, v: S) -> Var<'_, S> {
        self.leaf(Tensor::scalar(v))
    }

    /// Concatenates the flattened values of `parts` into one vector.
    pub fn concat<'t>(&'t self, parts: &[Var<'t, S>]) -> Var<'t, S> {
        let data: Vec<S> = {
            let nodes = self.nodes.borrow();
            parts.iter().flat_map(|p| nodes[p.id].value.data().iter().copied()).collect()
        };
        self.push(Tensor::vector(data), Op::Concat(parts.iter().map(|p| p.id).collect()))
    }

    fn push(&self, value: Tensor<S>, op: Op<S>) -> Var<'_, S> {
        let live = {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|&p| nodes[p].live)
        };
        self.push_node(value, op, live)
    }

    fn push_node(&self, value: Tensor<S>, op: Op<S>, live: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, live });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Tensor<S> {
        self.nodes.borrow()[id].value.clone()
    }

    fn record_kinks(&self, signs: impl Iterator<Item = i8>) {
        if let Some(k) = &self.kinks {
            k.borrow_mut().extend(signs);
        }
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var<'_, S>) -> Result<Gradients<S>> {
        assert!(std::ptr::eq(root.tape, self), "root belongs to another tape");
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.id].value.len(), 1, "backward needs a scalar root");

        let mut grads = Grads {
            slots: (0..=root.id).map(|_| None).collect(),
            live: nodes[..=root.id].iter().map(|n| n.live).collect(),
        };
        grads.slots[root.id] = Some(vec![S::one()]);
        let mut leaves: Vec<Option<Tensor<S>>> = (0..=root.id).map(|_| None).collect();

        for id in (0..=root.id).rev() {
            let Some(g) = grads.slots[id].take() else { continue };
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("reverse sweep"));
            }
            let node = &nodes[id];
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    leaves[id] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                Op::MatVec(w, v) => {
                    let (wv, vv) = (val(*w), val(*v));
                    let (r, c) = (wv.rows(), wv.cols());
                    accumulate(&mut grads, *w, r * c, |dw| {
                        for i in 0..r {
                            if g[i] == S::zero() {
                                continue;
                            }
                            for (d, &x) in dw[i * c..(i + 1) * c].iter_mut().zip(vv.data()) {
                                *d += g[i] * x;
                            }
                        }
                    });
                    accumulate(&mut grads, *v, c, |dv| {
                        for i in 0..r {
                            if g[i] == S::zero() {
                                continue;
                            }
                            for (d, &x) in dv.iter_mut().zip(wv.row(i)) {
                                *d += g[i] * x;
                            }
                        }
                    });
                }
                Op::MatVecT(w, v) => {
                    let (wv, vv) = (val(*w), val(*v));
                    let (r, c) = (wv.rows(), wv.cols());
                    accumulate(&mut grads, *w, r * c, |dw| {
                        for i in 0..r {
                            let vi = vv.data()[i];
                            if vi == S::zero() {
                                continue;
                            }
                            for (d, &gj) in dw[i * c..(i + 1) * c].iter_mut().zip(&g) {
                                *d += vi * gj;
                            }
                        }
                    });
                    accumulate(&mut grads, *v, r, |dv| {
                        for (i, d) in dv.iter_mut().enumerate() {
                            *d += wv.row(i).iter().zip(&g).fold(S::zero(), |a, (&x, &y)| a + x * y);
                        }
                    });
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    accumulate(&mut grads, *a, m * k, |da| {
                        S::gemm(m, n, k, &g, (n, 1), bv.data(), (1, n), S::one(), da)
                    });
                    accumulate(&mut grads, *b, k * n, |db| {
                        S::gemm(k, m, n, av.data(), (1, k), &g, (n, 1), S::one(), db)
                    });
                }
                Op::MatMulTn(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (k, m, n) = (av.rows(), av.cols(), bv.cols());
                    accumulate(&mut grads, *a, k * m, |da| {
                        S::gemm(k, n, m, bv.data(), (n, 1), &g, (1, n), S::one(), da)
                    });
                    accumulate(&mut grads, *b, k * n, |db| {
                        S::gemm(k, m, n, av.data(), (m, 1), &g, (n, 1), S::one(), db)
                    });
                }
                Op::Transpose(a) => {
                    let (r, c) = (val(*a).rows(), val(*a).cols());
                    accumulate(&mut grads, *a, r * c, |da| {
                        for i in 0..r {
                            for j in 0..c {
                                da[i * c + j] += g[j * r + i];
                            }
                        }
                    });
                }
                Op::Add(a, b) => {
                    add_into(&mut grads, *a, &g, S::one());
                    add_into(&mut grads, *b, &g, S::one());
                }
                Op::Sub(a, b) => {
                    add_into(&mut grads, *a, &g, S::one());
                    add_into(&mut grads, *b, &g, -S::one());
                }
                Op::Neg(a) => add_into(&mut grads, *a, &g, -S::one()),
                Op::Scale(a, k) => add_into(&mut grads, *a, &g, *k),
                Op::Mul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    accumulate(&mut grads, *a, g.len(), |da| {
                        for ((d, &gi), &y) in da.iter_mut().zip(&g).zip(bv.data()) {
                            *d += gi * y;
                        }
                    });
                    accumulate(&mut grads, *b, g.len(), |db| {
                        for ((d, &gi), &x) in db.iter_mut().zip(&g).zip(av.data()) {
                            *d += gi * x;
                        }
                    });
                }
                Op::Relu(a) => {
                    let av = val(*a);
                    accumulate(&mut grads, *a, g.len(), |da| {
                        for ((d, &gi), &x) in da.iter_mut().zip(&g).zip(av.data()) {
                            if x > S::zero() {
                                *d += gi;
                            }
                        }
                    });
                }
                Op::Abs(a) => {
                    let av = val(*a);
                    accumulate(&mut grads, *a, g.len(), |da| {
                        for ((d, &gi), &x) in da.iter_mut().zip(&g).zip(av.data()) {
                            *d += gi * sign0(x);
                        }
                    });
                }
                Op::L1(a) => {
                    let av = val(*a);
                    accumulate(&mut grads, *a, av.len(), |da| {
                        for (d, &x) in da.iter_mut().zip(av.data()) {
                            *d += g[0] * sign0(x);
                        }
                    });
                }
                Op::ColL1(a) => {
                    let av = val(*a);
                    let c = av.cols();
                    accumulate(&mut grads, *a, av.len(), |da| {
                        for (drow, xrow) in da.chunks_mut(c.max(1)).zip(av.data().chunks(c.max(1))) {
                            for ((d, &x), &gj) in drow.iter_mut().zip(xrow).zip(&g) {
                                *d += gj * sign0(x);
                            }
                        }
                    });
                }
                Op::RowL1(a) => {
                    let av = val(*a);
                    let c = av.cols();
                    accumulate(&mut grads, *a, av.len(), |da| {
                        for ((drow, xrow), &gi) in da.chunks_mut(c.max(1)).zip(av.data().chunks(c.max(1))).zip(&g) {
                            for (d, &x) in drow.iter_mut().zip(xrow) {
                                *d += gi * sign0(x);
                            }
                        }
                    });
                }
                Op::RowScale { m, d } => {
                    let (mv, dv) = (val(*m), val(*d));
                    let c = mv.cols();
                    let c = c.max(1);
                    accumulate(&mut grads, *m, mv.len(), |dm| {
                        for ((orow, grow), &di) in dm.chunks_mut(c).zip(g.chunks(c)).zip(dv.data()) {
                            for (o, &gi) in orow.iter_mut().zip(grow) {
                                *o += gi * di;
                            }
                        }
                    });
                    accumulate(&mut grads, *d, dv.len(), |dd| {
                        for ((o, grow), xrow) in dd.iter_mut().zip(g.chunks(c)).zip(mv.data().chunks(c)) {
                            *o += grow.iter().zip(xrow).fold(S::zero(), |a, (&gi, &x)| a + gi * x);
                        }
                    });
                }
                Op::RelaxSlope { lower, upper } => {
                    let (lv, uv) = (val(*lower), val(*upper));
                    let mut dl = vec![S::zero(); lv.len()];
                    let mut du = vec![S::zero(); uv.len()];
                    let mut any = false;
                    for i in 0..lv.len() {
                        let (l, u) = (lv.data()[i], uv.data()[i]);
                        if NeuronState::classify(l, u) == NeuronState::Unstable && g[i] != S::zero() {
                            let w = u - l;
                            let w2 = w * w;
                            dl[i] = g[i] * u / w2;
                            du[i] = -g[i] * l / w2;
                            any = true;
                        }
                    }
                    if any {
                        add_into(&mut grads, *lower, &dl, S::one());
                        add_into(&mut grads, *upper, &du, S::one());
                    }
                }
                Op::UnstableLower { lower, upper } => {
                    let (lv, uv) = (val(*lower), val(*upper));
                    accumulate(&mut grads, *lower, lv.len(), |dl| {
                        for i in 0..dl.len() {
                            if NeuronState::classify(lv.data()[i], uv.data()[i]) == NeuronState::Unstable {
                                dl[i] += g[i];
                            }
                        }
                    });
                }
                Op::Sum(a) => {
                    let n = val(*a).len();
                    accumulate(&mut grads, *a, n, |da| da.iter_mut().for_each(|d| *d += g[0]));
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    add_into(&mut grads, *a, bv.data(), g[0]);
                    add_into(&mut grads, *b, av.data(), g[0]);
                }
                Op::Gather(a, idx) => {
                    let n = val(*a).len();
                    accumulate(&mut grads, *a, n, |da| {
                        for (&i, &gi) in idx.iter().zip(&g) {
                            da[i] += gi;
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = val(p).len();
                        add_into(&mut grads, p, &g[offset..offset + n], S::one());
                        offset += n;
                    }
                }
                Op::LogSumExp(a) => {
                    let av = val(*a);
                    let lse = node.value.item();
                    accumulate(&mut grads, *a, av.len(), |da| {
                        for (d, &x) in da.iter_mut().zip(av.data()) {
                            *d += g[0] * (x - lse).exp();
                        }
                    });
                }
                Op::Log1pSumExp { exps, weights } => {
                    let tv = val(*exps);
                    let total = node.value.item();
                    accumulate(&mut grads, *exps, tv.len(), |dt| {
                        for ((d, &t), &w) in dt.iter_mut().zip(tv.data()).zip(weights) {
                            if w > S::zero() {
                                *d += g[0] * (w.ln() + t - total).exp();
                            }
                        }
                    });
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

struct Grads<S> {
    slots: Vec<Option<Vec<S>>>,
    live: Vec<bool>,
}

fn accumulate<S: Scalar>(grads: &mut Grads<S>, id: usize, len: usize, f: impl FnOnce(&mut [S])) {
    if !grads.live[id] {
        return;
    }
    let slot = grads.slots[id].get_or_insert_with(|| vec![S::zero(); len]);
    f(slot);
}

fn add_into<S: Scalar>(grads: &mut Grads<S>, id: usize, g: &[S], k: S) {
    accumulate(grads, id, g.len(), |d| {
        for (o, &x) in d.iter_mut().zip(g) {
            *o += k * x;
        }
    });
}

/// Gradients of a root with respect to every leaf it depends on.
pub struct Gradients<S> {
    leaves: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for `leaf`; zeros when the root does not depend on it.
    pub fn get(&self, leaf: Var<'_, S>) -> Tensor<S> {
        match self.leaves.get(leaf.id).and_then(Option::as_ref) {
            Some(t) => t.clone(),
            None => Tensor::zeros(&leaf.shape()),
        }
    }
}

/// Handle to a recorded value.
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    tape: &'t Tape<S>,
    id: usize,
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    pub fn value(&self) -> Tensor<S> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Value of a single-element var.
    pub fn item(&self) -> S {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    fn peek<R>(&self, f: impl FnOnce(&Tensor<S>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    fn unary(self, f: impl FnOnce(&Tensor<S>) -> Tensor<S>, op: Op<S>) -> Self {
        let out = f(&self.tape.nodes.borrow()[self.id].value);
        self.tape.push(out, op)
    }

    fn binary(self, rhs: Self, f: impl FnOnce(&Tensor<S>, &Tensor<S>) -> Tensor<S>, op: Op<S>) -> Self {
        assert!(std::ptr::eq(self.tape, rhs.tape), "vars from different tapes");
        let out = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[rhs.id].value)
        };
        self.tape.push(out, op)
    }

    /// `self · v` where `self` is a matrix.
    pub fn matvec(self, v: Self) -> Self {
        self.binary(v, |w, v| super::matvec(w, v).expect("matvec shape"), Op::MatVec(self.id, v.id))
    }

    /// `selfᵀ · v` where `self` is a matrix.
    pub fn matvec_t(self, v: Self) -> Self {
        self.binary(v, |w, v| super::matvec_t(w, v).expect("matvec_t shape"), Op::MatVecT(self.id, v.id))
    }

    pub fn matmul(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a.matmul(b).expect("matmul shape"), Op::MatMul(self.id, rhs.id))
    }

    /// `selfᵀ · rhs`.
    pub fn matmul_tn(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a.matmul_tn(b).expect("matmul_tn shape"), Op::MatMulTn(self.id, rhs.id))
    }

    pub fn transpose(self) -> Self {
        self.unary(Tensor::transpose, Op::Transpose(self.id))
    }

    pub fn scale(self, k: S) -> Self {
        self.unary(|a| a.map(|x| x * k), Op::Scale(self.id, k))
    }

    /// Elementwise product of equal shapes.
    pub fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a.zip_map(b, |x, y| x * y).expect("mul shape"), Op::Mul(self.id, rhs.id))
    }

    pub fn relu(self) -> Self {
        let out = self.value();
        self.tape
            .record_kinks(out.data().iter().map(|&x| i8::from(x > S::zero())));
        self.tape.push(super::relu(&out), Op::Relu(self.id))
    }

    pub fn abs(self) -> Self {
        let out = self.peek(|v| {
            self.tape.record_kinks(v.data().iter().map(|&x| sign0(x).as_f64() as i8));
            v.map(|x| x.abs())
        });
        self.tape.push(out, Op::Abs(self.id))
    }

    /// `Σ |v_i|` over all elements.
    pub fn l1(self) -> Self {
        let v = self.value();
        self.tape.record_kinks(v.data().iter().map(|&x| sign0(x).as_f64() as i8));
        self.tape.push(Tensor::scalar(super::l1norm(&v)), Op::L1(self.id))
    }

    /// Per-column `ℓ1` norms of a matrix.
    pub fn col_l1(self) -> Self {
        let out = self.peek(|v| {
            self.tape.record_kinks(v.data().iter().map(|&x| sign0(x).as_f64() as i8));
            let c = v.cols();
            let mut out = vec![S::zero(); c];
            for row in v.data().chunks(c.max(1)) {
                for (o, &x) in out.iter_mut().zip(row) {
                    *o += x.abs();
                }
            }
            out
        });
        self.tape.push(Tensor::vector(out), Op::ColL1(self.id))
    }

    /// Per-row `ℓ1` norms of a matrix.
    pub fn row_l1(self) -> Self {
        let out = self.peek(|v| {
            self.tape.record_kinks(v.data().iter().map(|&x| sign0(x).as_f64() as i8));
            let c = v.cols();
            (0..v.rows())
                .map(|i| v.data()[i * c..(i + 1) * c].iter().map(|x| x.abs()).sum())
                .collect()
        });
        self.tape.push(Tensor::vector(out), Op::RowL1(self.id))
    }

    /// `diag(d) · self` for a matrix, or `d ⊙ self` for a vector.
    pub fn row_scale(self, d: Self) -> Self {
        let dv = d.value();
        let out = self.peek(|m| {
            assert_eq!(m.rows(), dv.len(), "row_scale: {} rows vs {} scales", m.rows(), dv.len());
            let c = m.cols();
            let mut data = Vec::with_capacity(m.len());
            for (row, &di) in m.data().chunks(c.max(1)).zip(dv.data()) {
                data.extend(row.iter().map(|&x| x * di));
            }
            Tensor::from_parts(m.shape().to_vec(), data)
        });
        self.tape.push(out, Op::RowScale { m: self.id, d: d.id })
    }

    /// ReLU relaxation slopes `d_j` for bounds `(self, upper)`:
    /// 0 when inactive, 1 when active, `u/(u−ℓ)` when unstable.
    pub fn relax_slope(self, upper: Self) -> Self {
        let (lv, uv) = (self.value(), upper.value());
        assert_eq!(lv.len(), uv.len());
        let mut kinks = Vec::with_capacity(lv.len());
        let data = lv
            .data()
            .iter()
            .zip(uv.data())
            .map(|(&l, &u)| {
                let state = NeuronState::classify(l, u);
                kinks.push(state as i8);
                match state {
                    NeuronState::Inactive => S::zero(),
                    NeuronState::Active => S::one(),
                    NeuronState::Unstable => u / (u - l),
                }
            })
            .collect();
        self.tape.record_kinks(kinks.into_iter());
        self.tape.push(
            Tensor::vector(data),
            Op::RelaxSlope {
                lower: self.id,
                upper: upper.id,
            },
        )
    }

    /// The lower bound on unstable neurons, zero elsewhere.
    pub fn unstable_lower(self, upper: Self) -> Self {
        let (lv, uv) = (self.value(), upper.value());
        let data = lv
            .data()
            .iter()
            .zip(uv.data())
            .map(|(&l, &u)| match NeuronState::classify(l, u) {
                NeuronState::Unstable => l,
                _ => S::zero(),
            })
            .collect();
        self.tape.push(
            Tensor::vector(data),
            Op::UnstableLower {
                lower: self.id,
                upper: upper.id,
            },
        )
    }

    pub fn sum(self) -> Self {
        self.unary(|a| Tensor::scalar(a.data().iter().copied().sum()), Op::Sum(self.id))
    }

    pub fn dot(self, rhs: Self) -> Self {
        self.binary(
            rhs,
            |a, b| {
                assert_eq!(a.len(), b.len(), "dot length");
                Tensor::scalar(super::tensor::dot_slices(a.data(), b.data()))
            },
            Op::Dot(self.id, rhs.id),
        )
    }

    /// Single element at flat index `i`, as a scalar.
    pub fn index(self, i: usize) -> Self {
        self.unary(|a| Tensor::scalar(a.data()[i]), Op::Gather(self.id, vec![i]))
    }

    /// Elements at the given flat indices, as a vector.
    pub fn gather(self, idx: &[usize]) -> Self {
        let idx = idx.to_vec();
        let out = {
            let v = self.value();
            Tensor::vector(idx.iter().map(|&i| v.data()[i]).collect())
        };
        self.tape.push(out, Op::Gather(self.id, idx))
    }

    /// `log Σ exp(v_i)` over all elements.
    pub fn logsumexp(self) -> Self {
        self.unary(|a| Tensor::scalar(logsumexp(a.data())), Op::LogSumExp(self.id))
    }

    /// `log(1 + Σ w_i exp(self_i))` with constant nonnegative weights.
    pub fn log1p_sum_exp(self, weights: Vec<S>) -> Self {
        let v = self.value();
        assert_eq!(v.len(), weights.len(), "one weight per exponent");
        assert!(weights.iter().all(|&w| w >= S::zero()), "weights must be nonnegative");
        let logs: Vec<S> = v
            .data()
            .iter()
            .zip(&weights)
            .filter(|(_, &w)| w > S::zero())
            .map(|(&t, &w)| w.ln() + t)
            .collect();
        let out = Tensor::scalar(log1p_sum_exp_of_logs(&logs));
        self.tape.push(out, Op::Log1pSumExp { exps: self.id, weights })
    }
}

impl<'t, S: Scalar> Add for Var<'t, S> {
    type Output = Var<'t, S>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a.zip_map(b, |x, y| x + y).expect("add shape"), Op::Add(self.id, rhs.id))
    }
}

impl<'t, S: Scalar> Sub for Var<'t, S> {
    type Output = Var<'t, S>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, |a, b| a.zip_map(b, |x, y| x - y).expect("sub shape"), Op::Sub(self.id, rhs.id))
    }
}

impl<'t, S: Scalar> Neg for Var<'t, S> {
    type Output = Var<'t, S>;
    fn neg(self) -> Self {
        self.unary(|a| a.map(|x| -x), Op::Neg(self.id))
    }
}

impl<'t, S: Scalar> Mul<S> for Var<'t, S> {
    type Output = Var<'t, S>;
    fn mul(self, k: S) -> Self {
        self.scale(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Tensor<f64> {
        Tensor::vector(x.to_vec())
    }

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(v(&[3.0]));
        let y = x.mul(x).sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(y.item(), 9.0);
        assert_eq!(g.get(x).data(), &[6.0]);
    }

    #[test]
    fn relu_gradient_conventions() {
        let tape = Tape::new();
        let x = tape.leaf(v(&[-1.0, 0.0, 2.0]));
        let y = x.relu().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 0.0, 1.0]);

        let tape = Tape::new();
        let x = tape.leaf(v(&[0.0, 0.0]));
        let y = x.l1();
        let g = tape.backward(y).unwrap();
        assert_eq!(y.item(), 0.0);
        assert_eq!(g.get(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(v(&[1.0, 2.0]));
        let b = tape.leaf(v(&[3.0]));
        let g = tape.backward(a.sum()).unwrap();
        assert_eq!(g.get(b).data(), &[0.0]);
    }

    #[test]
    fn nan_in_reverse_sweep_is_an_error() {
        let tape = Tape::new();
        let x = tape.leaf(v(&[1.0]));
        let y = x.scale(f64::NAN).sum();
        assert!(matches!(tape.backward(y), Err(Error::NonFinite(_))));
    }

    #[test]
    fn neuron_state_tie_breaks() {
        assert_eq!(NeuronState::classify(0.0, 0.0), NeuronState::Inactive);
        assert_eq!(NeuronState::classify(0.0, 1.0), NeuronState::Active);
        assert_eq!(NeuronState::classify(2.0, 2.0), NeuronState::Active);
        assert_eq!(NeuronState::classify(-2.0, -2.0), NeuronState::Inactive);
        assert_eq!(NeuronState::classify(-1.0, 1.0), NeuronState::Unstable);
    }

    #[test]
    fn kink_signature_tracks_sides() {
        let tape = Tape::with_kink_tracking();
        let x = tape.leaf(v(&[-1.0, 2.0]));
        let _ = x.relu();
        let _ = x.l1();
        assert_eq!(tape.kink_signature().unwrap(), vec![0, 1, -1, 1]);
        assert!(Tape::<f64>::new().kink_signature().is_none());
    }
}
