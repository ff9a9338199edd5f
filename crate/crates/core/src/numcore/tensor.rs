use std::sync::Arc;

use super::Scalar;
use crate::error::{Error, Result};

/// Dense row-major tensor of rank 0, 1 or 2.
///
/// Storage is reference counted, so clones are cheap and tensors can be shared
/// across threads. Tensors are never mutated in place once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Arc<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::shape(format!("rank {} tensors are not supported", shape.len())));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn scalar(v: S) -> Self {
        Self::from_parts(vec![], vec![v])
    }

    pub fn vector(data: Vec<S>) -> Self {
        Self::from_parts(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flatten().copied().collect();
        Self::from_parts(vec![rows.len(), cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_parts(shape.to_vec(), vec![S::zero(); shape.iter().product()])
    }

    pub fn filled(shape: &[usize], v: S) -> Self {
        Self::from_parts(shape.to_vec(), vec![v; shape.iter().product()])
    }

    pub fn eye(n: usize) -> Self {
        let mut data = vec![S::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = S::one();
        }
        Self::from_parts(vec![n, n], data)
    }

    pub fn basis(n: usize, i: usize) -> Self {
        let mut data = vec![S::zero(); n];
        data[i] = S::one();
        Self::vector(data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.data.as_ref().clone()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            _ => 1,
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn at(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data.iter().zip(other.data.iter()).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.len() || shape.len() > 2 {
            return Err(Error::shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        Ok(Self {
            shape,
            data: Arc::clone(&self.data),
        })
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![S::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_parts(vec![c, r], out)
    }

    /// Matrix product `self · rhs` of `m×k` and `k×n` matrices.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (m, k) = self.matrix_dims("matmul lhs")?;
        let (k2, n) = rhs.matrix_dims("matmul rhs")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, &self.data, (k, 1), &rhs.data, (n, 1), S::zero(), &mut out);
        Ok(Self::from_parts(vec![m, n], out))
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn matmul_tn(&self, rhs: &Self) -> Result<Self> {
        let (k, m) = self.matrix_dims("matmul_tn lhs")?;
        let (k2, n) = rhs.matrix_dims("matmul_tn rhs")?;
        if k != k2 {
            return Err(Error::shape(format!("matmul_tn ({k}x{m})ᵀ by {k2}x{n}")));
        }
        let mut out = vec![S::zero(); m * n];
        S::gemm(m, k, n, &self.data, (1, m), &rhs.data, (n, 1), S::zero(), &mut out);
        Ok(Self::from_parts(vec![m, n], out))
    }

    fn matrix_dims(&self, what: &str) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::shape(format!("{what} must be a matrix, shape {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// `W v` for an `r×c` matrix and a length-`c` vector.
pub fn matvec<S: Scalar>(w: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
    let (r, c) = w.matrix_dims("matvec weight")?;
    if v.len() != c {
        return Err(Error::shape(format!("matvec {r}x{c} by vector of length {}", v.len())));
    }
    let out = (0..r).map(|i| dot_slices(w.row(i), v.data())).collect();
    Ok(Tensor::vector(out))
}

/// `Wᵀ v` for an `r×c` matrix and a length-`r` vector.
pub fn matvec_t<S: Scalar>(w: &Tensor<S>, v: &Tensor<S>) -> Result<Tensor<S>> {
    let (r, c) = w.matrix_dims("matvec_t weight")?;
    if v.len() != r {
        return Err(Error::shape(format!("matvec_t {r}x{c} by vector of length {}", v.len())));
    }
    let mut out = vec![S::zero(); c];
    for (i, &vi) in v.data().iter().enumerate() {
        if vi == S::zero() {
            continue;
        }
        for (o, &wij) in out.iter_mut().zip(w.row(i)) {
            *o += wij * vi;
        }
    }
    Ok(Tensor::vector(out))
}

/// Elementwise `max(v, 0)`.
pub fn relu<S: Scalar>(v: &Tensor<S>) -> Tensor<S> {
    v.map(|x| if x > S::zero() { x } else { S::zero() })
}

/// `Σ |v_i|`.
pub fn l1norm<S: Scalar>(v: &Tensor<S>) -> S {
    v.data().iter().map(|x| x.abs()).sum()
}

/// Sign with `sign(0) = 0`, the subgradient convention used for `|·|`.
#[inline]
pub fn sign0<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

#[inline]
pub(crate) fn dot_slices<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `log(1 + Σ w_i · exp(t_i))` evaluated without overflow.
///
/// Zero-weight terms are skipped entirely, so they may carry any exponent.
pub fn stable_log1p_sum_exp<S: Scalar>(terms: &[(S, S)]) -> Result<S> {
    let mut shifted = Vec::with_capacity(terms.len());
    for &(w, t) in terms {
        if w < S::zero() || w.is_nan() {
            return Err(Error::invalid(format!("negative weight {w} in log1p-sum-exp")));
        }
        if w > S::zero() {
            shifted.push(w.ln() + t);
        }
    }
    let out = log1p_sum_exp_of_logs(&shifted);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(Error::NonFinite("log1p-sum-exp"))
    }
}

/// `log(1 + Σ exp(a_i))` with the implicit `exp(0)` term included in the shift.
pub(crate) fn log1p_sum_exp_of_logs<S: Scalar>(a: &[S]) -> S {
    let (mut best, mut best_val) = (None, S::zero());
    for (i, &v) in a.iter().enumerate() {
        if v > best_val {
            best = Some(i);
            best_val = v;
        }
    }
    match best {
        None => a.iter().map(|&v| v.exp()).sum::<S>().ln_1p(),
        Some(b) => {
            let rest = a
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != b)
                .map(|(_, &v)| (v - best_val).exp())
                .sum::<S>();
            best_val + ((-best_val).exp() + rest).ln_1p()
        }
    }
}

/// `log Σ exp(v_i)`.
pub fn logsumexp<S: Scalar>(v: &[S]) -> S {
    let m = v.iter().copied().fold(S::neg_infinity(), S::max);
    if m == S::neg_infinity() {
        return m;
    }
    m + v.iter().map(|&x| (x - m).exp()).sum::<S>().ln()
}
