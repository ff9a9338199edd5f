use super::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Value and reverse-mode gradient of `f` at `params`.
///
/// `f` receives a fresh tape and one leaf per parameter, and must return a
/// single-element var.
pub fn grad<S, F>(params: &[Tensor<S>], f: F) -> Result<(S, Vec<Tensor<S>>)>
where
    S: Scalar,
    F: for<'t> Fn(&'t Tape<S>, &[Var<'t, S>]) -> Result<Var<'t, S>>,
{
    let tape = Tape::new();
    let leaves: Vec<_> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&tape, &leaves)?;
    let value = out.item();
    if !value.is_finite() {
        return Err(Error::NonFinite("gradient root"));
    }
    let grads = tape.backward(out)?;
    Ok((value, leaves.iter().map(|&l| grads.get(l)).collect()))
}

/// Central differences `(f(p + h) − f(p − h)) / 2h`, one coordinate at a time.
pub fn finite_diff<S, F>(params: &[Tensor<S>], h: S, f: F) -> Result<Vec<Tensor<S>>>
where
    S: Scalar,
    F: Fn(&[Tensor<S>]) -> Result<S>,
{
    if h <= S::zero() {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut work: Vec<Tensor<S>> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let base = params[p].to_vec();
        let mut g = vec![S::zero(); base.len()];
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            work[p] = Tensor::from_parts(params[p].shape().to_vec(), plus);
            let fp = f(&work)?;
            let mut minus = base.clone();
            minus[i] -= h;
            work[p] = Tensor::from_parts(params[p].shape().to_vec(), minus);
            let fm = f(&work)?;
            g[i] = (fp - fm) / (h + h);
        }
        work[p] = params[p].clone();
        out.push(Tensor::from_parts(params[p].shape().to_vec(), g));
    }
    Ok(out)
}
