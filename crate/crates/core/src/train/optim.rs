use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Optimizer state with one moment buffer pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct OptimizerState<S> {
    pub kind: OptimizerKind,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(kind: OptimizerKind, params: &[Tensor<S>]) -> Self {
        let zeros = || params.iter().map(|p| vec![S::zero(); p.len()]).collect();
        let adam = kind == OptimizerKind::Adam;
        Self {
            kind,
            beta1: S::lit(0.9),
            beta2: S::lit(0.999),
            eps: S::lit(1e-8),
            step: 0,
            m: if adam { zeros() } else { Vec::new() },
            v: if adam { zeros() } else { Vec::new() },
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [Tensor<S>], grads: &[Tensor<S>], lr: S) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape()) {
            return Err(Error::shape("gradients do not mirror parameters"));
        }
        if self.kind == OptimizerKind::Adam
            && (self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()))
        {
            return Err(Error::shape("optimizer state does not mirror parameters"));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    let data = p.data().iter().zip(g.data()).map(|(&p, &g)| p - lr * g).collect();
                    *p = Tensor::new(p.shape().to_vec(), data)?;
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = S::one() - b1.powi(t);
                let c2 = S::one() - b2.powi(t);
                for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k], &mut self.v[k]);
                    let mut data = p.to_vec();
                    for (i, &gi) in g.data().iter().enumerate() {
                        m[i] = b1 * m[i] + (S::one() - b1) * gi;
                        v[i] = b2 * v[i] + (S::one() - b2) * gi * gi;
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                    *p = Tensor::new(p.shape().to_vec(), data)?;
                }
            }
        }
        Ok(())
    }
}
