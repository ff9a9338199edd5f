//! Dense tensors, reverse-mode differentiation and seeded randomness.

mod diff;
mod rng;
mod scalar;
mod tape;
mod tensor;

pub use diff::{finite_diff, grad};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tape::{Gradients, NeuronState, Tape, Var};
pub use tensor::{l1norm, logsumexp, matvec, matvec_t, relu, sign0, stable_log1p_sum_exp, Tensor};
