//! ReLU classifiers, convolution lowering and the model file format.

mod conv;
pub mod file;
mod network;

pub use conv::{lower_conv, ConvSpec, DEFAULT_CONV_BUDGET};
pub use file::{load, save, ModelMeta};
pub use network::{argmax, init_params, AffineLayer, Forward, NetVars, Network};
