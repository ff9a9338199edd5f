use super::AffineLayer;
use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

/// Default cap on the number of entries in a lowered convolution matrix.
pub const DEFAULT_CONV_BUDGET: usize = 64 * 1024 * 1024;

/// A 2-D convolution over channel-major (`C × H × W`) flattened inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec<S> {
    /// Kernel weights, `out_channels × in_channels × kh × kw` row-major.
    pub kernel: Vec<S>,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_size: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    /// Spatial shape `(H, W)` of each input channel.
    pub input_size: (usize, usize),
    /// Per-output-channel bias; zeros when empty.
    pub bias: Vec<S>,
}

impl<S: Scalar> ConvSpec<S> {
    pub fn output_size(&self) -> Result<(usize, usize)> {
        let (h, w) = self.input_size;
        let (kh, kw) = self.kernel_size;
        if self.stride == 0 || kh == 0 || kw == 0 {
            return Err(Error::invalid("convolution stride and kernel size must be positive"));
        }
        let (ph, pw) = (h + 2 * self.padding, w + 2 * self.padding);
        if kh > ph || kw > pw {
            return Err(Error::invalid(format!(
                "kernel {kh}x{kw} larger than padded input {ph}x{pw}"
            )));
        }
        Ok(((ph - kh) / self.stride + 1, (pw - kw) / self.stride + 1))
    }

    fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel_size;
        let expected = self.out_channels * self.in_channels * kh * kw;
        if self.kernel.len() != expected {
            return Err(Error::shape(format!(
                "kernel has {} weights, expected {expected}",
                self.kernel.len()
            )));
        }
        if !self.bias.is_empty() && self.bias.len() != self.out_channels {
            return Err(Error::shape("one bias per output channel"));
        }
        self.output_size().map(|_| ())
    }

    fn weight(&self, oc: usize, ic: usize, i: usize, j: usize) -> S {
        let (kh, kw) = self.kernel_size;
        self.kernel[((oc * self.in_channels + ic) * kh + i) * kw + j]
    }
}

/// Expands a convolution into the equivalent dense affine layer.
pub fn lower_conv<S: Scalar>(spec: &ConvSpec<S>, budget: usize) -> Result<AffineLayer<S>> {
    spec.validate()?;
    let (h, w) = spec.input_size;
    let (oh, ow) = spec.output_size()?;
    let (kh, kw) = spec.kernel_size;
    let in_dim = spec.in_channels * h * w;
    let out_dim = spec.out_channels * oh * ow;
    let needed = in_dim * out_dim;
    if needed > budget {
        return Err(Error::MemoryBudget { needed, budget });
    }

    let mut mat = vec![S::zero(); needed];
    let pad = spec.padding as isize;
    for oc in 0..spec.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (oc * oh + oy) * ow + ox;
                for ic in 0..spec.in_channels {
                    for i in 0..kh {
                        let y = (oy * spec.stride + i) as isize - pad;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        for j in 0..kw {
                            let x = (ox * spec.stride + j) as isize - pad;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            let col = (ic * h + y as usize) * w + x as usize;
                            mat[row * in_dim + col] += spec.weight(oc, ic, i, j);
                        }
                    }
                }
            }
        }
    }
    let bias = (0..out_dim)
        .map(|r| spec.bias.get(r / (oh * ow)).copied().unwrap_or(S::zero()))
        .collect();
    AffineLayer::new(Tensor::matrix(out_dim, in_dim, mat)?, Tensor::vector(bias))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kernel: Vec<f64>, oc: usize, ic: usize, k: usize, stride: usize, padding: usize, hw: usize) -> ConvSpec<f64> {
        ConvSpec {
            kernel,
            out_channels: oc,
            in_channels: ic,
            kernel_size: (k, k),
            stride,
            padding,
            input_size: (hw, hw),
            bias: vec![],
        }
    }

    #[test]
    fn one_by_one_kernel_scales_channels() {
        // two input channels, one output channel: out = 2*c0 - c1
        let s = spec(vec![2.0, -1.0], 1, 2, 1, 1, 0, 2);
        let layer = lower_conv(&s, DEFAULT_CONV_BUDGET).unwrap();
        let x = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0]);
        let y = layer.apply(&x).unwrap();
        assert_eq!(y.data(), &[-8.0, -16.0, -24.0, -32.0]);
    }

    #[test]
    fn zero_kernel_gives_zero_matrix() {
        let s = spec(vec![0.0; 9], 1, 1, 3, 1, 1, 4);
        let layer = lower_conv(&s, DEFAULT_CONV_BUDGET).unwrap();
        assert!(layer.weight.data().iter().all(|&v| v == 0.0));
        assert_eq!(layer.weight.shape(), &[16, 16]);
    }

    #[test]
    fn budget_and_shape_errors() {
        let s = spec(vec![1.0; 9], 1, 1, 3, 1, 0, 4);
        assert!(matches!(lower_conv(&s, 10), Err(Error::MemoryBudget { needed: 64, budget: 10 })));
        let bad = spec(vec![1.0; 9], 1, 1, 3, 1, 0, 2);
        assert!(lower_conv(&bad, DEFAULT_CONV_BUDGET).is_err());
        let zero_stride = spec(vec![1.0; 9], 1, 1, 3, 0, 0, 4);
        assert!(lower_conv(&zero_stride, DEFAULT_CONV_BUDGET).is_err());
    }
}
