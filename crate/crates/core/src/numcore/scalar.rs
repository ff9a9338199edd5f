use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type of tensors, tapes and networks.
///
/// Implemented for `f32` and `f64`. The dense matrix product is routed to the
/// matching `matrixmultiply` kernel.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    /// `c = a · b + beta · c` for an `m×k` by `k×n` product.
    ///
    /// `a` and `b` are read through explicit row/column strides so transposed
    /// operands never need to be materialized. `c` is dense row-major `m×n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
    );

    /// Converts an `f64` literal. Every finite `f64` is representable (possibly
    /// rounded) in both implementors.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal converts to scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

fn check_gemm_extent(len: usize, rows: usize, cols: usize, (rs, cs): (usize, usize), what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * rs + (cols - 1) * cs;
    assert!(last < len, "gemm operand {what} out of bounds ({last} >= {len})");
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
            ) {
                check_gemm_extent(a.len(), m, k, a_strides, "a");
                check_gemm_extent(b.len(), k, n, b_strides, "b");
                assert_eq!(c.len(), m * n, "gemm output has wrong length");
                if m == 0 || n == 0 {
                    return;
                }
                if k == 0 {
                    c.iter_mut().for_each(|v| *v *= beta);
                    return;
                }
                // SAFETY: extents of a and b were checked above against the
                // strides, c is exactly m*n dense row-major.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_with_transposed_operand() {
        // a = [[1,2],[3,4]] read transposed, b = I
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [1.0f64, 0.0, 0.0, 1.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, &a, (1, 2), &b, (2, 1), 0.0, &mut c);
        assert_eq!(c, [1.0, 3.0, 2.0, 4.0]);
    }

    #[test]
    fn gemm_accumulates_with_beta() {
        let a = [2.0f32];
        let b = [3.0f32];
        let mut c = [1.0f32];
        f32::gemm(1, 1, 1, &a, (1, 1), &b, (1, 1), 1.0, &mut c);
        assert_eq!(c, [7.0]);
    }
}
