//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating point type the models and diagnostics are generic over (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal or intermediate.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn of_usize(x: usize) -> Self {
        Self::from_usize(x).expect("usize is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// `c = a b + beta c` with `a` (m x k) and `b` (k x n) given by
    /// `[row, column]` strides and `c` dense row-major (m x n).
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: [usize; 2],
        b: &[Self],
        b_strides: [usize; 2],
        beta: Self,
        c: &mut [Self],
    );
}

fn check_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (usize, [usize; 2]),
    b: (usize, [usize; 2]),
    c: usize,
) {
    let fits = |len: usize, rows: usize, cols: usize, [rs, cs]: [usize; 2]| {
        rows == 0 || cols == 0 || (rows - 1) * rs + (cols - 1) * cs < len
    };
    assert!(
        fits(a.0, m, k, a.1) && fits(b.0, k, n, b.1) && c == m * n,
        "gemm operand shapes"
    );
}

macro_rules! scalar_impl {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: [usize; 2],
                b: &[Self],
                b_strides: [usize; 2],
                beta: Self,
                c: &mut [Self],
            ) {
                check_gemm(m, k, n, (a.len(), a_strides), (b.len(), b_strides), c.len());
                // SAFETY: every index the kernel touches was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides[0] as isize,
                        a_strides[1] as isize,
                        b.as_ptr(),
                        b_strides[0] as isize,
                        b_strides[1] as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    )
                }
            }
        }
    };
}

scalar_impl!(f32, matrixmultiply::sgemm);
scalar_impl!(f64, matrixmultiply::dgemm);

pub(crate) fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    xs.iter().copied().sum::<T>() / T::of_usize(xs.len())
}

/// Sum of squared deviations from the mean.
pub(crate) fn centered_ss<T: Scalar>(xs: &[T]) -> T {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum()
}
