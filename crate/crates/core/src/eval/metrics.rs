use crate::scalar::{centered_ss, Scalar};

/// `1 - SSE/TSS` with TSS about the mean of `y`. Zero when `y` is constant.
pub fn r2_score<T: Scalar>(y: &[T], pred: &[T]) -> T {
    let sse: T = y.iter().zip(pred).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let tss = centered_ss(y);
    if tss > T::zero() {
        T::one() - sse / tss
    } else {
        T::zero()
    }
}

pub fn rmse<T: Scalar>(y: &[T], pred: &[T]) -> T {
    let sse: T = y.iter().zip(pred).map(|(&a, &b)| (a - b) * (a - b)).sum();
    (sse / T::of_usize(y.len().max(1))).sqrt()
}
