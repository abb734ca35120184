//! Global OLS and geographically weighted regression.

mod gwr;
mod ols;

pub use gwr::{
    gaussian_weights, golden_search_bandwidth, gwr_fit, BandwidthSearch, GwrFit, GwrProblem, Kernel,
};
pub use ols::{ols_fit, OlsFit};

use crate::error::{Error, Result};
use crate::scalar::{centered_ss, mean, Scalar};

pub const INTERCEPT: &str = "intercept";

/// `(ε_i - ε̄) / sd(ε)` with the n−1 denominator.
pub fn standardized_residuals<T: Scalar>(residuals: &[T]) -> Result<Vec<T>> {
    let n = residuals.len();
    if n < 2 {
        return Err(Error::Degenerate("need at least 2 residuals".into()));
    }
    let m = mean(residuals);
    let var = centered_ss(residuals) / T::of_usize(n - 1);
    let sd = var.sqrt();
    if !(sd > T::epsilon() * (T::one() + m.abs())) {
        return Err(Error::Degenerate("residuals have zero variance".into()));
    }
    Ok(residuals.iter().map(|&e| (e - m) / sd).collect())
}

pub(crate) fn r_squared<T: Scalar>(rss: T, y: &[T]) -> T {
    let tss = centered_ss(y);
    if tss > T::zero() {
        T::one() - rss / tss
    } else {
        T::zero()
    }
}
