use serde::Serialize;

use super::{r_squared, INTERCEPT};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Qr};
use crate::scalar::Scalar;
use crate::stats::student_t_two_sided;

/// Global least-squares fit with intercept. Coefficient vectors are ordered
/// `[intercept, columns...]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OlsFit<T> {
    pub names: Vec<String>,
    pub coefficients: Vec<T>,
    pub std_errors: Vec<T>,
    pub t_values: Vec<T>,
    pub p_values: Vec<f64>,
    pub fitted: Vec<T>,
    pub residuals: Vec<T>,
    pub rss: T,
    pub r2: T,
    pub adj_r2: T,
    pub aic: T,
    pub n: usize,
    /// Number of columns, excluding the intercept.
    pub p: usize,
}

impl<T: Scalar> OlsFit<T> {
    pub fn rmse(&self) -> T {
        (self.rss / T::of_usize(self.n)).sqrt()
    }

    pub fn coefficient(&self, name: &str) -> Option<T> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.coefficients[i])
    }

    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        if x.ncols() != self.p {
            return Err(Error::Parameter(format!(
                "expected {} columns, got {}",
                self.p,
                x.ncols()
            )));
        }
        Ok(x.with_intercept().matvec(&self.coefficients))
    }
}

/// Fits `y = θ₀ + Xθ + ε` via pivoted QR.
///
/// `names` labels the columns of `x`; dependent columns are reported by name.
pub fn ols_fit<T: Scalar>(x: &Matrix<T>, y: &[T], names: &[String]) -> Result<OlsFit<T>> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::Parameter(format!(
            "target has {} rows, design has {n}",
            y.len()
        )));
    }
    if names.len() != p {
        return Err(Error::Parameter(format!(
            "{} names for {p} columns",
            names.len()
        )));
    }
    if n <= p + 1 {
        return Err(Error::Parameter(format!(
            "OLS needs n > p + 1 (n = {n}, p = {p})"
        )));
    }
    let mut all_names = vec![INTERCEPT.to_string()];
    all_names.extend(names.iter().cloned());

    let design = x.with_intercept();
    let qr = Qr::new(&design);
    if !qr.is_full_rank() {
        return Err(Error::RankDeficient {
            columns: qr
                .dependent_columns()
                .into_iter()
                .map(|j| all_names[j].clone())
                .collect(),
        });
    }
    let coefficients = qr.solve_least_squares(y);
    let fitted = design.matvec(&coefficients);
    let residuals: Vec<T> = y.iter().zip(&fitted).map(|(&a, &b)| a - b).collect();
    let rss: T = residuals.iter().map(|&e| e * e).sum();

    let df = n - p - 1;
    let sigma2 = rss / T::of_usize(df);
    let std_errors: Vec<T> = qr
        .normal_inverse_diagonal()
        .into_iter()
        .map(|d| (sigma2 * d).sqrt())
        .collect();
    let t_values: Vec<T> = coefficients
        .iter()
        .zip(&std_errors)
        .map(|(&b, &se)| {
            if se > T::zero() {
                b / se
            } else if b == T::zero() {
                T::zero()
            } else {
                T::infinity() * b.signum()
            }
        })
        .collect();
    let p_values = t_values
        .iter()
        .map(|t| student_t_two_sided(t.as_f64(), df as f64))
        .collect();

    let r2 = r_squared(rss, y);
    let adj_r2 = T::one() - (T::one() - r2) * T::of_usize(n - 1) / T::of_usize(df);
    let nf = T::of_usize(n);
    let two_pi = T::of(std::f64::consts::TAU);
    let aic = nf * (two_pi * rss / nf).ln() + nf + T::of_usize(2 * (p + 2));

    Ok(OlsFit {
        names: all_names,
        coefficients,
        std_errors,
        t_values,
        p_values,
        fitted,
        residuals,
        rss,
        r2,
        adj_r2,
        aic,
        n,
        p,
    })
}
