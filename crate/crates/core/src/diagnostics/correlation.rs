use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats::student_t_two_sided;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationResult<T> {
    pub method: CorrelationMethod,
    pub coefficient: T,
    /// Two-sided, from t = r·sqrt((n-2)/(1-r²)) on n-2 degrees of freedom.
    pub p_value: f64,
    pub n: usize,
}

fn check<T: Scalar>(x: &[T], y: &[T]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Parameter(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::Parameter("correlation needs n >= 3".into()));
    }
    Ok(())
}

fn coefficient<T: Scalar>(x: &[T], y: &[T]) -> Result<T> {
    let n = T::of_usize(x.len());
    let mx = x.iter().copied().sum::<T>() / n;
    let my = y.iter().copied().sum::<T>() / n;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if !(sxx > T::zero() && syy > T::zero()) {
        return Err(Error::Degenerate(
            "correlation input has zero variance".into(),
        ));
    }
    let r = sxy / (sxx * syy).sqrt();
    Ok(r.max(-T::one()).min(T::one()))
}

fn p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    student_t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
}

pub fn pearson<T: Scalar>(x: &[T], y: &[T]) -> Result<CorrelationResult<T>> {
    check(x, y)?;
    let r = coefficient(x, y)?;
    Ok(CorrelationResult {
        method: CorrelationMethod::Pearson,
        coefficient: r,
        p_value: p_value(r.as_f64(), x.len()),
        n: x.len(),
    })
}

/// 1-based ranks; tied values share the average of their positions.
pub fn ranks<T: Scalar>(x: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut out = vec![T::zero(); x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && x[idx[end]] == x[idx[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = T::of((start + 1 + end) as f64 / 2.0);
        for &k in &idx[start..end] {
            out[k] = avg;
        }
        start = end;
    }
    out
}

pub fn spearman<T: Scalar>(x: &[T], y: &[T]) -> Result<CorrelationResult<T>> {
    check(x, y)?;
    let r = coefficient(&ranks(x), &ranks(y))?;
    Ok(CorrelationResult {
        method: CorrelationMethod::Spearman,
        coefficient: r,
        p_value: p_value(r.as_f64(), x.len()),
        n: x.len(),
    })
}
