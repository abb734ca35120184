//! Reference distributions used for p-values. These run in `f64` whatever the
//! model scalar is.

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

/// Two-sided p-value of a Student t statistic with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_quantiles() {
        // t_{0.975, 10} = 2.228138851986274
        assert!((student_t_two_sided(2.228138851986274, 10.0) - 0.05).abs() < 1e-12);
        assert!((student_t_two_sided(0.0, 5.0) - 1.0).abs() < 1e-15);
        let p = normal_two_sided(1.959963984540054);
        assert!((p - 0.05).abs() < 1e-9, "{p}");
    }
}
