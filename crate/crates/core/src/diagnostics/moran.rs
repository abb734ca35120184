use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geo::WeightsMatrix;
use crate::rng;
use crate::scalar::Scalar;
use crate::stats::normal_two_sided;

pub const DEFAULT_PERMUTATIONS: usize = 999;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoranResult<T> {
    pub i: T,
    /// E[I] = -1/(n-1).
    pub expected: T,
    /// Variance of I under the normality assumption.
    pub variance_normal: T,
    pub z: T,
    pub p_normal: f64,
    /// Two-sided permutation p-value on |I - E[I]|.
    pub p_perm: f64,
    pub n_perm: usize,
    pub seed: u64,
    pub n: usize,
    pub scheme: String,
}

/// Moran's I of `values` for weights `w` (no inference).
pub fn moran_statistic<T: Scalar>(values: &[T], w: &WeightsMatrix) -> Result<T> {
    let (z, ss) = centered(values, w)?;
    let w0 = T::of(w.total());
    Ok(T::of_usize(values.len()) / w0 * cross_product(&z, w) / ss)
}

fn centered<T: Scalar>(values: &[T], w: &WeightsMatrix) -> Result<(Vec<T>, T)> {
    let n = values.len();
    if n < 3 {
        return Err(Error::Parameter(format!("Moran's I needs n >= 3, got {n}")));
    }
    if w.n != n {
        return Err(Error::Parameter(format!(
            "weights cover {} units but {n} values given",
            w.n
        )));
    }
    if w.total() <= 0.0 {
        return Err(Error::Degenerate("all weight rows are empty".into()));
    }
    let mean = values.iter().copied().sum::<T>() / T::of_usize(n);
    let z: Vec<T> = values.iter().map(|&x| x - mean).collect();
    let ss: T = z.iter().map(|&d| d * d).sum();
    if !(ss > T::zero()) {
        return Err(Error::Degenerate("values have zero variance".into()));
    }
    Ok((z, ss))
}

fn cross_product<T: Scalar>(z: &[T], w: &WeightsMatrix) -> T {
    let mut s = T::zero();
    for (i, row) in w.rows.iter().enumerate() {
        let mut lag = T::zero();
        for &(j, wij) in row {
            lag += T::of(wij) * z[j];
        }
        s += z[i] * lag;
    }
    s
}

/// Global Moran's I with a seeded permutation test and the normal-approximation
/// z-score. Replicate `r` shuffles with a generator derived from `(seed, r)`.
pub fn morans_i<T: Scalar>(
    values: &[T],
    w: &WeightsMatrix,
    n_perm: usize,
    seed: u64,
) -> Result<MoranResult<T>> {
    let (z, ss) = centered(values, w)?;
    let n = values.len();
    let nf = n as f64;
    let w0 = w.total();
    let scale = T::of(nf / w0);
    let i_obs = scale * cross_product(&z, w) / ss;
    let expected = T::of(-1.0 / (nf - 1.0));

    // Variance under normality.
    let mut s1 = 0.0;
    let mut col_sums = vec![0.0; n];
    let mut dense = std::collections::BTreeMap::new();
    for (i, row) in w.rows.iter().enumerate() {
        for &(j, wij) in row {
            col_sums[j] += wij;
            *dense.entry((i, j)).or_insert(0.0) += wij;
        }
    }
    for (&(i, j), &wij) in &dense {
        let wji = dense.get(&(j, i)).copied().unwrap_or(0.0);
        s1 += (wij + wji).powi(2);
    }
    s1 /= 2.0;
    let s2: f64 = (0..n)
        .map(|i| {
            let r: f64 = w.rows[i].iter().map(|&(_, x)| x).sum();
            (r + col_sums[i]).powi(2)
        })
        .sum();
    let e = expected.as_f64();
    let var = (nf * nf * s1 - nf * s2 + 3.0 * w0 * w0) / ((nf * nf - 1.0) * w0 * w0) - e * e;
    let zscore = (i_obs.as_f64() - e) / var.sqrt();

    let obs_dev = (i_obs - expected).abs();
    let tol = T::of(1e-12) * obs_dev.max(T::one());
    let extreme: usize = (0..n_perm as u64)
        .into_par_iter()
        .map(|r| {
            let mut perm = z.clone();
            perm.shuffle(&mut rng::stream(seed, r));
            let ip = scale * cross_product(&perm, w) / ss;
            usize::from((ip - expected).abs() >= obs_dev - tol)
        })
        .sum();

    Ok(MoranResult {
        i: i_obs,
        expected,
        variance_normal: T::of(var),
        z: T::of(zscore),
        p_normal: normal_two_sided(zscore),
        p_perm: (extreme + 1) as f64 / (n_perm + 1) as f64,
        n_perm,
        seed,
        n,
        scheme: w.scheme.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::WeightsScheme;

    /// Rook neighbours on a rows×cols lattice, row-major.
    fn rook(rows: usize, cols: usize) -> WeightsMatrix {
        let nb = (0..rows * cols)
            .map(|k| {
                let (r, c) = (k / cols, k % cols);
                let mut v = Vec::new();
                if r > 0 {
                    v.push(k - cols);
                }
                if r + 1 < rows {
                    v.push(k + cols);
                }
                if c > 0 {
                    v.push(k - 1);
                }
                if c + 1 < cols {
                    v.push(k + 1);
                }
                v
            })
            .collect();
        WeightsMatrix::from_neighbors(WeightsScheme::Rook, nb)
    }

    #[test]
    fn checkerboard_is_minus_one() {
        // Eight directed pairs, each weight 1/2 and product -1: sum = -4, W0 = 4, Σz² = 4.
        let w = rook(2, 2);
        let r = morans_i(&[1.0, -1.0, -1.0, 1.0], &w, 99, 1).unwrap();
        assert_eq!(r.i, -1.0);
        assert_eq!(r.expected, -1.0 / 3.0);
    }

    #[test]
    fn matches_direct_double_sum() {
        let w = rook(4, 4);
        let x: Vec<f64> = (0..16).map(|k| (k / 4) as f64).collect();
        let n = 16;
        let mut dense = vec![0.0; n * n];
        for (i, row) in w.rows.iter().enumerate() {
            for &(j, v) in row {
                dense[i * n + j] = v;
            }
        }
        let m = x.iter().sum::<f64>() / n as f64;
        let mut num = 0.0;
        let mut w0 = 0.0;
        for i in 0..n {
            for j in 0..n {
                num += dense[i * n + j] * (x[i] - m) * (x[j] - m);
                w0 += dense[i * n + j];
            }
        }
        let den: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
        let expect = n as f64 / w0 * num / den;
        let got = moran_statistic(&x, &w).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn affine_invariant_and_reproducible() {
        let w = rook(5, 5);
        let x: Vec<f64> = (0..25)
            .map(|k| ((k * 7) % 11) as f64 + 0.1 * k as f64)
            .collect();
        let y: Vec<f64> = x.iter().map(|v| -3.0 * v + 12.0).collect();
        let a = morans_i(&x, &w, 199, 42).unwrap();
        let b = morans_i(&y, &w, 199, 42).unwrap();
        assert!((a.i - b.i).abs() < 1e-12);
        let again = morans_i(&x, &w, 199, 42).unwrap();
        assert_eq!(a.p_perm, again.p_perm);
        assert!(a.p_perm > 0.0 && a.p_perm <= 1.0);
        assert!(a.i.abs() <= 1.05);
    }

    #[test]
    fn degenerate_inputs() {
        let w = rook(2, 2);
        assert!(matches!(
            morans_i(&[2.0; 4], &w, 9, 0),
            Err(Error::Degenerate(_))
        ));
        let empty = WeightsMatrix::from_neighbors(WeightsScheme::Queen, vec![vec![]; 4]);
        assert!(matches!(
            morans_i(&[1.0, 2.0, 3.0, 4.0], &empty, 9, 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn strong_gradient_is_significant() {
        let w = rook(8, 8);
        let x: Vec<f64> = (0..64).map(|k| (k / 8) as f64).collect();
        let r = morans_i(&x, &w, 999, 7).unwrap();
        assert!(r.i > 0.8);
        assert!(r.p_perm <= 0.002);
        assert!(r.z > 5.0);
    }

    #[test]
    fn works_in_f32() {
        let w = rook(2, 2);
        let r = morans_i(&[1.0f32, -1.0, -1.0, 1.0], &w, 9, 1).unwrap();
        assert!((r.i + 1.0).abs() < 1e-6);
    }
}
