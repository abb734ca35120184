use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{r_squared, standardized_residuals, INTERCEPT};
use crate::error::{Error, Result};
use crate::geo::{distance_matrix, Point};
use crate::linalg::{dot, Matrix, Qr, RANK_TOL};
use crate::scalar::Scalar;

/// Spatial kernel for the local weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// Gaussian with per-unit scale set to the distance of the k-th nearest
    /// other unit.
    AdaptiveGaussian { k: usize },
    /// Gaussian with a fixed scale in metres.
    FixedGaussian { bandwidth_m: f64 },
    /// Every weight equal to 1 (the infinite-bandwidth limit).
    Uniform,
}

impl Kernel {
    fn neighbors(&self) -> usize {
        match self {
            Kernel::AdaptiveGaussian { k } => *k,
            _ => 0,
        }
    }
}

/// Kernel scale for an adaptive bandwidth, given the focal unit's distances to
/// all other units in ascending order.
fn adaptive_scale(sorted_others: &[f64], k: usize) -> Option<f64> {
    let b = sorted_others[k - 1];
    if b > 0.0 {
        Some(b)
    } else {
        // Coincident neighbours: use the nearest positive distance instead.
        sorted_others.iter().copied().find(|&d| d > 0.0)
    }
}

fn gaussian(d: f64, b: f64) -> f64 {
    let u = d / b;
    (-0.5 * u * u).exp()
}

/// Adaptive Gaussian weights of every unit relative to focal unit `i`.
pub fn gaussian_weights(i: usize, points: &[Point], k: usize) -> Result<Vec<f64>> {
    let n = points.len();
    if i >= n {
        return Err(Error::Parameter(format!("focal index {i} out of range")));
    }
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!(
            "bandwidth needs 1 <= k < n, got k = {k}, n = {n}"
        )));
    }
    let d: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(j, &q)| {
            if j == i {
                0.0
            } else {
                crate::geo::distance(points[i], q)
            }
        })
        .collect();
    let mut others: Vec<f64> = d
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &x)| x)
        .collect();
    others.sort_by(f64::total_cmp);
    let b =
        adaptive_scale(&others, k).ok_or_else(|| Error::Geometry("all points coincide".into()))?;
    Ok(d.iter().map(|&x| gaussian(x, b)).collect())
}

/// Result of one GWR calibration. Local coefficient rows are ordered like the
/// input rows, columns `[intercept, columns...]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GwrFit<T> {
    pub kernel: Kernel,
    pub names: Vec<String>,
    pub coefficients: Matrix<T>,
    pub local_pred: Vec<T>,
    pub residuals: Vec<T>,
    /// Diagonal of the hat matrix.
    pub influence: Vec<T>,
    pub rss: T,
    pub tr_s: T,
    pub tr_sts: T,
    /// 2tr(S) − tr(SᵀS).
    pub effective_params: T,
    pub r2: T,
    pub adj_r2: T,
    pub aicc: T,
    pub n: usize,
    pub p: usize,
}

impl<T: Scalar> GwrFit<T> {
    pub fn rmse(&self) -> T {
        (self.rss / T::of_usize(self.n)).sqrt()
    }

    pub fn standardized_residuals(&self) -> Result<Vec<T>> {
        standardized_residuals(&self.residuals)
    }

    pub fn local_coefficients(&self, name: &str) -> Option<Vec<T>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.coefficients.column(j))
    }
}

/// Design, target and pairwise distances, prepared once so that repeated
/// calibrations (bandwidth search) share the distance work.
#[derive(Debug, Clone)]
pub struct GwrProblem<T> {
    design: Matrix<T>,
    y: Vec<T>,
    names: Vec<String>,
    labels: Vec<String>,
    dist: Vec<f64>,
    sorted: Vec<Vec<f64>>,
    /// Per row: upper triangle of x xᵀ, then x y.
    moments: Vec<T>,
}

impl<T: Scalar> GwrProblem<T> {
    pub fn new(x: &Matrix<T>, y: &[T], points: &[Point], names: &[String]) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        if y.len() != n || points.len() != n {
            return Err(Error::Parameter(format!(
                "GWR inputs disagree: {n} design rows, {} targets, {} points",
                y.len(),
                points.len()
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
                "GWR needs n > p + 1 (n = {n}, p = {p})"
            )));
        }
        let dist = distance_matrix(points);
        let sorted = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut row: Vec<f64> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| dist[i * n + j])
                    .collect();
                row.sort_by(f64::total_cmp);
                row
            })
            .collect();
        let mut all_names = vec![INTERCEPT.to_string()];
        all_names.extend(names.iter().cloned());
        let design = x.with_intercept();
        let mut moments = Vec::with_capacity(n * moment_width(p + 1));
        for (row, &yi) in (0..n).map(|i| design.row(i)).zip(y) {
            for a in 0..row.len() {
                moments.extend(row[a..].iter().map(|&v| row[a] * v));
            }
            moments.extend(row.iter().map(|&v| v * yi));
        }
        Ok(Self {
            design,
            y: y.to_vec(),
            names: all_names,
            labels: (0..n).map(|i| format!("#{i}")).collect(),
            dist,
            sorted,
            moments,
        })
    }

    /// Names used for units in error messages (defaults to row indices).
    pub fn with_labels(mut self, labels: Vec<String>) -> Self {
        assert_eq!(labels.len(), self.n());
        self.labels = labels;
        self
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    /// Column count excluding the intercept.
    pub fn p(&self) -> usize {
        self.design.ncols() - 1
    }

    fn weights(&self, i: usize, kernel: Kernel) -> Result<Vec<T>> {
        let n = self.n();
        let row = &self.dist[i * n..(i + 1) * n];
        let w: Vec<f64> = match kernel {
            Kernel::Uniform => vec![1.0; n],
            Kernel::FixedGaussian { bandwidth_m } => {
                row.iter().map(|&d| gaussian(d, bandwidth_m)).collect()
            }
            Kernel::AdaptiveGaussian { k } => {
                let b = adaptive_scale(&self.sorted[i], k)
                    .ok_or_else(|| Error::Geometry("all points coincide".into()))?;
                row.iter().map(|&d| gaussian(d, b)).collect()
            }
        };
        Ok(w.into_iter().map(T::of).collect())
    }

    fn check_kernel(&self, kernel: Kernel) -> Result<()> {
        match kernel {
            Kernel::AdaptiveGaussian { k } if k == 0 || k >= self.n() => Err(Error::Parameter(
                format!("bandwidth needs 1 <= k < n, got k = {k}, n = {}", self.n()),
            )),
            Kernel::FixedGaussian { bandwidth_m } if !(bandwidth_m > 0.0) => Err(Error::Parameter(
                format!("fixed bandwidth must be positive, got {bandwidth_m}"),
            )),
            _ => Ok(()),
        }
    }

    pub fn fit(&self, kernel: Kernel) -> Result<GwrFit<T>> {
        self.check_kernel(kernel)?;
        let (n, p) = (self.n(), self.p());
        let cols = p + 1;

        struct Local<T> {
            theta: Vec<T>,
            s_ii: T,
            s_row_ss: T,
        }
        let locals: Vec<Local<T>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let w = self.weights(i, kernel)?;
                let qr = Qr::weighted(&self.design, &w);
                if !qr.is_full_rank() {
                    return Err(Error::LocalRankDeficient {
                        unit: self.labels[i].clone(),
                    });
                }
                let wy: Vec<T> = self
                    .y
                    .iter()
                    .zip(&w)
                    .map(|(&y, &wi)| wi.sqrt() * y)
                    .collect();
                let theta = qr.solve_least_squares(&wy);
                // Hat row: s_ij = w_j x_jᵀ (XᵀWX)⁻¹ x_i.
                let u = qr.solve_normal(self.design.row(i));
                let mut s_ii = T::zero();
                let mut s_row_ss = T::zero();
                for j in 0..n {
                    let s = w[j] * dot(self.design.row(j), &u);
                    if j == i {
                        s_ii = s;
                    }
                    s_row_ss += s * s;
                }
                Ok(Local {
                    theta,
                    s_ii,
                    s_row_ss,
                })
            })
            .collect::<Result<_>>()?;

        let mut coefficients = Matrix::zeros(n, cols);
        let mut local_pred = Vec::with_capacity(n);
        let mut influence = Vec::with_capacity(n);
        let (mut tr_s, mut tr_sts) = (T::zero(), T::zero());
        for (i, l) in locals.iter().enumerate() {
            for j in 0..cols {
                coefficients[(i, j)] = l.theta[j];
            }
            local_pred.push(dot(self.design.row(i), &l.theta));
            influence.push(l.s_ii);
            tr_s += l.s_ii;
            tr_sts += l.s_row_ss;
        }
        let residuals: Vec<T> = self
            .y
            .iter()
            .zip(&local_pred)
            .map(|(&a, &b)| a - b)
            .collect();
        let rss: T = residuals.iter().map(|&e| e * e).sum();

        let nf = T::of_usize(n);
        let aicc = aicc_value(n, rss, tr_s, kernel)?;
        let r2 = r_squared(rss, &self.y);
        let nu = T::of(2.0) * tr_s - tr_sts;
        let adj_r2 = T::one() - (T::one() - r2) * (nf - T::one()) / (nf - nu - T::one());

        Ok(GwrFit {
            kernel,
            names: self.names.clone(),
            coefficients,
            local_pred,
            residuals,
            influence,
            rss,
            tr_s,
            tr_sts,
            effective_params: nu,
            r2,
            adj_r2,
            aicc,
            n,
            p,
        })
    }

    /// AICc at adaptive bandwidth `k`, the quantity the bandwidth search
    /// minimises. Local fits are solved from the normal equations, which are
    /// assembled for every unit at once; this agrees with
    /// [`GwrProblem::fit`] to rounding but does not produce coefficients.
    pub fn aicc(&self, k: usize) -> Result<f64> {
        let kernel = Kernel::AdaptiveGaussian { k };
        self.check_kernel(kernel)?;
        let (n, c) = (self.n(), self.p() + 1);
        let q = moment_width(c);
        let mut w = Vec::with_capacity(n * n);
        for i in 0..n {
            w.extend(self.weights(i, kernel)?);
        }
        let mut g = vec![T::zero(); n * q];
        T::gemm(
            n,
            n,
            q,
            &w,
            [n, 1],
            &self.moments,
            [q, 1],
            T::zero(),
            &mut g,
        );

        let mut rss = T::zero();
        let mut tr_s = T::zero();
        let mut a = vec![T::zero(); c * c];
        for i in 0..n {
            let gi = &g[i * q..(i + 1) * q];
            let mut at = 0;
            for r in 0..c {
                for col in r..c {
                    a[r * c + col] = gi[at];
                    a[col * c + r] = gi[at];
                    at += 1;
                }
            }
            if !cholesky_in_place(&mut a, c) {
                return Err(Error::LocalRankDeficient {
                    unit: self.labels[i].clone(),
                });
            }
            let xi = self.design.row(i);
            let theta = cholesky_solve(&a, c, &gi[at..]);
            let u = cholesky_solve(&a, c, xi);
            let e = self.y[i] - dot(xi, &theta);
            rss += e * e;
            tr_s += w[i * n + i] * dot(xi, &u);
        }
        Ok(aicc_value(n, rss, tr_s, kernel)?.as_f64())
    }

    /// Golden-section search for the adaptive bandwidth minimising AICc.
    ///
    /// Interior points are rounded to integers and memoised; once the bracket
    /// is at most two wide every remaining candidate is evaluated, then the
    /// best point is polished by scanning a window of 5% of the range around
    /// it until the incumbent stops moving. Failed evaluations count as +∞.
    /// Ties go to the smaller k.
    pub fn search_bandwidth(&self, k_min: usize, k_max: usize) -> Result<BandwidthSearch> {
        let p = self.p();
        if k_min < p + 2 || k_min >= k_max || k_max > self.n() - 1 {
            return Err(Error::Parameter(format!(
                "bandwidth range needs p + 2 <= k_min < k_max <= n - 1 (p = {p}, n = {}, got [{k_min}, {k_max}])",
                self.n()
            )));
        }
        const DELTA: f64 = 0.381_966_011_250_105;

        let mut cache: BTreeMap<usize, std::result::Result<f64, String>> = BTreeMap::new();
        let eval_many =
            |ks: &[usize], cache: &mut BTreeMap<usize, std::result::Result<f64, String>>| {
                let todo: Vec<usize> = ks
                    .iter()
                    .copied()
                    .filter(|k| !cache.contains_key(k))
                    .collect();
                let results: Vec<_> = todo
                    .par_iter()
                    .map(|&k| self.aicc(k).map_err(|e| e.to_string()))
                    .collect();
                for (k, r) in todo.into_iter().zip(results) {
                    if let Err(e) = &r {
                        log::debug!("bandwidth {k} failed: {e}");
                    }
                    cache.insert(k, r);
                }
            };
        let score = |cache: &BTreeMap<usize, std::result::Result<f64, String>>, k: usize| -> f64 {
            match cache.get(&k) {
                Some(Ok(v)) if v.is_finite() => *v,
                _ => f64::INFINITY,
            }
        };

        let (mut a, mut b) = (k_min, k_max);
        while b - a > 2 {
            let step = (((b - a) as f64) * DELTA).round().max(1.0) as usize;
            let (c, d) = (a + step, b - step);
            if c >= d {
                break;
            }
            eval_many(&[c, d], &mut cache);
            if score(&cache, c) <= score(&cache, d) {
                b = d;
            } else {
                a = c;
            }
        }
        let bracket: Vec<usize> = (a..=b).collect();
        eval_many(&bracket, &mut cache);

        let best_of = |cache: &BTreeMap<usize, std::result::Result<f64, String>>| {
            cache
                .keys()
                .copied()
                .fold(None::<(usize, f64)>, |best, k| {
                    let v = score(cache, k);
                    match best {
                        Some((_, bv)) if bv <= v => best,
                        _ => Some((k, v)),
                    }
                })
                .expect("cache is non-empty")
        };
        // Adaptive bandwidths on regular layouts give a profile with small
        // ripples where the k-th neighbour distance jumps, so the incumbent is
        // polished over a window rather than only its immediate neighbours.
        let radius = ((k_max - k_min) as f64 * 0.05).ceil().max(2.0) as usize;
        loop {
            let (k, _) = best_of(&cache);
            let lo = k.saturating_sub(radius).max(k_min);
            let hi = (k + radius).min(k_max);
            let window: Vec<usize> = (lo..=hi).collect();
            eval_many(&window, &mut cache);
            if best_of(&cache).0 == k {
                break;
            }
        }

        let (k, v) = best_of(&cache);
        if !v.is_finite() {
            let reasons: Vec<String> = cache
                .iter()
                .filter_map(|(k, r)| r.as_ref().err().map(|e| format!("k = {k}: {e}")))
                .take(5)
                .collect();
            return Err(Error::SearchFailed(format!(
                "no bandwidth in [{k_min}, {k_max}] could be fitted; {}",
                reasons.join("; ")
            )));
        }
        Ok(BandwidthSearch {
            k,
            aicc: v,
            profile: cache
                .into_iter()
                .map(|(k, r)| (k, r.ok().filter(|v| v.is_finite())))
                .collect(),
        })
    }
}

fn moment_width(c: usize) -> usize {
    c * (c + 1) / 2 + c
}

fn aicc_value<T: Scalar>(n: usize, rss: T, tr_s: T, kernel: Kernel) -> Result<T> {
    let nf = T::of_usize(n);
    let slack = nf - T::of(2.0) - tr_s;
    if !(slack > T::zero()) {
        return Err(Error::BandwidthTooSmall {
            k: kernel.neighbors(),
            slack: slack.as_f64(),
        });
    }
    let two_pi = T::of(std::f64::consts::TAU);
    Ok(nf * two_pi.ln() + nf * (rss / nf).ln() + nf * (nf + tr_s) / slack)
}

/// Lower Cholesky factor of the symmetric `c x c` matrix `a`, in place.
/// False when a pivot is not clearly positive, using the same relative
/// tolerance as the rank test of the QR path.
fn cholesky_in_place<T: Scalar>(a: &mut [T], c: usize) -> bool {
    let scale = (0..c).map(|j| a[j * c + j]).fold(T::zero(), T::max).sqrt();
    let tol = T::of(RANK_TOL) * scale;
    for j in 0..c {
        let mut d = a[j * c + j];
        for m in 0..j {
            d -= a[j * c + m] * a[j * c + m];
        }
        if !(d > T::zero()) || d.sqrt() <= tol {
            return false;
        }
        let l = d.sqrt();
        a[j * c + j] = l;
        for r in j + 1..c {
            let mut v = a[r * c + j];
            for m in 0..j {
                v -= a[r * c + m] * a[j * c + m];
            }
            a[r * c + j] = v / l;
        }
    }
    true
}

fn cholesky_solve<T: Scalar>(l: &[T], c: usize, b: &[T]) -> Vec<T> {
    let mut z = b.to_vec();
    for r in 0..c {
        for m in 0..r {
            z[r] = z[r] - l[r * c + m] * z[m];
        }
        z[r] = z[r] / l[r * c + r];
    }
    for r in (0..c).rev() {
        for m in r + 1..c {
            z[r] = z[r] - l[m * c + r] * z[m];
        }
        z[r] = z[r] / l[r * c + r];
    }
    z
}

/// Outcome of a bandwidth search, with every evaluated point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthSearch {
    pub k: usize,
    pub aicc: f64,
    /// `(k, AICc)` for each evaluated bandwidth, ascending in k; `None` where
    /// calibration failed.
    pub profile: Vec<(usize, Option<f64>)>,
}

pub fn gwr_fit<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    points: &[Point],
    names: &[String],
    kernel: Kernel,
) -> Result<GwrFit<T>> {
    GwrProblem::new(x, y, points, names)?.fit(kernel)
}

pub fn golden_search_bandwidth<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    points: &[Point],
    names: &[String],
    k_min: usize,
    k_max: usize,
) -> Result<BandwidthSearch> {
    GwrProblem::new(x, y, points, names)?.search_bandwidth(k_min, k_max)
}
