//! End-to-end acceptance checks, one per criterion, each printing a single
//! PASS/FAIL line. They run sequentially inside one test so the timings are
//! not skewed by other tests competing for cores.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use dvscope::diagnostics::{moran_statistic, morans_i, pearson, vif, vif_prune, RemovalReason};
use dvscope::eval::{
    calibrate_gwr, residual_moran, row_points, row_weights, run_experiment, ExperimentConfig,
    GwrConfig,
};
use dvscope::geo::{Point, WeightsMatrix, WeightsScheme};
use dvscope::ingest::{InputPaths, OutletType};
use dvscope::linalg::Matrix;
use dvscope::linmod::{golden_search_bandwidth, gwr_fit, ols_fit, GwrProblem, Kernel};
use dvscope::mlmod::{mlp_gradient_check, mlp_train, rf_train, MlpConfig, RfConfig};
use dvscope::pipeline::{
    default_vif_options, derive, screen_variables, socio_variables, DeriveOptions, Derived,
};
use dvscope::rates::{
    assemble_features, dv_rate_value, visit_rate_value, Category, FeatureColumn, FeatureMatrix,
};
use dvscope::rng::{derive_seed, rng_from};
use dvscope::synth::{
    generate, scenario_heterogeneous, scenario_paper_like, GroundTruth, SynthConfig, TRUTH_FILE,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Written straight to the process stdout so the lines show up without
/// `--nocapture`.
fn emit(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

/// `ACCEPTANCE_ONLY=5,7` restricts a run to the listed criteria.
fn selected(id: usize) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|s| s.trim().parse() == Ok(id)),
        Err(_) => true,
    }
}

fn run_criterion(
    id: usize,
    name: &str,
    limit: Option<Duration>,
    f: impl FnOnce() -> Outcome,
) -> bool {
    if !selected(id) {
        return true;
    }
    let t0 = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f));
    let elapsed = t0.elapsed();
    let (mut pass, mut detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    if let Some(limit) = limit {
        if elapsed > limit {
            pass = false;
            detail = format!("{detail}; over the {:.0} s limit", limit.as_secs_f64());
        }
    }
    emit(&format!(
        "criterion {id:>2} {} {name}: {detail} [{:.2} s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    ));
    pass
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn names(p: usize) -> Vec<String> {
    (0..p).map(|j| format!("x{j}")).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

// ---- dense oracle algebra ----

/// Inverse by Gauss-Jordan elimination with partial pivoting.
fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect())
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..n {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[i][col];
                if f != 0.0 {
                    for j in 0..n {
                        a[i][j] -= f * a[col][j];
                        inv[i][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    inv
}

struct OracleFit {
    beta: Vec<f64>,
    se: Vec<f64>,
    t: Vec<f64>,
    p: Vec<f64>,
    r2: f64,
    adj_r2: f64,
}

/// Least squares with intercept through the normal equations.
fn oracle_ols(x: &[Vec<f64>], y: &[f64]) -> OracleFit {
    let n = y.len();
    let p = x[0].len();
    let row = |i: usize| -> Vec<f64> { std::iter::once(1.0).chain(x[i].iter().copied()).collect() };
    let q = p + 1;
    let mut xtx = vec![vec![0.0; q]; q];
    let mut xty = vec![0.0; q];
    for i in 0..n {
        let r = row(i);
        for a in 0..q {
            xty[a] += r[a] * y[i];
            for b in 0..q {
                xtx[a][b] += r[a] * r[b];
            }
        }
    }
    let inv = invert(xtx);
    let beta: Vec<f64> = (0..q)
        .map(|a| (0..q).map(|b| inv[a][b] * xty[b]).sum())
        .collect();
    let rss: f64 = (0..n)
        .map(|i| {
            let fit: f64 = row(i).iter().zip(&beta).map(|(a, b)| a * b).sum();
            (y[i] - fit).powi(2)
        })
        .sum();
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let df = n - q;
    let sigma2 = rss / df as f64;
    let se: Vec<f64> = (0..q).map(|a| (sigma2 * inv[a][a]).sqrt()).collect();
    let t: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let pv = t
        .iter()
        .map(|&t| student_t_two_sided(t, df as u32))
        .collect();
    let r2 = 1.0 - rss / tss;
    OracleFit {
        beta,
        se,
        t,
        p: pv,
        r2,
        adj_r2: 1.0 - (1.0 - r2) * (n - 1) as f64 / df as f64,
    }
}

/// Two-sided Student t tail for integer degrees of freedom from the
/// closed-form trigonometric series. Near the centre it is `1 − A(t|ν)`; in
/// the tails the remainder of the same series is summed directly so small
/// p-values keep full relative precision.
fn student_t_two_sided(t: f64, nu: u32) -> f64 {
    let theta = (t.abs() / (nu as f64).sqrt()).atan();
    let (s, c) = theta.sin_cos();
    let c2 = c * c;
    let pi = std::f64::consts::PI;
    let odd = nu % 2 == 1;
    // Coefficient of c^{2k} in the series.
    let coef = |k: usize, prev: f64| {
        if odd {
            prev * (2 * k) as f64 / (2 * k + 1) as f64
        } else {
            prev * (2 * k - 1) as f64 / (2 * k) as f64
        }
    };
    let finite_terms = if odd {
        (nu as usize - 1) / 2
    } else {
        nu as usize / 2
    };
    let prefactor = if odd { 2.0 / pi * s * c } else { s };
    if c2 > 0.5 {
        let (mut sum, mut a, mut pow) = (0.0, 1.0, 1.0);
        for k in 0..finite_terms {
            if k > 0 {
                a = coef(k, a);
                pow *= c2;
            }
            sum += a * pow;
        }
        let big_a = if odd {
            2.0 / pi * theta + prefactor * sum
        } else {
            prefactor * sum
        };
        1.0 - big_a
    } else {
        let (mut a, mut pow) = (1.0, 1.0);
        for k in 1..=finite_terms {
            a = coef(k, a);
            pow *= c2;
        }
        let (mut sum, mut k) = (0.0, finite_terms);
        loop {
            let term = a * pow;
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
            k += 1;
            a = coef(k, a);
            pow *= c2;
        }
        prefactor * sum
    }
}

fn matrix(rows: &[Vec<f64>]) -> Matrix<f64> {
    Matrix::from_rows(rows)
}

// ---- 1 ----

fn ols_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut worst_field = "";
    for seed in 0..20u64 {
        let mut rng = rng_from(1000 + seed);
        let n = 50;
        let p = 3 + (seed as usize % 6);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| normal(&mut rng)).collect())
            .collect();
        let beta: Vec<f64> = (0..=p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| {
                beta[0]
                    + r.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>()
                    + normal(&mut rng)
            })
            .collect();
        let fit = ols_fit(&matrix(&x), &y, &names(p)).expect("ols fit");
        let o = oracle_ols(&x, &y);
        let mut check = |field: &'static str, got: &[f64], want: &[f64]| {
            for (a, b) in got.iter().zip(want) {
                let e = rel_err(*a, *b);
                if e > worst {
                    worst = e;
                    worst_field = field;
                }
            }
        };
        check("coefficient", &fit.coefficients, &o.beta);
        check("std error", &fit.std_errors, &o.se);
        check("t", &fit.t_values, &o.t);
        check("p", &fit.p_values, &o.p);
        check("r2", &[fit.r2, fit.adj_r2], &[o.r2, o.adj_r2]);
    }
    outcome(
        worst <= 1e-8,
        format!("20 problems, worst relative error {worst:.2e} ({worst_field})"),
    )
}

// ---- 2 ----

fn gwr_uniform_limit() -> Outcome {
    let mut rng = rng_from(77);
    let n = 200;
    let p = 3;
    let pts: Vec<Point> = (0..n)
        .map(|i| {
            Point::new(
                -87.7 + (i % 20) as f64 * 0.01,
                41.8 + (i / 20) as f64 * 0.01,
            )
        })
        .collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| normal(&mut rng)).collect())
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|r| 5.0 + 1.5 * r[0] - 2.0 * r[1] + 2.5 * r[2] + 0.5 * normal(&mut rng))
        .collect();
    let xm = matrix(&x);
    let ols = ols_fit(&xm, &y, &names(p)).unwrap();
    let g = gwr_fit(&xm, &y, &pts, &names(p), Kernel::Uniform).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for (j, b) in ols.coefficients.iter().enumerate() {
            worst = worst.max(rel_err(g.coefficients[(i, j)], *b));
        }
    }
    outcome(
        worst <= 1e-8,
        format!("{n} units, worst relative deviation from OLS {worst:.2e}"),
    )
}

// ---- 3 ----

fn bandwidth_search() -> Outcome {
    let mut matched = 0;
    let mut notes = Vec::new();
    for seed in 0..10u64 {
        let mut rng = rng_from(3000 + seed);
        let (rows, cols) = (15, 20);
        let pts: Vec<Point> = (0..rows * cols)
            .map(|i| {
                Point::new(
                    -87.7 + ((i % cols) as f64 + rng.random_range(-0.3..0.3)) * 0.01,
                    41.8 + ((i / cols) as f64 + rng.random_range(-0.3..0.3)) * 0.01,
                )
            })
            .collect();
        let n = pts.len();
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..2).map(|_| normal(&mut rng)).collect())
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i % cols) as f64 / cols as f64;
                let v = (i / cols) as f64 / rows as f64;
                1.0 + (3.0 * u - 1.5) * x[i][0] + (1.0 - 2.0 * v) * x[i][1] + 0.5 * normal(&mut rng)
            })
            .collect();
        let xm = matrix(&x);
        let problem = GwrProblem::new(&xm, &y, &pts, &names(2)).unwrap();
        let (k_min, k_max) = (problem.p() + 2, problem.n() - 1);
        let found = golden_search_bandwidth(&xm, &y, &pts, &names(2), k_min, k_max).unwrap();
        let (best_k, best_aicc) = (k_min..=k_max)
            .filter_map(|k| problem.aicc(k).ok().map(|a| (k, a)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if found.k == best_k || (found.aicc - best_aicc).abs() <= 1e-9 {
            matched += 1;
        } else {
            notes.push(format!("seed {seed}: search k={} scan k={best_k}", found.k));
        }
    }
    outcome(
        matched == 10,
        format!(
            "{matched}/10 match the exhaustive scan (n=300) {}",
            notes.join(", ")
        ),
    )
}

// ---- 4 ----

fn rook_grid(rows: usize, cols: usize) -> Vec<Vec<usize>> {
    (0..rows * cols)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            let mut nb = Vec::new();
            if r > 0 {
                nb.push(i - cols);
            }
            if r + 1 < rows {
                nb.push(i + cols);
            }
            if c > 0 {
                nb.push(i - 1);
            }
            if c + 1 < cols {
                nb.push(i + 1);
            }
            nb
        })
        .collect()
}

/// Moran's I by the double sum over a dense row-standardized matrix.
fn moran_oracle(values: &[f64], neighbors: &[Vec<usize>]) -> f64 {
    let n = values.len();
    let mut w = vec![vec![0.0; n]; n];
    for (i, nb) in neighbors.iter().enumerate() {
        for &j in nb {
            w[i][j] = 1.0 / nb.len() as f64;
        }
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let s0: f64 = w.iter().flatten().sum();
    let mut num = 0.0;
    for i in 0..n {
        for j in 0..n {
            num += w[i][j] * z[i] * z[j];
        }
    }
    let den: f64 = z.iter().map(|v| v * v).sum();
    n as f64 / s0 * num / den
}

fn moran_checks() -> Outcome {
    let nb2 = rook_grid(2, 2);
    let w2 = WeightsMatrix::from_neighbors(WeightsScheme::Rook, nb2);
    let checker = [1.0, 0.0, 0.0, 1.0];
    let i_checker = moran_statistic(&checker, &w2).unwrap();

    let nb4 = rook_grid(4, 4);
    let w4 = WeightsMatrix::from_neighbors(WeightsScheme::Rook, nb4.clone());
    let field: Vec<f64> = (0..16)
        .map(|i| (i / 4) as f64 * 3.0 + (i % 4) as f64 + 1.0)
        .collect();
    let want = moran_oracle(&field, &nb4);
    let got = morans_i(&field, &w4, 999, 42).unwrap();
    let again = morans_i(&field, &w4, 999, 42).unwrap();
    let other = morans_i(&field, &w4, 999, 43).unwrap();
    let diff = (got.i - want).abs();
    let reproducible = got == again;
    let pass = i_checker == -1.0 && diff <= 1e-12 && reproducible && got.p_perm > 0.0;
    outcome(
        pass,
        format!(
            "checkerboard I = {i_checker}; 4x4 |I - direct sum| = {diff:.1e}; p_perm {} (seed 42, twice: {}), {} (seed 43)",
            got.p_perm,
            if reproducible { "identical" } else { "differs" },
            other.p_perm
        ),
    )
}

// ---- 5 ----

fn feature_matrix(cols: &[Vec<f64>]) -> FeatureMatrix {
    let n = cols[0].len();
    let columns = (0..cols.len())
        .map(|j| FeatureColumn {
            name: format!("v{j}"),
            category: Category::Disadvantage,
        })
        .collect();
    FeatureMatrix::from_raw(
        (0..n).map(|i| format!("r{i:03}")).collect(),
        columns,
        Matrix::from_columns(cols),
    )
    .unwrap()
}

/// VIF of column j from the auxiliary regression on the others.
fn vif_oracle(cols: &[Vec<f64>], j: usize) -> f64 {
    let n = cols[0].len();
    let others: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..cols.len())
                .filter(|&k| k != j)
                .map(|k| cols[k][i])
                .collect()
        })
        .collect();
    1.0 / (1.0 - oracle_ols(&others, &cols[j]).r2)
}

fn vif_checks() -> Outcome {
    // Columns of an 8x8 Hadamard matrix are mutually orthogonal with zero mean.
    let h = |i: usize, j: usize| {
        if (i & j).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    };
    let orth: Matrix<f64> = Matrix::from_fn(8, 4, |i, j| h(i, j + 1));
    let orth_vif = vif(&orth).unwrap();
    let orth_err = orth_vif.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);

    let mut rng = rng_from(55);
    let n = 60;
    let a: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let b: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let c: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a + b).collect();
    let d: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let collinear = vec![a, b, c, d];
    let coll_vif = vif(&Matrix::from_columns(&collinear)).unwrap();
    let infinite = coll_vif[..3].iter().all(|v| v.is_infinite() && *v > 0.0);
    let report = vif_prune(&feature_matrix(&collinear), &default_threshold()).unwrap();
    let flagged = report
        .removals
        .first()
        .is_some_and(|r| r.vif.is_infinite() && r.reason == RemovalReason::Threshold);

    let z: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..n).map(|_| normal(&mut rng)).collect())
        .collect();
    let fixture: Vec<Vec<f64>> = vec![
        z[0].clone(),
        (0..n).map(|i| z[1][i] + 0.8 * z[0][i]).collect(),
        (0..n)
            .map(|i| z[2][i] + 0.5 * z[1][i] + 0.4 * z[0][i])
            .collect(),
        z[3].clone(),
        (0..n)
            .map(|i| z[4][i] + 0.6 * z[3][i] - 0.4 * z[0][i])
            .collect(),
    ];
    let got = vif(&Matrix::from_columns(&fixture)).unwrap();
    let fixture_err = (0..5)
        .map(|j| rel_err(got[j], vif_oracle(&fixture, j)))
        .fold(0.0, f64::max);

    // Pruning a strongly collinear set and the synthetic socioeconomic table.
    let mut strong = fixture.clone();
    strong.push(
        (0..n)
            .map(|i| fixture[1][i] + fixture[2][i] + 0.05 * normal(&mut rng))
            .collect(),
    );
    strong.push(
        (0..n)
            .map(|i| fixture[3][i] - fixture[4][i] + 0.05 * normal(&mut rng))
            .collect(),
    );
    let pruned = vif_prune(&feature_matrix(&strong), &default_threshold()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    generate(&scenario_paper_like(9), dir.path()).unwrap();
    let d = derive(&InputPaths::in_dir(dir.path()), &DeriveOptions::default()).unwrap();
    let socio = screen_variables(
        &d.dataset.cbgs,
        &d.rates,
        &socio_variables(),
        &default_vif_options(),
    )
    .unwrap();
    let terminated = [&pruned, &socio].iter().all(|r| {
        let last = r.final_round();
        last.values.values().all(|v| *v < 5.0)
            && last.values.keys().collect::<BTreeSet<_>>() == r.retained.iter().collect()
    });

    let pass = orth_err <= 1e-12 && infinite && flagged && fixture_err <= 1e-8 && terminated;
    outcome(
        pass,
        format!(
            "orthogonal |VIF-1| {orth_err:.1e}; collinear VIFs infinite {infinite}, flagged {flagged}; \
             5-column oracle error {fixture_err:.1e}; pruning ends below 5: {terminated} \
             ({} of {} and {} of {} kept)",
            pruned.retained.len(),
            strong.len(),
            socio.retained.len(),
            socio_variables().len()
        ),
    )
}

fn default_threshold() -> dvscope::diagnostics::VifOptions {
    dvscope::diagnostics::VifOptions::default()
}

// ---- 6 ----

fn rf_checks() -> Outcome {
    let mut worst_sum: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = rng_from(600 + seed);
        let x = Matrix::from_fn(120, 6, |_, _| normal(&mut rng));
        let y: Vec<f64> = (0..120)
            .map(|i| x[(i, 0)] * x[(i, 1)] + x[(i, 2)] + 0.3 * normal(&mut rng))
            .collect();
        let cfg = RfConfig {
            n_tree: 30,
            seed,
            ..RfConfig::default()
        };
        let m = rf_train(&x, &y, &cfg).unwrap();
        worst_sum = worst_sum.max((m.importance.iter().sum::<f64>() - 1.0).abs());
    }

    let mut rng = rng_from(61);
    let x = Matrix::from_fn(200, 5, |_, _| rng.random_range(0.0..1.0));
    let y: Vec<f64> = (0..200)
        .map(|i| 10.0 * x[(i, 0)] + 0.1 * normal(&mut rng))
        .collect();
    let cfg = RfConfig {
        n_tree: 50,
        seed: 8,
        ..RfConfig::default()
    };
    let m = rf_train(&x, &y, &cfg).unwrap();
    let driver = m.importance[0];
    let again = rf_train(&x, &y, &cfg).unwrap();
    let same = m == again && m.to_json().unwrap() == again.to_json().unwrap();

    let pass = worst_sum <= 1e-10 && driver > 0.8 && same;
    outcome(
        pass,
        format!(
            "max |sum(importance) - 1| {worst_sum:.1e}; driver importance {driver:.3}; same seed gives identical forest: {same}"
        ),
    )
}

// ---- 7 ----

fn mlp_checks() -> Outcome {
    let mut rng = rng_from(71);
    let x = Matrix::from_fn(8, 3, |_, _| normal(&mut rng));
    let y: Vec<f64> = (0..8).map(|_| normal(&mut rng)).collect();
    let cfg = MlpConfig {
        layers: vec![5, 4],
        dropout: vec![0.0, 0.0],
        epochs: 3,
        batch_size: 4,
        seed: 5,
        ..MlpConfig::default()
    };
    let builtin = mlp_gradient_check(&cfg, &x, &y).unwrap();

    // Independent central differences on a briefly trained network.
    let mut model = mlp_train(&x, &y, &cfg).unwrap();
    let (_, analytic) = model.gradient(&x, &y);
    let base = model.parameters();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] = base[k] + h;
        model.set_parameters(&p);
        let up = model.gradient(&x, &y).0;
        p[k] = base[k] - h;
        model.set_parameters(&p);
        let down = model.gradient(&x, &y).0;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[k];
        worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8));
    }
    outcome(
        builtin < 1e-4 && worst < 1e-4,
        format!(
            "{} parameters, max relative error {worst:.2e} (fresh network {builtin:.2e})",
            base.len()
        ),
    )
}

// ---- shared synthetic runs ----

fn synth_and_derive(config: &SynthConfig) -> (Derived, GroundTruth) {
    let dir = tempfile::tempdir().unwrap();
    generate(config, dir.path()).unwrap();
    let truth: GroundTruth =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(TRUTH_FILE)).unwrap())
            .unwrap();
    let d = derive(&InputPaths::in_dir(dir.path()), &DeriveOptions::default()).unwrap();
    (d, truth)
}

fn screened(d: &Derived) -> Vec<String> {
    screen_variables(
        &d.dataset.cbgs,
        &d.rates,
        &socio_variables(),
        &default_vif_options(),
    )
    .unwrap()
    .retained
}

// ---- 8 ----

fn experiment_direction() -> Outcome {
    let (mut ols_ok, mut gwr_ok, mut rf_up, mut mlp_up) = (0, 0, 0, 0);
    for seed in 0..10u64 {
        let (d, _) = synth_and_derive(&scenario_paper_like(seed));
        let config = ExperimentConfig {
            seed,
            ..ExperimentConfig::default()
        };
        let exp = run_experiment(&d.dataset.cbgs, &d.rates, &screened(&d), &config, None).unwrap();
        let m = &exp.report.models;
        let ols = &m["ols"];
        if ols.test.adj_r2 > ols.baseline.adj_r2 && ols.test.aic < ols.baseline.aic {
            ols_ok += 1;
        }
        if m["gwr"].test.r2 > m["gwr"].baseline.r2 {
            gwr_ok += 1;
        }
        if m["rf"].test.r2 > m["rf"].baseline.r2 {
            rf_up += 1;
        }
        if m["mlp"].test.r2 > m["mlp"].baseline.r2 {
            mlp_up += 1;
        }
    }
    outcome(
        ols_ok == 10 && gwr_ok == 10 && rf_up >= 8 && mlp_up >= 8,
        format!(
            "seeds improved: OLS adj R2 and AIC {ols_ok}/10, GWR R2 {gwr_ok}/10, RF CV R2 {rf_up}/10, MLP CV R2 {mlp_up}/10"
        ),
    )
}

// ---- 9 ----

fn spatial_heterogeneity() -> Outcome {
    let mut hits = 0;
    let mut misses = Vec::new();
    let mut min_gap = f64::INFINITY;
    for seed in 0..10u64 {
        let (d, _) = synth_and_derive(&scenario_heterogeneous(seed));
        let cbgs = &d.dataset.cbgs;
        let data = assemble_features(cbgs, &d.rates, true, &screened(&d)).unwrap();
        let ids = &data.features.row_ids;
        let names = data.features.names();
        let ols = ols_fit(&data.features.values, &data.target, &names).unwrap();
        let pts = row_points(cbgs, ids).unwrap();
        let problem = GwrProblem::new(&data.features.values, &data.target, &pts, &names).unwrap();
        let (gwr, _) = calibrate_gwr(&problem, &GwrConfig::default()).unwrap();
        let w = row_weights(cbgs, ids, WeightsScheme::Queen).unwrap();
        let moran_seed = derive_seed(seed, 3);
        let mo = residual_moran(&ols.residuals, &w, 999, moran_seed).unwrap();
        let mg = residual_moran(&gwr.residuals, &w, 999, moran_seed).unwrap();
        let gap = gwr.r2 - ols.r2;
        min_gap = min_gap.min(gap);
        if gap >= 0.1 && mg.i.abs() < mo.i.abs() && mg.p_perm > 0.05 {
            hits += 1;
        } else {
            misses.push(format!(
                "seed {seed}: gap {gap:.3}, I_ols {:.3}, I_gwr {:.3}, p {:.3}",
                mo.i, mg.i, mg.p_perm
            ));
        }
    }
    outcome(
        hits >= 8,
        format!(
            "{hits}/10 seeds meet all three conditions (smallest R2 gap {min_gap:.3}){}{}",
            if misses.is_empty() { "" } else { "; " },
            misses.join("; ")
        ),
    )
}

// ---- 10 ----

fn sign_pattern() -> Outcome {
    let mut hits = 0;
    for seed in 0..10u64 {
        let (d, _) = synth_and_derive(&scenario_paper_like(seed));
        let y: Vec<f64> = d.rates.rows.iter().map(|r| r.dv_rate).collect();
        let r = |t: OutletType| {
            let x: Vec<f64> = d.rates.rows.iter().map(|row| row.visit_rate(t)).collect();
            pearson(&x, &y).unwrap().coefficient
        };
        let signs = r(OutletType::LiquorStore) > 0.0
            && r(OutletType::DrinkingPlace) < 0.0
            && r(OutletType::Brewery) < 0.0
            && r(OutletType::Winery).abs() < 0.1;
        let data = assemble_features(&d.dataset.cbgs, &d.rates, true, &screened(&d)).unwrap();
        let fit = ols_fit(&data.features.values, &data.target, &data.features.names()).unwrap();
        let j = fit
            .names
            .iter()
            .position(|n| n == "liquor_store_vr")
            .unwrap();
        if signs && fit.coefficients[j] > 0.0 && fit.p_values[j] < 0.05 {
            hits += 1;
        }
    }
    outcome(
        hits >= 8,
        format!("{hits}/10 seeds show (+, -, -, ~0) and a significant positive liquor-store coefficient"),
    )
}

// ---- 11 ----

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dvscope"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run dvscope")
}

fn cli_determinism() -> Outcome {
    let work = tempfile::tempdir().unwrap();
    let w = work.path();
    let data = w.join("data");
    let p = |q: &Path| q.to_str().unwrap().to_string();
    let mut config = scenario_paper_like(11);
    config.rows = 12;
    config.cols = 12;
    std::fs::create_dir_all(w).unwrap();
    std::fs::write(
        w.join("synth.json"),
        serde_json::to_string(&config).unwrap(),
    )
    .unwrap();
    let s = cli(&[
        "synth",
        "--config",
        &p(&w.join("synth.json")),
        "--out",
        &p(&data),
    ]);
    assert!(
        s.status.success(),
        "synth failed: {}",
        String::from_utf8_lossy(&s.stderr)
    );

    let first = w.join("a");
    let r = cli(&[
        "experiment",
        "--seed",
        "11",
        "--input-dir",
        &p(&data),
        "--out",
        &p(&first),
        "--threads",
        "1",
    ]);
    assert!(
        r.status.success(),
        "experiment failed: {}",
        String::from_utf8_lossy(&r.stderr)
    );
    let resolved = first.join("resolved_config.json");
    for (dir, threads) in [("b", "1"), ("c", "8")] {
        let r = cli(&[
            "experiment",
            "--config",
            &p(&resolved),
            "--out",
            &p(&w.join(dir)),
            "--threads",
            threads,
        ]);
        assert!(
            r.status.success(),
            "experiment failed: {}",
            String::from_utf8_lossy(&r.stderr)
        );
    }
    let mut differing = Vec::new();
    for name in ["comparison.json", "gwr_local.geojson", "rates.csv"] {
        let a = std::fs::read(first.join(name)).unwrap();
        for dir in ["b", "c"] {
            if std::fs::read(w.join(dir).join(name)).unwrap() != a {
                differing.push(format!("{dir}/{name}"));
            }
        }
    }
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            "repeat run and --threads 1 vs 8 are byte-identical (comparison.json, gwr_local.geojson, rates.csv)".into()
        } else {
            format!("differs: {}", differing.join(", "))
        },
    )
}

// ---- 12 ----

fn rate_formulas() -> Outcome {
    let exact = dv_rate_value(5, 1000) == 5.0 && visit_rate_value(15, 30) == 0.5;
    let mut worst_dv: f64 = 0.0;
    let mut worst_vr: f64 = 0.0;
    let mut within = true;
    let mut matches = true;
    for config in [
        scenario_paper_like(31),
        scenario_paper_like(32),
        scenario_heterogeneous(33),
    ] {
        let (d, truth) = synth_and_derive(&config);
        matches &= d.rates.rows.len() == truth.units.len();
        for (row, unit) in d.rates.rows.iter().zip(&truth.units) {
            matches &= row.cbg_id == unit.cbg_id
                && row.dv_rate == unit.dv_rate
                && row.visit_rates == unit.visit_rates;
            let e = (row.dv_rate - unit.intended_rate).abs();
            worst_dv = worst_dv.max(e / truth.dv_rate_bound);
            within &= e <= truth.dv_rate_bound + 1e-12;
            for k in 0..4 {
                let e = (row.visit_rates[k] - unit.intended_visit_rates[k]).abs();
                worst_vr = worst_vr.max(e / truth.visit_rate_bound);
                within &= e <= truth.visit_rate_bound + 1e-12;
            }
        }
    }
    outcome(
        exact && within && matches,
        format!(
            "5/1000 -> 5.0 and 15/30 -> 0.5 exact: {exact}; derived rates equal generated: {matches}; \
             largest error as a fraction of the rounding bound: DV {worst_dv:.3}, visits {worst_vr:.3}"
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let secs = Duration::from_secs;
    let results = [
        run_criterion(
            1,
            "OLS matches the normal-equations oracle",
            Some(secs(1)),
            ols_oracle,
        ),
        run_criterion(
            2,
            "uniform-kernel GWR equals OLS",
            Some(secs(5)),
            gwr_uniform_limit,
        ),
        run_criterion(
            3,
            "golden-section bandwidth equals exhaustive scan",
            Some(secs(120)),
            bandwidth_search,
        ),
        run_criterion(4, "Moran's I", None, moran_checks),
        run_criterion(5, "VIF", None, vif_checks),
        run_criterion(6, "random forest", None, rf_checks),
        run_criterion(7, "MLP gradient check", None, mlp_checks),
        run_criterion(
            8,
            "visit rates improve every model",
            Some(secs(600)),
            experiment_direction,
        ),
        run_criterion(
            9,
            "GWR captures spatial heterogeneity",
            Some(secs(600)),
            spatial_heterogeneity,
        ),
        run_criterion(10, "correlation and coefficient signs", None, sign_pattern),
        run_criterion(11, "CLI determinism", None, cli_determinism),
        run_criterion(
            12,
            "rate formulas and synthetic round trip",
            None,
            rate_formulas,
        ),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
