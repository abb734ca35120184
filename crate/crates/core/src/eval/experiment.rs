use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{cross_validate, kfold_split, CvResult, FoldSpec, ModelSpec};
use crate::diagnostics::{morans_i, MoranResult, DEFAULT_PERMUTATIONS};
use crate::error::{Error, Result};
use crate::geo::{centroid, Point, WeightsMatrix, WeightsScheme};
use crate::ingest::CbgTable;
use crate::linmod::{standardized_residuals, BandwidthSearch, GwrFit, GwrProblem, Kernel, OlsFit};
use crate::mlmod::{MlpConfig, RfConfig};
use crate::rates::{assemble_features, ModelData, RateTable};
use crate::rng::derive_seed;

/// GWR calibration settings. Without `bandwidth` the adaptive bandwidth is
/// searched over `[k_min, k_max]` (defaults `p + 2` and `n − 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct GwrConfig {
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    /// Fixed neighbour count; skips the search.
    pub bandwidth: Option<usize>,
    /// Non-adaptive kernel; skips the search.
    pub kernel: Option<Kernel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub cv_folds: usize,
    pub prestandardized: bool,
    pub rf: RfConfig,
    pub mlp: MlpConfig,
    pub gwr: GwrConfig,
    pub weights: WeightsScheme,
    pub moran_permutations: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cv_folds: 10,
            prestandardized: false,
            rf: RfConfig::default(),
            mlp: MlpConfig::default(),
            gwr: GwrConfig::default(),
            weights: WeightsScheme::Queen,
            moran_permutations: DEFAULT_PERMUTATIONS,
        }
    }
}

/// Everything fitted for one variable set.
#[derive(Debug, Clone)]
pub struct ConditionRun {
    pub data: ModelData,
    pub points: Vec<Point>,
    pub ols: OlsFit<f64>,
    pub bandwidth: Option<BandwidthSearch>,
    pub gwr: GwrFit<f64>,
    pub rf: CvResult,
    pub mlp: CvResult,
    pub ols_moran: MoranResult<f64>,
    pub gwr_moran: MoranResult<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub r2: f64,
    pub rmse: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adj_r2: Option<f64>,
    /// AIC for OLS, AICc for GWR.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aic: Option<f64>,
}

impl Metrics {
    fn delta(&self, base: &Metrics) -> Metrics {
        let d = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
        Metrics {
            r2: self.r2 - base.r2,
            rmse: self.rmse - base.rmse,
            adj_r2: d(self.adj_r2, base.adj_r2),
            aic: d(self.aic, base.aic),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pair<T> {
    pub baseline: T,
    pub test: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelComparison {
    /// `in_sample` for the statistical models, `cross_validation` otherwise.
    pub source: &'static str,
    pub baseline: Metrics,
    pub test: Metrics,
    pub delta: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MoranSummary {
    pub i: f64,
    pub z: f64,
    pub p_perm: f64,
}

impl From<&MoranResult<f64>> for MoranSummary {
    fn from(m: &MoranResult<f64>) -> Self {
        Self {
            i: m.i,
            z: m.z,
            p_perm: m.p_perm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldsMeta {
    pub k: usize,
    pub n: usize,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub format_version: &'static str,
    pub models: BTreeMap<&'static str, ModelComparison>,
    pub seed: u64,
    pub folds: FoldsMeta,
    /// Adaptive GWR bandwidth (neighbour count) per condition.
    pub bandwidth: Pair<Option<usize>>,
    pub variables: Pair<Vec<String>>,
    pub residual_moran: BTreeMap<&'static str, Pair<MoranSummary>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth_sha256: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub report: ComparisonReport,
    pub folds: FoldSpec,
    pub baseline: ConditionRun,
    pub test: ConditionRun,
}

/// Centroids of the model rows, in row order.
pub fn row_points(cbgs: &CbgTable, row_ids: &[String]) -> Result<Vec<Point>> {
    row_ids
        .iter()
        .map(|id| {
            let rec = cbgs
                .get(id)
                .ok_or_else(|| Error::Referential(format!("model row {id} has no CBG")))?;
            centroid(&rec.polygon).map_err(|e| Error::Geometry(format!("cbg {id}: {e}")))
        })
        .collect()
}

/// Spatial weights over the model rows only.
pub fn row_weights(
    cbgs: &CbgTable,
    row_ids: &[String],
    scheme: WeightsScheme,
) -> Result<WeightsMatrix> {
    let full = crate::geo::spatial_weights(cbgs, scheme)?;
    let keep: Vec<usize> = row_ids
        .iter()
        .map(|id| {
            cbgs.position(id)
                .ok_or_else(|| Error::Referential(format!("model row {id} has no CBG")))
        })
        .collect::<Result<_>>()?;
    Ok(full.restrict(&keep))
}

/// Moran's I of the standardized residuals.
pub fn residual_moran(
    residuals: &[f64],
    weights: &WeightsMatrix,
    n_perm: usize,
    seed: u64,
) -> Result<MoranResult<f64>> {
    morans_i(&standardized_residuals(residuals)?, weights, n_perm, seed)
}

/// Calibrates GWR per `config`: fixed kernel, fixed k, or searched k.
pub fn calibrate_gwr(
    problem: &GwrProblem<f64>,
    config: &GwrConfig,
) -> Result<(GwrFit<f64>, Option<BandwidthSearch>)> {
    if let Some(kernel) = config.kernel {
        return Ok((problem.fit(kernel)?, None));
    }
    if let Some(k) = config.bandwidth {
        return Ok((problem.fit(Kernel::AdaptiveGaussian { k })?, None));
    }
    let k_min = config.k_min.unwrap_or(problem.p() + 2);
    let k_max = config.k_max.unwrap_or(problem.n() - 1);
    let search = problem.search_bandwidth(k_min, k_max)?;
    log::info!(
        "GWR bandwidth {} nearest units (AICc {:.3})",
        search.k,
        search.aicc
    );
    let fit = problem.fit(Kernel::AdaptiveGaussian { k: search.k })?;
    Ok((fit, Some(search)))
}

fn run_condition(
    cbgs: &CbgTable,
    data: ModelData,
    folds: &FoldSpec,
    config: &ExperimentConfig,
    rf: &RfConfig,
    mlp: &MlpConfig,
) -> Result<ConditionRun> {
    let names = data.features.names();
    let x = &data.features.values;
    let y = &data.target;
    let ols = crate::linmod::ols_fit(x, y, &names)?;
    let points = row_points(cbgs, &data.features.row_ids)?;
    let problem =
        GwrProblem::new(x, y, &points, &names)?.with_labels(data.features.row_ids.clone());
    let (gwr, bandwidth) = calibrate_gwr(&problem, &config.gwr)?;
    let rf = cross_validate(
        &ModelSpec::Rf(rf.clone()),
        &data.features,
        y,
        folds,
        config.prestandardized,
    )?;
    let mlp = cross_validate(
        &ModelSpec::Mlp(mlp.clone()),
        &data.features,
        y,
        folds,
        config.prestandardized,
    )?;
    let w = row_weights(cbgs, &data.features.row_ids, config.weights)?;
    let moran_seed = derive_seed(config.seed, 3);
    let ols_moran = residual_moran(&ols.residuals, &w, config.moran_permutations, moran_seed)?;
    let gwr_moran = residual_moran(&gwr.residuals, &w, config.moran_permutations, moran_seed)?;
    Ok(ConditionRun {
        data,
        points,
        ols,
        bandwidth,
        gwr,
        rf,
        mlp,
        ols_moran,
        gwr_moran,
    })
}

fn metrics(run: &ConditionRun) -> [(&'static str, &'static str, Metrics); 4] {
    [
        (
            "ols",
            "in_sample",
            Metrics {
                r2: run.ols.r2,
                rmse: run.ols.rmse(),
                adj_r2: Some(run.ols.adj_r2),
                aic: Some(run.ols.aic),
            },
        ),
        (
            "gwr",
            "in_sample",
            Metrics {
                r2: run.gwr.r2,
                rmse: run.gwr.rmse(),
                adj_r2: Some(run.gwr.adj_r2),
                aic: Some(run.gwr.aicc),
            },
        ),
        (
            "rf",
            "cross_validation",
            Metrics {
                r2: run.rf.mean_r2,
                rmse: run.rf.rmse,
                adj_r2: None,
                aic: None,
            },
        ),
        (
            "mlp",
            "cross_validation",
            Metrics {
                r2: run.mlp.mean_r2,
                rmse: run.mlp.rmse,
                adj_r2: None,
                aic: None,
            },
        ),
    ]
}

/// Baseline (socioeconomic `variables` only) versus test (plus the four visit
/// rates). Both conditions use the same rows, the same fold assignment and
/// the same learner seeds, all derived from `config.seed`.
pub fn run_experiment(
    cbgs: &CbgTable,
    rates: &RateTable,
    variables: &[String],
    config: &ExperimentConfig,
    ground_truth_sha256: Option<String>,
) -> Result<Experiment> {
    let base_data = assemble_features(cbgs, rates, false, variables)?;
    let test_data = assemble_features(cbgs, rates, true, variables)?;
    if base_data.features.row_ids != test_data.features.row_ids {
        return Err(Error::Referential(
            "baseline and test conditions cover different rows".into(),
        ));
    }
    let n = base_data.features.nrows();
    let folds = kfold_split(n, config.cv_folds, config.seed)?;
    let rf = RfConfig {
        seed: derive_seed(config.seed, 1),
        ..config.rf.clone()
    };
    let mlp = MlpConfig {
        seed: derive_seed(config.seed, 2),
        ..config.mlp.clone()
    };

    log::info!(
        "baseline condition: {} variables, {n} units",
        base_data.features.ncols()
    );
    let baseline = run_condition(cbgs, base_data, &folds, config, &rf, &mlp)?;
    log::info!(
        "test condition: {} variables, {n} units",
        test_data.features.ncols()
    );
    let test = run_condition(cbgs, test_data, &folds, config, &rf, &mlp)?;

    let mut models = BTreeMap::new();
    for ((name, source, b), (_, _, t)) in metrics(&baseline).into_iter().zip(metrics(&test)) {
        models.insert(
            name,
            ModelComparison {
                source,
                baseline: b,
                test: t,
                delta: t.delta(&b),
            },
        );
    }
    let mut residual_moran = BTreeMap::new();
    residual_moran.insert(
        "ols",
        Pair {
            baseline: MoranSummary::from(&baseline.ols_moran),
            test: MoranSummary::from(&test.ols_moran),
        },
    );
    residual_moran.insert(
        "gwr",
        Pair {
            baseline: MoranSummary::from(&baseline.gwr_moran),
            test: MoranSummary::from(&test.gwr_moran),
        },
    );
    let k_of = |r: &ConditionRun| match r.gwr.kernel {
        Kernel::AdaptiveGaussian { k } => Some(k),
        _ => None,
    };
    let report = ComparisonReport {
        format_version: crate::FORMAT_VERSION,
        models,
        seed: config.seed,
        folds: FoldsMeta {
            k: folds.k,
            n: folds.n,
            fingerprint: folds.fingerprint(),
        },
        bandwidth: Pair {
            baseline: k_of(&baseline),
            test: k_of(&test),
        },
        variables: Pair {
            baseline: baseline.data.features.names(),
            test: test.data.features.names(),
        },
        residual_moran,
        ground_truth_sha256,
    };
    Ok(Experiment {
        report,
        folds,
        baseline,
        test,
    })
}
