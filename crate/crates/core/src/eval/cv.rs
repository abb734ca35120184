use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{r2_score, FoldSpec};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mlmod::{mlp_train, rf_train, MlpConfig, RfConfig};
use crate::rates::{FeatureMatrix, Scaler};

/// A cross-validated learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Rf(RfConfig),
    Mlp(MlpConfig),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Rf(_) => "rf",
            ModelSpec::Mlp(_) => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub r2: f64,
    pub sse: f64,
    /// Forest feature importance of this fold's model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub importance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvResult {
    pub model: String,
    /// Mean of the per-fold held-out R².
    pub mean_r2: f64,
    /// RMSE over all pooled held-out residuals.
    pub rmse: f64,
    pub folds: Vec<FoldResult>,
    /// Out-of-fold prediction for every row.
    pub predictions: Vec<f64>,
    pub prestandardized: bool,
}

/// k-fold cross-validation of `spec`.
///
/// By default each fold standardizes with a scaler fit on its training rows
/// only; `prestandardized` uses the globally standardized `features.values`
/// instead.
pub fn cross_validate(
    spec: &ModelSpec,
    features: &FeatureMatrix,
    y: &[f64],
    folds: &FoldSpec,
    prestandardized: bool,
) -> Result<CvResult> {
    let n = features.nrows();
    if y.len() != n || folds.n != n {
        return Err(Error::Parameter(format!(
            "cross-validation inputs disagree: {n} rows, {} targets, folds over {}",
            y.len(),
            folds.n
        )));
    }
    let p = features.ncols();
    let names = features.names();
    let per_fold: Vec<(FoldResult, Vec<usize>, Vec<f64>)> = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let (train, test) = folds.split(f);
            if train.len() < p + 2 {
                return Err(Error::Parameter(format!(
                    "fold {f} leaves {} training rows for {p} features",
                    train.len()
                )));
            }
            let z = if prestandardized {
                features.values.clone()
            } else {
                Scaler::fit(&features.raw, &train, &names)?.transform(&features.raw)
            };
            let xt = z.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let xv: Matrix<f64> = z.select_rows(&test);
            let (pred, importance) = match spec {
                ModelSpec::Rf(cfg) => {
                    let m = rf_train(&xt, &yt, cfg)?;
                    (m.predict(&xv)?, Some(m.importance))
                }
                ModelSpec::Mlp(cfg) => (mlp_train(&xt, &yt, cfg)?.predict(&xv)?, None),
            };
            let yv: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            let sse = yv.iter().zip(&pred).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok((
                FoldResult {
                    fold: f,
                    n_train: train.len(),
                    n_test: test.len(),
                    r2: r2_score(&yv, &pred),
                    sse,
                    importance,
                },
                test,
                pred,
            ))
        })
        .collect::<Result<_>>()?;

    let mut predictions = vec![f64::NAN; n];
    let mut fold_results = Vec::with_capacity(folds.k);
    for (res, test, pred) in per_fold {
        for (i, v) in test.into_iter().zip(pred) {
            predictions[i] = v;
        }
        fold_results.push(res);
    }
    let sse: f64 = y
        .iter()
        .zip(&predictions)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(CvResult {
        model: spec.name().to_string(),
        mean_r2: fold_results.iter().map(|f| f.r2).sum::<f64>() / folds.k as f64,
        rmse: (sse / n as f64).sqrt(),
        folds: fold_results,
        predictions,
        prestandardized,
    })
}
