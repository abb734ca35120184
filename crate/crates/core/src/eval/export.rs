//! Plot-ready report files. Every writer is a pure function of its inputs, so
//! re-exporting the same results gives byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use super::{jenks_breaks, CvResult, Experiment};
use crate::diagnostics::{CorrelationResult, VifReport};
use crate::error::{Error, Result};
use crate::geo::Polygon;
use crate::ingest::{CbgTable, OutletType};
use crate::linmod::{standardized_residuals, BandwidthSearch, GwrFit, OlsFit};
use crate::rates::RateTable;

/// Number of classes for choropleth breaks of local coefficients.
pub const JENKS_CLASSES: usize = 6;

/// Shortest round-trip decimal; non-finite values spelled out.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn csv_string(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::Parse {
        context: "csv export".into(),
        message: e.to_string(),
    };
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse {
        context: "csv export".into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        context: "report".into(),
        source: e,
    })?;
    s.push('\n');
    Ok(s)
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn polygon_json(p: &Polygon) -> Value {
    let rings: Vec<Value> = p
        .rings()
        .map(|r| Value::Array(r.iter().map(|pt| json!([pt.x, pt.y])).collect()))
        .collect();
    json!({"type": "Polygon", "coordinates": rings})
}

fn feature_collection(
    cbgs: &CbgTable,
    ids: &[String],
    props: impl Fn(usize) -> Map<String, Value>,
) -> Result<Value> {
    let features = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let rec = cbgs
                .get(id)
                .ok_or_else(|| Error::Referential(format!("no CBG {id} for export")))?;
            let mut p = Map::new();
            p.insert("cbg_id".into(), Value::String(id.clone()));
            p.extend(props(i));
            Ok(json!({"type": "Feature", "properties": p, "geometry": polygon_json(&rec.polygon)}))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({"type": "FeatureCollection", "features": features}))
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn rates_csv(rates: &RateTable) -> Result<String> {
    let mut header = vec!["cbg_id".to_string(), "incidents".into(), "dv_rate".into()];
    header.extend(
        OutletType::ALL
            .iter()
            .map(|t| format!("{}_visitors", t.key())),
    );
    header.extend(OutletType::ALL.iter().map(|t| t.rate_column()));
    header.push("population_density".into());
    let rows: Vec<Vec<String>> = rates
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.cbg_id.clone(),
                r.incidents.to_string(),
                fmt_f64(r.dv_rate),
            ];
            row.extend(r.visitors.iter().map(|v| v.to_string()));
            row.extend(r.visit_rates.iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(r.population_density));
            row
        })
        .collect();
    csv_string(&header, &rows)
}

/// The columns of [`rates_csv`] as polygon properties.
pub fn rates_geojson(cbgs: &CbgTable, rates: &RateTable) -> Result<Value> {
    let ids: Vec<String> = rates.rows.iter().map(|r| r.cbg_id.clone()).collect();
    feature_collection(cbgs, &ids, |i| {
        let r = &rates.rows[i];
        let mut p = Map::new();
        p.insert("incidents".into(), r.incidents.into());
        p.insert("dv_rate".into(), num(r.dv_rate));
        for (t, &v) in OutletType::ALL.iter().zip(&r.visitors) {
            p.insert(format!("{}_visitors", t.key()), v.into());
        }
        for t in OutletType::ALL {
            p.insert(t.rate_column(), num(r.visit_rate(t)));
        }
        p.insert("population_density".into(), num(r.population_density));
        p
    })
}

/// Local coefficient layers (`coef_<variable>`), standardized residual and
/// local prediction per unit.
pub fn gwr_local_geojson(cbgs: &CbgTable, row_ids: &[String], fit: &GwrFit<f64>) -> Result<Value> {
    let std_resid = standardized_residuals(&fit.residuals)?;
    feature_collection(cbgs, row_ids, |i| {
        let mut p = Map::new();
        for (j, name) in fit.names.iter().enumerate() {
            p.insert(format!("coef_{name}"), num(fit.coefficients[(i, j)]));
        }
        p.insert("std_resid".into(), num(std_resid[i]));
        p.insert("local_pred".into(), num(fit.local_pred[i]));
        p
    })
}

/// Named per-unit layers as polygon properties.
pub fn layers_geojson(
    cbgs: &CbgTable,
    row_ids: &[String],
    layers: &[(String, Vec<f64>)],
) -> Result<Value> {
    feature_collection(cbgs, row_ids, |i| {
        layers
            .iter()
            .map(|(name, v)| (name.clone(), num(v[i])))
            .collect()
    })
}

pub fn ols_fit_csv(fit: &OlsFit<f64>) -> Result<String> {
    let header: Vec<String> = ["variable", "coefficient", "std_err", "t", "p"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = (0..fit.names.len())
        .map(|j| {
            vec![
                fit.names[j].clone(),
                fmt_f64(fit.coefficients[j]),
                fmt_f64(fit.std_errors[j]),
                fmt_f64(fit.t_values[j]),
                fmt_f64(fit.p_values[j]),
            ]
        })
        .collect();
    csv_string(&header, &rows)
}

pub fn ols_summary(fit: &OlsFit<f64>) -> Value {
    json!({
        "n": fit.n,
        "p": fit.p,
        "r2": num(fit.r2),
        "adj_r2": num(fit.adj_r2),
        "aic": num(fit.aic),
        "rmse": num(fit.rmse()),
        "rss": num(fit.rss),
    })
}

/// Fit statistics plus Jenks class edges for every coefficient layer.
pub fn gwr_summary(fit: &GwrFit<f64>, search: Option<&BandwidthSearch>) -> Result<Value> {
    let mut breaks = Map::new();
    for (j, name) in fit.names.iter().enumerate() {
        let edges = jenks_breaks(&fit.coefficients.column(j), JENKS_CLASSES)?;
        breaks.insert(
            format!("coef_{name}"),
            Value::Array(edges.into_iter().map(num).collect()),
        );
    }
    let profile: Vec<Value> = search
        .map(|s| {
            s.profile
                .iter()
                .map(|(k, v)| json!({"k": k, "aicc": v.map(num)}))
                .collect()
        })
        .unwrap_or_default();
    Ok(json!({
        "kernel": fit.kernel,
        "bandwidth": match fit.kernel {
            crate::linmod::Kernel::AdaptiveGaussian { k } => json!(k),
            _ => Value::Null,
        },
        "n": fit.n,
        "p": fit.p,
        "tr_S": num(fit.tr_s),
        "tr_StS": num(fit.tr_sts),
        "effective_params": num(fit.effective_params),
        "aicc": num(fit.aicc),
        "r2": num(fit.r2),
        "adj_r2": num(fit.adj_r2),
        "rmse": num(fit.rmse()),
        "jenks_classes": JENKS_CLASSES,
        "jenks_breaks": breaks,
        "bandwidth_profile": profile,
    }))
}

/// Mean and per-fold forest importances (one row per variable).
pub fn rf_importance_csv(names: &[String], cv: &CvResult) -> Result<String> {
    let per_fold: Vec<&Vec<f64>> = cv
        .folds
        .iter()
        .map(|f| {
            f.importance.as_ref().ok_or_else(|| {
                Error::Parameter("cross-validation result has no importances".into())
            })
        })
        .collect::<Result<_>>()?;
    let mut header = vec!["variable".to_string(), "mean_importance".into()];
    header.extend((0..per_fold.len()).map(|f| format!("fold_{}", f + 1)));
    let rows: Vec<Vec<String>> = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let vals: Vec<f64> = per_fold.iter().map(|imp| imp[j]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let mut row = vec![name.clone(), fmt_f64(mean)];
            row.extend(vals.iter().map(|&v| fmt_f64(v)));
            row
        })
        .collect();
    csv_string(&header, &rows)
}

pub fn cv_summary(cv: &CvResult, config: &impl Serialize) -> Value {
    json!({
        "model": cv.model,
        "mean_r2": num(cv.mean_r2),
        "rmse": num(cv.rmse),
        "prestandardized": cv.prestandardized,
        "folds": cv.folds.iter().map(|f| json!({
            "fold": f.fold, "n_train": f.n_train, "n_test": f.n_test,
            "r2": num(f.r2), "sse": num(f.sse),
        })).collect::<Vec<_>>(),
        "config": config,
    })
}

/// Rows for Table-3 style output: variable, Pearson and Spearman results.
pub type CorrelationRow = (String, CorrelationResult<f64>, CorrelationResult<f64>);

pub fn correlations_csv(rows: &[CorrelationRow]) -> Result<String> {
    let header: Vec<String> = [
        "variable",
        "pearson_r",
        "pearson_p",
        "spearman_rho",
        "spearman_p",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(v, p, s)| {
            vec![
                v.clone(),
                fmt_f64(p.coefficient),
                fmt_f64(p.p_value),
                fmt_f64(s.coefficient),
                fmt_f64(s.p_value),
            ]
        })
        .collect();
    csv_string(&header, &body)
}

/// Variable × round table of VIF values; blank once a variable is removed.
pub fn vif_report_csv(report: &VifReport) -> Result<String> {
    let mut header = vec!["variable".to_string()];
    header.extend((0..report.rounds.len()).map(|r| format!("round_{r}")));
    header.extend(["removed_in_round".to_string(), "reason".into()]);
    let rows: Vec<Vec<String>> = report.rounds[0]
        .values
        .keys()
        .map(|name| {
            let mut row = vec![name.clone()];
            for round in &report.rounds {
                row.push(
                    round
                        .values
                        .get(name)
                        .map(|&v| fmt_f64(v))
                        .unwrap_or_default(),
                );
            }
            match report.removals.iter().find(|r| &r.variable == name) {
                Some(r) => {
                    row.push(r.round.to_string());
                    row.push(format!("{:?}", r.reason).to_lowercase());
                }
                None => row.extend([String::new(), String::new()]),
            }
            row
        })
        .collect();
    csv_string(&header, &rows)
}

fn predicted_vs_observed_csv(exp: &Experiment) -> Result<String> {
    let header: Vec<String> = ["condition", "cbg_id", "observed", "ols", "gwr", "rf", "mlp"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (label, run) in [("baseline", &exp.baseline), ("test", &exp.test)] {
        for (i, id) in run.data.features.row_ids.iter().enumerate() {
            rows.push(vec![
                label.to_string(),
                id.clone(),
                fmt_f64(run.data.target[i]),
                fmt_f64(run.ols.fitted[i]),
                fmt_f64(run.gwr.local_pred[i]),
                fmt_f64(run.rf.predictions[i]),
                fmt_f64(run.mlp.predictions[i]),
            ]);
        }
    }
    csv_string(&header, &rows)
}

/// Writes the experiment report set into `out_dir` and returns the paths.
pub fn export_report(
    exp: &Experiment,
    cbgs: &CbgTable,
    rates: &RateTable,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let ids = &exp.test.data.features.row_ids;
    let mut layers: Vec<(String, Vec<f64>)> = Vec::new();
    for (prefix, run) in [("baseline_", &exp.baseline), ("", &exp.test)] {
        layers.push((format!("{prefix}ols_resid"), run.ols.residuals.clone()));
        layers.push((
            format!("{prefix}ols_std_resid"),
            standardized_residuals(&run.ols.residuals)?,
        ));
        layers.push((format!("{prefix}gwr_resid"), run.gwr.residuals.clone()));
        layers.push((
            format!("{prefix}gwr_std_resid"),
            standardized_residuals(&run.gwr.residuals)?,
        ));
    }
    let mut summaries = BTreeMap::new();
    for (label, run) in [("baseline", &exp.baseline), ("test", &exp.test)] {
        summaries.insert(label, gwr_summary(&run.gwr, run.bandwidth.as_ref())?);
    }
    let files = [
        ("comparison.json", json_string(&exp.report)?),
        ("rates.csv", rates_csv(rates)?),
        ("rates.geojson", json_string(&rates_geojson(cbgs, rates)?)?),
        (
            "gwr_local.geojson",
            json_string(&gwr_local_geojson(cbgs, ids, &exp.test.gwr)?)?,
        ),
        ("gwr_summary.json", json_string(&summaries)?),
        (
            "residuals.geojson",
            json_string(&layers_geojson(cbgs, ids, &layers)?)?,
        ),
        ("predicted_vs_observed.csv", predicted_vs_observed_csv(exp)?),
        (
            "rf_importance.csv",
            rf_importance_csv(&exp.test.data.features.names(), &exp.test.rf)?,
        ),
    ];
    files
        .iter()
        .map(|(name, body)| write_file(out_dir, name, body))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        assert_eq!(fmt_f64(0.5), "0.5");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(5.0), "5");
    }

    #[test]
    fn unwritable_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, "x").unwrap();
        let err = write_file(&file.join("sub"), "a.txt", "y").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
