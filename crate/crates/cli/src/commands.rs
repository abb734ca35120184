use std::path::Path;

use dvscope::diagnostics::{morans_i, pearson, spearman, VifReport};
use dvscope::eval::export::{
    correlations_csv, cv_summary, export_report, gwr_local_geojson, gwr_summary, json_string,
    ols_fit_csv, ols_summary, rates_csv, rates_geojson, rf_importance_csv, vif_report_csv,
    write_file, CorrelationRow,
};
use dvscope::eval::{
    calibrate_gwr, cross_validate, kfold_split, row_points, row_weights, run_experiment, CvResult,
    ModelSpec,
};
use dvscope::ingest::{link_report, OutletType};
use dvscope::linmod::{ols_fit, GwrProblem};
use dvscope::mlmod::{default_n_tree_grid, mlp_train, rf_grid_search, rf_train, MTry, RfConfig};
use dvscope::pipeline::{derive_from, load_dataset, screen_variables, Derived};
use dvscope::rates::{assemble_features, ModelData};
use dvscope::rng::derive_seed;
use dvscope::synth::{
    file_sha256, generate, scenario_heterogeneous, scenario_paper_like, SynthConfig, TRUTH_FILE,
};
use serde_json::{json, Value};

use crate::config::{read_json_file, CommonArgs, PipelineConfig, Resolved, RESOLVED_CONFIG};
use crate::{Condition, CvModel, Failure, Preset, SynthArgs};

type Outcome = Result<(), Failure>;

fn write(dir: &Path, name: &str, body: &str) -> Outcome {
    let path = write_file(dir, name, body)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Outcome {
    write(dir, name, &json_string(value)?)
}

fn resolve(args: &CommonArgs) -> Result<Resolved, Failure> {
    let r = PipelineConfig::load(args)?.resolve()?;
    write_json(&r.out, RESOLVED_CONFIG, &r.config)?;
    Ok(r)
}

fn load_and_derive(r: &Resolved) -> Result<Derived, Failure> {
    let opts = r.derive_options();
    let (dataset, link) = load_dataset(&r.inputs, &opts)?;
    let d = derive_from(dataset, link, &opts)?;
    log::info!(
        "{} CBGs with rates, {} excluded, {} DV incidents assigned",
        d.rates.rows.len(),
        d.rates.excluded.len(),
        d.assignment.assigned()
    );
    if d.rates.rows.is_empty() {
        return Err(Failure::validation(
            "no CBG has both a DV rate and visit rates",
        ));
    }
    Ok(d)
}

/// Baseline variables: the configured list, or the VIF-retained candidates.
fn baseline_variables(
    r: &Resolved,
    d: &Derived,
) -> Result<(Vec<String>, Option<VifReport>), Failure> {
    if let Some(v) = &r.config.variables {
        return Ok((v.clone(), None));
    }
    let report = screen_variables(
        &d.dataset.cbgs,
        &d.rates,
        &r.config.candidates,
        &r.config.vif,
    )?;
    log::info!(
        "VIF screening kept {} of {} variables",
        report.retained.len(),
        r.config.candidates.len()
    );
    Ok((report.retained.clone(), Some(report)))
}

fn model_data(r: &Resolved, d: &Derived, condition: Condition) -> Result<ModelData, Failure> {
    let (vars, _) = baseline_variables(r, d)?;
    let data = assemble_features(
        &d.dataset.cbgs,
        &d.rates,
        condition == Condition::Test,
        &vars,
    )?;
    log::info!(
        "{} condition: {} variables, {} units",
        condition_label(condition),
        data.features.ncols(),
        data.features.nrows()
    );
    Ok(data)
}

fn condition_label(c: Condition) -> &'static str {
    match c {
        Condition::Baseline => "baseline",
        Condition::Test => "test",
    }
}

fn ground_truth_hash(r: &Resolved) -> Result<Option<String>, Failure> {
    let path = r.inputs.cbgs.with_file_name(TRUTH_FILE);
    if path.is_file() {
        Ok(Some(file_sha256(&path)?))
    } else {
        Ok(None)
    }
}

pub fn synth(a: &SynthArgs) -> Outcome {
    let mut config = match (&a.preset, &a.config) {
        (Some(p), None) => {
            let seed = a
                .seed
                .ok_or_else(|| Failure::validation("synth needs --seed with --preset"))?;
            match p {
                Preset::PaperLike => scenario_paper_like(seed),
                Preset::Heterogeneous => scenario_heterogeneous(seed),
            }
        }
        (None, Some(path)) => {
            let value: Value = read_json_file(path, "synth config")?;
            if a.seed.is_none() && value.get("seed").is_none() {
                return Err(Failure::validation(format!(
                    "synth config {} has no seed: add one or pass --seed",
                    path.display()
                )));
            }
            serde_json::from_value::<SynthConfig>(value).map_err(|e| {
                Failure::validation(format!("synth config {} is not valid: {e}", path.display()))
            })?
        }
        _ => {
            return Err(Failure::validation(
                "synth needs exactly one of --preset or --config",
            ))
        }
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let out = generate(&config, &a.out)?;
    for f in &out.files {
        log::info!("wrote {}", f.display());
    }
    log::info!("ground truth sha256 {}", out.truth_sha256);
    Ok(())
}

pub fn ingest_check(args: &CommonArgs) -> Outcome {
    let r = resolve(args)?;
    let opts = r.derive_options();
    let dataset = dvscope::ingest::Dataset::load(&r.inputs, &opts.attributes)?;
    let link = link_report(&dataset.cbgs, &dataset.pois.table, &dataset.visits.table);
    let loaded = |rows: usize, rejected: &[dvscope::ingest::RowRejection]| json!({ "input_rows": rows, "rejected": rejected });
    let report = json!({
        "cbgs": dataset.cbgs.len(),
        "pois": loaded(dataset.pois.input_rows, &dataset.pois.rejected),
        "visits": loaded(dataset.visits.input_rows, &dataset.visits.rejected),
        "incidents": loaded(dataset.incidents.input_rows, &dataset.incidents.rejected),
        "link": link,
    });
    write_json(&r.out, "ingest_report.json", &report)?;
    for (name, rejected) in [
        ("pois", &dataset.pois.rejected),
        ("visits", &dataset.visits.rejected),
        ("incidents", &dataset.incidents.rejected),
    ] {
        if !rejected.is_empty() {
            log::warn!("{name}: {} rows rejected", rejected.len());
        }
    }
    dvscope::ingest::link(&dataset.cbgs, &dataset.pois.table, &dataset.visits.table)?;
    log::info!("inputs are consistent");
    Ok(())
}

pub fn derive(args: &CommonArgs) -> Outcome {
    let r = resolve(args)?;
    let d = load_and_derive(&r)?;
    write(&r.out, "rates.csv", &rates_csv(&d.rates)?)?;
    write_json(
        &r.out,
        "rates.geojson",
        &rates_geojson(&d.dataset.cbgs, &d.rates)?,
    )?;
    let outlets: serde_json::Map<String, Value> = d
        .alcohol_pois
        .count_by_outlet()
        .into_iter()
        .map(|(t, n)| (t.key().to_string(), json!(n)))
        .collect();
    let report = json!({
        "cbgs": d.dataset.cbgs.len(),
        "rows": d.rates.rows.len(),
        "excluded": d.rates.excluded,
        "dv_filter": d.dv_report,
        "unassigned_incidents": d.assignment.unassigned,
        "alcohol_pois": outlets,
    });
    write_json(&r.out, "derive_report.json", &report)
}

pub fn diagnose(args: &CommonArgs) -> Outcome {
    let r = resolve(args)?;
    let d = load_and_derive(&r)?;
    let cbgs = &d.dataset.cbgs;
    let data = assemble_features(cbgs, &d.rates, true, &r.config.candidates)?;
    let y = &data.target;
    let rows: Vec<CorrelationRow> = data
        .features
        .names()
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let x = data.features.raw.column(j);
            Ok((name, pearson(&x, y)?, spearman(&x, y)?))
        })
        .collect::<Result<_, dvscope::Error>>()?;
    write(&r.out, "correlations.csv", &correlations_csv(&rows)?)?;

    let ids: Vec<String> = d.rates.rows.iter().map(|row| row.cbg_id.clone()).collect();
    let w = row_weights(cbgs, &ids, r.config.weights)?;
    let seed = derive_seed(r.seed, 4);
    let mut moran = serde_json::Map::new();
    let dv: Vec<f64> = d.rates.rows.iter().map(|row| row.dv_rate).collect();
    moran.insert(
        "dv_rate".into(),
        json!(morans_i(&dv, &w, r.config.moran_permutations, seed)?),
    );
    for t in OutletType::ALL {
        let v: Vec<f64> = d.rates.rows.iter().map(|row| row.visit_rate(t)).collect();
        let m = morans_i(&v, &w, r.config.moran_permutations, seed)?;
        moran.insert(t.rate_column(), json!(m));
    }
    write_json(&r.out, "moran.json", &moran)?;

    let vif = screen_variables(cbgs, &d.rates, &r.config.candidates, &r.config.vif)?;
    log::info!("VIF screening kept {:?}", vif.retained);
    write(&r.out, "vif_report.csv", &vif_report_csv(&vif)?)?;
    write_json(&r.out, "vif_report.json", &vif)
}

pub fn fit_ols(args: &CommonArgs, condition: Condition) -> Outcome {
    let r = resolve(args)?;
    let d = load_and_derive(&r)?;
    let data = model_data(&r, &d, condition)?;
    let fit = ols_fit(&data.features.values, &data.target, &data.features.names())?;
    log::info!(
        "OLS R2 {:.4}, adjusted {:.4}, AIC {:.3}",
        fit.r2,
        fit.adj_r2,
        fit.aic
    );
    write(&r.out, "ols_fit.csv", &ols_fit_csv(&fit)?)?;
    write_json(&r.out, "ols_summary.json", &ols_summary(&fit))?;
    let model = json!({
        "format_version": dvscope::FORMAT_VERSION,
        "kind": "ols",
        "condition": condition_label(condition),
        "scaler": data.features.scaler,
        "fit": fit,
    });
    write(
        &r.out,
        "ols_model.json",
        &serde_json::to_string(&model).expect("serializable"),
    )
}

pub fn fit_gwr(args: &CommonArgs, condition: Condition) -> Outcome {
    let r = resolve(args)?;
    let d = load_and_derive(&r)?;
    let data = model_data(&r, &d, condition)?;
    let ids = &data.features.row_ids;
    let points = row_points(&d.dataset.cbgs, ids)?;
    let problem = GwrProblem::new(
        &data.features.values,
        &data.target,
        &points,
        &data.features.names(),
    )?
    .with_labels(ids.clone());
    let (fit, search) = calibrate_gwr(&problem, &r.config.gwr)?;
    log::info!(
        "GWR R2 {:.4}, adjusted {:.4}, AICc {:.3}",
        fit.r2,
        fit.adj_r2,
        fit.aicc
    );
    write_json(
        &r.out,
        "gwr_local.geojson",
        &gwr_local_geojson(&d.dataset.cbgs, ids, &fit)?,
    )?;
    write_json(
        &r.out,
        "gwr_summary.json",
        &gwr_summary(&fit, search.as_ref())?,
    )?;
    let model = json!({
        "format_version": dvscope::FORMAT_VERSION,
        "kind": "gwr",
        "condition": condition_label(condition),
        "scaler": data.features.scaler,
        "fit": fit,
    });
    write(
        &r.out,
        "gwr_model.json",
        &serde_json::to_string(&model).expect("serializable"),
    )
}

fn run_cv(r: &Resolved, data: &ModelData, spec: &ModelSpec) -> Result<CvResult, Failure> {
    let folds = kfold_split(data.features.nrows(), r.config.cv.folds, r.seed)?;
    let cv = cross_validate(
        spec,
        &data.features,
        &data.target,
        &folds,
        r.config.cv.prestandardized,
    )?;
    log::info!(
        "{} cross-validated R2 {:.4}, RMSE {:.4}",
        spec.name(),
        cv.mean_r2,
        cv.rmse
    );
    Ok(cv)
}

pub fn fit_rf(args: &CommonArgs, condition: Condition, grid: bool) -> Outcome {
    let r = resolve(args)?;
    let d = load_and_derive(&r)?;
    let data = model_data(&r, &d, condition)?;
    let mut rf = r.config.rf.clone();
    if grid {
        let folds = kfold_split(
            data.features.nrows(),
            r.config.cv.folds,
            derive_seed(r.seed, 6),
        )?;
        let search = rf_grid_search(
            &data.features.values,
            &data.target,
            &default_n_tree_grid(),
            &MTry::ALL,
            &folds,
            &rf,
        )?;
        let mut csv = String::from("n_tree,m_try,mean_r2\n");
        for c in &search.cells {
            csv.push_str(&format!("{},{},{}\n", c.n_tree, c.m_try.label(), c.mean_r2));
        }
        write(&r.out, "rf_grid.csv", &csv)?;
        log::info!(
            "grid search picked {} trees, m_try {} (R2 {:.4})",
            search.best.n_tree,
            search.best.m_try.label(),
            search.best_r2
        );
        rf = RfConfig {
            seed: rf.seed,
            ..search.best
        };
    }
    let cv = run_cv(&r, &data, &ModelSpec::Rf(rf.clone()))?;
    write(
        &r.out,
        "rf_importance.csv",
        &rf_importance_csv(&data.features.names(), &cv)?,
    )?;
    write_json(&r.out, "rf_summary.json", &cv_summary(&cv, &rf))?;
    let model = rf_train(&data.features.values, &data.target, &rf)?;
    write(&r.out, "rf_model.json", &model.to_json()?)
}

pub fn fit_mlp(args: &CommonArgs, condition: Condition) -> Outcome {
    let r = resolve(args)?;
    let d = load_and_derive(&r)?;
    let data = model_data(&r, &d, condition)?;
    let mlp = &r.config.mlp;
    let cv = run_cv(&r, &data, &ModelSpec::Mlp(mlp.clone()))?;
    write_json(&r.out, "mlp_summary.json", &cv_summary(&cv, mlp))?;
    let model = mlp_train(&data.features.values, &data.target, mlp)?;
    write(&r.out, "mlp_model.json", &model.to_json()?)
}

pub fn cv(args: &CommonArgs, model: CvModel, condition: Condition) -> Outcome {
    let r = resolve(args)?;
    let d = load_and_derive(&r)?;
    let data = model_data(&r, &d, condition)?;
    let mut specs = Vec::new();
    if matches!(model, CvModel::Rf | CvModel::All) {
        specs.push(ModelSpec::Rf(r.config.rf.clone()));
    }
    if matches!(model, CvModel::Mlp | CvModel::All) {
        specs.push(ModelSpec::Mlp(r.config.mlp.clone()));
    }
    let mut summary = serde_json::Map::new();
    for spec in &specs {
        let cv = run_cv(&r, &data, spec)?;
        let entry = match spec {
            ModelSpec::Rf(c) => cv_summary(&cv, c),
            ModelSpec::Mlp(c) => cv_summary(&cv, c),
        };
        summary.insert(spec.name().into(), entry);
    }
    let report = json!({
        "condition": condition_label(condition),
        "seed": r.seed,
        "variables": data.features.names(),
        "models": summary,
    });
    write_json(&r.out, "cv_summary.json", &report)
}

fn run_and_export(r: &Resolved, out: &Path) -> Outcome {
    let d = load_and_derive(r)?;
    let (vars, vif) = baseline_variables(r, &d)?;
    let exp = run_experiment(
        &d.dataset.cbgs,
        &d.rates,
        &vars,
        &r.experiment_config(),
        ground_truth_hash(r)?,
    )?;
    for (name, m) in &exp.report.models {
        log::info!(
            "{name}: R2 {:.4} -> {:.4} (delta {:+.4})",
            m.baseline.r2,
            m.test.r2,
            m.delta.r2
        );
    }
    for f in export_report(&exp, &d.dataset.cbgs, &d.rates, out)? {
        log::info!("wrote {}", f.display());
    }
    if let Some(vif) = vif {
        write(out, "vif_report.csv", &vif_report_csv(&vif)?)?;
    }
    Ok(())
}

pub fn experiment(args: &CommonArgs) -> Outcome {
    let r = resolve(args)?;
    run_and_export(&r, &r.out)
}

pub fn export(from: &Path, out: &Path) -> Outcome {
    let config: PipelineConfig = read_json_file(&from.join(RESOLVED_CONFIG), "resolved config")?;
    let mut r = config.resolve()?;
    r.config.out = Some(out.to_path_buf());
    r.out = out.to_path_buf();
    write_json(out, RESOLVED_CONFIG, &r.config)?;
    log::info!("rebuilding reports of {} (seed {})", from.display(), r.seed);
    run_and_export(&r, out)
}
