use dvscope::eval::export::{export_report, rates_csv};
use dvscope::eval::{run_experiment, ExperimentConfig};
use dvscope::ingest::{InputPaths, OutletType};
use dvscope::mlmod::{MTry, MlpConfig, RfConfig};
use dvscope::pipeline::{
    default_vif_options, derive, screen_variables, socio_variables, DeriveOptions,
};
use dvscope::synth::{generate, scenario_paper_like};
use serde_json::Value;

fn quick_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        cv_folds: 5,
        rf: RfConfig {
            n_tree: 20,
            m_try: MTry::Third,
            ..RfConfig::default()
        },
        mlp: MlpConfig {
            layers: vec![16, 8],
            dropout: vec![0.1, 0.0],
            epochs: 20,
            ..MlpConfig::default()
        },
        moran_permutations: 99,
        ..ExperimentConfig::default()
    }
}

#[test]
fn experiment_exports_are_consistent_and_repeatable() {
    let mut synth = scenario_paper_like(21);
    synth.rows = 9;
    synth.cols = 9;
    let input = tempfile::tempdir().unwrap();
    let gen = generate(&synth, input.path()).unwrap();
    let d = derive(&InputPaths::in_dir(input.path()), &DeriveOptions::default()).unwrap();
    let cbgs = &d.dataset.cbgs;
    let vif = screen_variables(cbgs, &d.rates, &socio_variables(), &default_vif_options()).unwrap();
    let config = quick_config(4);
    let exp = run_experiment(
        cbgs,
        &d.rates,
        &vif.retained,
        &config,
        Some(gen.truth_sha256.clone()),
    )
    .unwrap();

    let out = tempfile::tempdir().unwrap();
    let files = export_report(&exp, cbgs, &d.rates, out.path()).unwrap();
    for name in [
        "comparison.json",
        "rates.geojson",
        "gwr_local.geojson",
        "residuals.geojson",
        "predicted_vs_observed.csv",
        "rates.csv",
    ] {
        assert!(files.contains(&out.path().join(name)), "{name} missing");
    }

    let cmp: Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("comparison.json")).unwrap())
            .unwrap();
    for m in ["ols", "gwr", "rf", "mlp"] {
        for cond in ["baseline", "test"] {
            assert!(cmp["models"][m][cond]["r2"].is_number(), "{m}/{cond}");
            assert!(cmp["models"][m][cond]["rmse"].is_number());
        }
    }
    assert!(cmp["models"]["ols"]["test"]["adj_r2"].is_number());
    assert!(cmp["models"]["ols"]["test"]["aic"].is_number());
    assert_eq!(cmp["seed"], 4);
    assert_eq!(cmp["ground_truth_sha256"], gen.truth_sha256.as_str());
    let test_vars = cmp["variables"]["test"].as_array().unwrap();
    for t in OutletType::ALL {
        assert!(test_vars.iter().any(|v| v == t.rate_column().as_str()));
    }
    assert_eq!(
        cmp["variables"]["baseline"].as_array().unwrap().len() + 4,
        test_vars.len()
    );

    // rates.geojson carries the same numbers as rates.csv.
    let geo: Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("rates.geojson")).unwrap())
            .unwrap();
    let csv_text = std::fs::read_to_string(out.path().join("rates.csv")).unwrap();
    assert_eq!(csv_text, rates_csv(&d.rates).unwrap());
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let header = reader.headers().unwrap().clone();
    let features = geo["features"].as_array().unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), features.len());
    for (row, f) in rows.iter().zip(features) {
        for (h, v) in header.iter().zip(row.iter()) {
            let p = &f["properties"][h];
            if let Some(x) = p.as_f64() {
                assert_eq!(x, v.parse::<f64>().unwrap(), "{h}");
            } else {
                assert_eq!(p.as_str().unwrap(), v, "{h}");
            }
        }
    }

    // Re-export without refitting is byte-identical.
    let again = tempfile::tempdir().unwrap();
    export_report(&exp, cbgs, &d.rates, again.path()).unwrap();
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(
            std::fs::read(f).unwrap(),
            std::fs::read(again.path().join(name)).unwrap()
        );
    }

    // Refit from scratch gives the same report.
    let exp2 = run_experiment(
        cbgs,
        &d.rates,
        &vif.retained,
        &config,
        Some(gen.truth_sha256),
    )
    .unwrap();
    assert_eq!(
        serde_json::to_string(&exp.report).unwrap(),
        serde_json::to_string(&exp2.report).unwrap()
    );
}
