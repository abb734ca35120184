//! Pipeline configuration: a JSON document, overridden by command-line flags,
//! with defaults for everything except the seed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use clap::Args;
use dvscope::diagnostics::VifOptions;
use dvscope::eval::{ExperimentConfig, GwrConfig};
use dvscope::geo::WeightsScheme;
use dvscope::ingest::{DvFilter, InputPaths, DEFAULT_ALCOHOL_NAICS};
use dvscope::mlmod::{MlpConfig, RfConfig};
use dvscope::pipeline::{default_vif_options, socio_variables, DeriveOptions};
use dvscope::rates::RateOptions;
use dvscope::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const DEFAULT_OUT: &str = "dvscope_out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Directory holding files with the conventional names.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub cbgs: Option<PathBuf>,
    pub pois: Option<PathBuf>,
    pub visits: Option<PathBuf>,
    pub incidents: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSettings {
    pub folds: usize,
    pub prestandardized: bool,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self {
            folds: 10,
            prestandardized: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub inputs: Inputs,
    pub out: Option<PathBuf>,
    pub alcohol_naics: BTreeSet<u32>,
    pub dv_filter: DvFilter,
    pub min_pop: u64,
    pub min_devices: u64,
    pub weights: WeightsScheme,
    pub moran_permutations: usize,
    pub vif: VifOptions,
    /// Socioeconomic variables screened by VIF.
    pub candidates: Vec<String>,
    /// Baseline variables; when absent, the VIF-retained candidates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variables: Option<Vec<String>>,
    pub cv: CvSettings,
    pub gwr: GwrConfig,
    pub rf: RfConfig,
    pub mlp: MlpConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let rates = RateOptions::default();
        Self {
            seed: None,
            inputs: Inputs::default(),
            out: None,
            alcohol_naics: DEFAULT_ALCOHOL_NAICS.into_iter().collect(),
            dv_filter: DvFilter::default(),
            min_pop: rates.min_pop,
            min_devices: rates.min_devices,
            weights: WeightsScheme::Queen,
            moran_permutations: dvscope::diagnostics::DEFAULT_PERMUTATIONS,
            vif: default_vif_options(),
            candidates: socio_variables(),
            variables: None,
            cv: CvSettings::default(),
            gwr: GwrConfig::default(),
            rf: RfConfig::default(),
            mlp: MlpConfig::default(),
        }
    }
}

/// Flags shared by the pipeline commands. Each one overrides the matching
/// config field.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Pipeline config (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory with cbgs.geojson, pois.csv, visits.csv, incidents.csv.
    #[arg(long)]
    pub input_dir: Option<PathBuf>,
    #[arg(long)]
    pub cbgs: Option<PathBuf>,
    #[arg(long)]
    pub pois: Option<PathBuf>,
    #[arg(long)]
    pub visits: Option<PathBuf>,
    #[arg(long)]
    pub incidents: Option<PathBuf>,
    #[arg(long)]
    pub min_pop: Option<u64>,
    #[arg(long)]
    pub min_devices: Option<u64>,
    /// Cross-validation fold count.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Standardize on all rows before splitting instead of per training fold.
    #[arg(long)]
    pub prestandardized: bool,
    /// Moran permutation replicates.
    #[arg(long)]
    pub permutations: Option<usize>,
    #[arg(long)]
    pub vif_threshold: Option<f64>,
    /// Comma-separated baseline variables (skips VIF selection).
    #[arg(long, value_delimiter = ',')]
    pub variables: Option<Vec<String>>,
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::validation(msg)
}

pub fn read_json_file<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::io(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| invalid(format!("{what} {} is not valid: {e}", path.display())))
}

/// Everything a command needs, with no optional fields left.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub seed: u64,
    pub inputs: InputPaths,
    pub out: PathBuf,
    pub config: PipelineConfig,
}

impl PipelineConfig {
    pub fn load(args: &CommonArgs) -> Result<Self, Failure> {
        let mut cfg: PipelineConfig = match &args.config {
            Some(p) => read_json_file(p, "config")?,
            None => PipelineConfig::default(),
        };
        if let Some(s) = args.seed {
            cfg.seed = Some(s);
        }
        if let Some(o) = &args.out {
            cfg.out = Some(o.clone());
        }
        if let Some(d) = &args.input_dir {
            cfg.inputs = Inputs {
                dir: Some(d.clone()),
                ..Inputs::default()
            };
        }
        let set = |slot: &mut Option<PathBuf>, v: &Option<PathBuf>| {
            if let Some(v) = v {
                *slot = Some(v.clone());
            }
        };
        set(&mut cfg.inputs.cbgs, &args.cbgs);
        set(&mut cfg.inputs.pois, &args.pois);
        set(&mut cfg.inputs.visits, &args.visits);
        set(&mut cfg.inputs.incidents, &args.incidents);
        if let Some(v) = args.min_pop {
            cfg.min_pop = v;
        }
        if let Some(v) = args.min_devices {
            cfg.min_devices = v;
        }
        if let Some(v) = args.folds {
            cfg.cv.folds = v;
        }
        if args.prestandardized {
            cfg.cv.prestandardized = true;
        }
        if let Some(v) = args.permutations {
            cfg.moran_permutations = v;
        }
        if let Some(v) = args.vif_threshold {
            cfg.vif.threshold = v;
        }
        if let Some(v) = &args.variables {
            cfg.variables = Some(v.clone());
        }
        Ok(cfg)
    }

    pub fn resolve(mut self) -> Result<Resolved, Failure> {
        let seed = self.seed.ok_or_else(|| {
            invalid("a seed is required: pass --seed or set `seed` in the config")
        })?;
        let dir = self.inputs.dir.take();
        let pick = |explicit: &Option<PathBuf>, name: &str, default: PathBuf| {
            explicit
                .clone()
                .or(dir.as_ref().map(|_| default))
                .ok_or_else(|| {
                    invalid(format!(
                        "no path for the {name} file: pass --input-dir or --{name}"
                    ))
                })
        };
        let conventional = InputPaths::in_dir(dir.clone().unwrap_or_default());
        let inputs = InputPaths {
            cbgs: pick(&self.inputs.cbgs, "cbgs", conventional.cbgs)?,
            pois: pick(&self.inputs.pois, "pois", conventional.pois)?,
            visits: pick(&self.inputs.visits, "visits", conventional.visits)?,
            incidents: pick(&self.inputs.incidents, "incidents", conventional.incidents)?,
        };
        let out = self
            .out
            .clone()
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        if self.cv.folds < 2 {
            return Err(invalid(format!(
                "cv.folds must be at least 2, got {}",
                self.cv.folds
            )));
        }
        self.seed = Some(seed);
        self.inputs = Inputs {
            dir: None,
            cbgs: Some(inputs.cbgs.clone()),
            pois: Some(inputs.pois.clone()),
            visits: Some(inputs.visits.clone()),
            incidents: Some(inputs.incidents.clone()),
        };
        self.out = Some(out.clone());
        // Learner seeds always derive from the master seed.
        self.rf.seed = derive_seed(seed, 1);
        self.mlp.seed = derive_seed(seed, 2);
        Ok(Resolved {
            seed,
            inputs,
            out,
            config: self,
        })
    }
}

impl Resolved {
    pub fn derive_options(&self) -> DeriveOptions {
        DeriveOptions {
            alcohol_naics: self.config.alcohol_naics.clone(),
            dv_filter: self.config.dv_filter.clone(),
            rates: RateOptions {
                min_pop: self.config.min_pop,
                min_devices: self.config.min_devices,
            },
            ..DeriveOptions::default()
        }
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            cv_folds: self.config.cv.folds,
            prestandardized: self.config.cv.prestandardized,
            rf: self.config.rf.clone(),
            mlp: self.config.mlp.clone(),
            gwr: self.config.gwr.clone(),
            weights: self.config.weights,
            moran_permutations: self.config.moran_permutations,
        }
    }
}
