//! Synthetic cities with known ground truth.
//!
//! A rectangular grid of square CBGs near the equator gets populations,
//! device counts, spatially smooth socioeconomic attributes and visit rates.
//! The DV rate of each unit is a (possibly spatially varying) linear function
//! of the standardized model columns plus noise, and incident, POI and visit
//! records are then laid out so that the ingest pipeline recovers the
//! realized rates exactly.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geo::Polygon;
use crate::ingest::{planar_area_km2, OutletType};
use crate::rates::{
    category_of, default_composition_groups, dv_rate_value, visit_rate_value, POPULATION_DENSITY,
    SOCIO_VARIABLES,
};
use crate::rng;

pub const CBGS_FILE: &str = "cbgs.geojson";
pub const POIS_FILE: &str = "pois.csv";
pub const VISITS_FILE: &str = "visits.csv";
pub const INCIDENTS_FILE: &str = "incidents.csv";
pub const CONFIG_FILE: &str = "synth_config.json";
pub const TRUTH_FILE: &str = "ground_truth.json";

/// A coefficient surface over the unit square of normalized grid coordinates
/// (`u` grows eastward, `v` northward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefField {
    Constant {
        value: f64,
    },
    /// `lo` on the trailing edge, `hi` on the leading edge along `direction`.
    LinearGradient {
        direction: [f64; 2],
        lo: f64,
        hi: f64,
    },
    /// `lo` at `center`, `hi` at the farthest corner of the square.
    Radial {
        center: [f64; 2],
        lo: f64,
        hi: f64,
    },
}

impl CoefField {
    pub fn constant(value: f64) -> Self {
        CoefField::Constant { value }
    }

    pub fn at(&self, u: f64, v: f64) -> f64 {
        match *self {
            CoefField::Constant { value } => value,
            CoefField::LinearGradient { direction, lo, hi } => {
                let norm = direction[0].hypot(direction[1]);
                let (dx, dy) = (direction[0] / norm, direction[1] / norm);
                let min = dx.min(0.0) + dy.min(0.0);
                let max = dx.max(0.0) + dy.max(0.0);
                let t = (u * dx + v * dy - min) / (max - min);
                lo + t * (hi - lo)
            }
            CoefField::Radial { center, lo, hi } => {
                let far = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
                    .iter()
                    .map(|c| (c[0] - center[0]).hypot(c[1] - center[1]))
                    .fold(0.0, f64::max);
                let r = (u - center[0]).hypot(v - center[1]) / far;
                lo + r * (hi - lo)
            }
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            CoefField::Constant { value } => value.is_finite(),
            CoefField::LinearGradient { direction, lo, hi } => {
                lo.is_finite()
                    && hi.is_finite()
                    && direction.iter().all(|d| d.is_finite())
                    && direction[0].hypot(direction[1]) > 0.0
            }
            CoefField::Radial { center, lo, hi } => {
                lo.is_finite() && hi.is_finite() && center.iter().all(|c| c.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "coefficient field for `{name}` is invalid"
            )))
        }
    }
}

/// How incident counts are drawn from the intended rate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// `round(rate · population / 1000)`.
    #[default]
    Rounded,
    /// Poisson with mean `rate · population / 1000`.
    Poisson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub rows: usize,
    pub cols: usize,
    /// Side of a grid cell in degrees.
    pub cell_deg: f64,
    /// South-west corner, `[lon, lat]`.
    pub origin: [f64; 2],
    /// Inclusive population range.
    pub population: [u64; 2],
    /// Range of the device count as a fraction of population.
    pub device_fraction: [f64; 2],
    pub pois_per_type: usize,
    /// Mean visit rate per outlet type, in [`OutletType::ALL`] order.
    pub visit_rate_mean: [f64; 4],
    /// Log-scale spread of the visit rates.
    pub visit_rate_spread: f64,
    /// Share in [0, 1] of each type's log-scale variation that follows a
    /// spatially smooth field rather than white noise.
    pub visit_rate_smooth: [f64; 4],
    /// Width of the smooth bumps behind the socioeconomic fields, in units of
    /// the grid side.
    pub smoothness: f64,
    pub intercept: CoefField,
    /// Effect of one standard deviation of each model column on the DV rate.
    /// Keys are socioeconomic variables or visit-rate columns (`liquor_store_vr`).
    pub coefficients: BTreeMap<String, CoefField>,
    pub noise_sd: f64,
    pub count_mode: CountMode,
    /// Extra records that the filters must drop, as a fraction of the DV
    /// incidents.
    pub decoy_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            rows: 20,
            cols: 20,
            cell_deg: 0.005,
            origin: [30.0, 1.0],
            population: [600, 3000],
            device_fraction: [0.06, 0.15],
            pois_per_type: 6,
            visit_rate_mean: [0.25, 0.35, 0.12, 0.06],
            visit_rate_spread: 0.5,
            visit_rate_smooth: [0.0; 4],
            smoothness: 0.25,
            intercept: CoefField::constant(12.0),
            coefficients: BTreeMap::new(),
            noise_sd: 1.0,
            count_mode: CountMode::Rounded,
            decoy_fraction: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.rows * self.cols < 25 {
            return bad(format!(
                "grid {}x{} has fewer than 25 cells",
                self.rows, self.cols
            ));
        }
        if self.rows > 999 || self.cols > 999 {
            return bad("grid sides are limited to 999 cells".into());
        }
        if !(self.cell_deg > 0.0 && self.cell_deg.is_finite()) {
            return bad(format!("cell_deg must be positive, got {}", self.cell_deg));
        }
        if !self.origin.iter().all(|c| c.is_finite())
            || self.origin[1].abs() + self.rows as f64 * self.cell_deg > 60.0
        {
            return bad("grid must stay within 60 degrees of the equator".into());
        }
        let [plo, phi] = self.population;
        if plo == 0 || plo > phi {
            return bad(format!("population range [{plo}, {phi}] is invalid"));
        }
        let [flo, fhi] = self.device_fraction;
        if !(flo > 0.0 && flo <= fhi && fhi <= 1.0) {
            return bad(format!("device fraction range [{flo}, {fhi}] is invalid"));
        }
        if self.pois_per_type == 0 {
            return bad("pois_per_type must be at least 1".into());
        }
        if !self
            .visit_rate_mean
            .iter()
            .all(|m| *m > 0.0 && m.is_finite())
        {
            return bad("visit rate means must be positive".into());
        }
        if !(self.visit_rate_spread >= 0.0 && self.visit_rate_spread.is_finite()) {
            return bad("visit_rate_spread must be non-negative".into());
        }
        if !self
            .visit_rate_smooth
            .iter()
            .all(|a| (0.0..=1.0).contains(a))
        {
            return bad("visit_rate_smooth entries must lie in [0, 1]".into());
        }
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return bad("smoothness must be positive".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!(
                "noise_sd must be non-negative, got {}",
                self.noise_sd
            ));
        }
        if !(0.0..=1.0).contains(&self.decoy_fraction) {
            return bad("decoy_fraction must lie in [0, 1]".into());
        }
        self.intercept.validate("intercept")?;
        for (name, field) in &self.coefficients {
            if category_of(name).is_none() {
                return bad(format!("`{name}` is not a model variable"));
            }
            field.validate(name)?;
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.rows * self.cols
    }
}

/// About 400 CBGs where liquor-store visits raise the DV rate, drinking-place
/// and brewery visits lower it, winery visits have no effect, and a handful of
/// spatially smooth socioeconomic confounders carry the rest of the signal.
pub fn scenario_paper_like(seed: u64) -> SynthConfig {
    let c = CoefField::constant;
    let coefficients = [
        ("liquor_store_vr", c(1.6)),
        ("drinking_place_vr", c(-1.1)),
        ("brewery_vr", c(-0.9)),
        ("winery_vr", c(0.0)),
        ("med_income", c(-1.0)),
        ("pct_unemployment", c(0.9)),
        ("pct_female_hh", c(1.0)),
        ("pct_renter_hh", c(0.5)),
    ];
    SynthConfig {
        seed,
        coefficients: coefficients
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        noise_sd: 1.5,
        ..SynthConfig::default()
    }
}

/// Coefficients that drift across the grid: the liquor-store effect falls
/// from west to east and the baseline rate rises from south to north.
/// Liquor-store visit rates are themselves spatially smooth, so a single
/// global fit leaves spatially clustered residuals.
pub fn scenario_heterogeneous(seed: u64) -> SynthConfig {
    let coefficients = [
        (
            "liquor_store_vr",
            CoefField::LinearGradient {
                direction: [-1.0, 0.0],
                lo: -1.5,
                hi: 3.5,
            },
        ),
        ("drinking_place_vr", CoefField::constant(-0.8)),
        ("med_income", CoefField::constant(-0.8)),
        ("pct_unemployment", CoefField::constant(0.8)),
    ];
    SynthConfig {
        seed,
        intercept: CoefField::LinearGradient {
            direction: [0.0, 1.0],
            lo: 10.0,
            hi: 14.0,
        },
        coefficients: coefficients
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        noise_sd: 1.2,
        visit_rate_smooth: [0.9, 0.0, 0.0, 0.0],
        ..SynthConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTruth {
    pub cbg_id: String,
    pub row: usize,
    pub col: usize,
    pub population: u64,
    pub device_count: u64,
    pub intercept: f64,
    /// Local coefficient per model column.
    pub beta: BTreeMap<String, f64>,
    /// Intercept plus the linear predictor, before noise.
    pub noiseless_rate: f64,
    /// After noise, clipped at 0. Counts are drawn from this rate.
    pub intended_rate: f64,
    pub incidents: u64,
    pub dv_rate: f64,
    pub intended_visit_rates: [f64; 4],
    pub visitors: [u64; 4],
    pub visit_rates: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format_version: String,
    pub config: SynthConfig,
    /// Population mean and standard deviation of each model column over all
    /// units, as used to build the linear predictor.
    pub scales: BTreeMap<String, ColumnScale>,
    /// Worst-case gap between the intended and recovered DV rate under
    /// rounded counts, `1000 / (2 · min population)`.
    pub dv_rate_bound: f64,
    /// Worst-case gap for visit rates, `1 / (2 · min devices)`.
    pub visit_rate_bound: f64,
    pub decoy_incidents: usize,
    pub units: Vec<UnitTruth>,
}

impl GroundTruth {
    pub fn unit(&self, cbg_id: &str) -> Option<&UnitTruth> {
        self.units
            .binary_search_by(|u| u.cbg_id.as_str().cmp(cbg_id))
            .ok()
            .map(|i| &self.units[i])
    }

    /// Local coefficient surface of one model column, in unit order.
    pub fn beta(&self, name: &str) -> Vec<f64> {
        self.units
            .iter()
            .map(|u| u.beta.get(name).copied().unwrap_or(0.0))
            .collect()
    }
}

/// Everything `synth` writes, held in memory.
#[derive(Debug, Clone)]
pub struct SynthData {
    pub cbgs_geojson: String,
    pub pois_csv: String,
    pub visits_csv: String,
    pub incidents_csv: String,
    pub config_json: String,
    pub truth_json: String,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthOutput {
    pub files: Vec<PathBuf>,
    pub truth_sha256: String,
}

impl SynthData {
    pub fn truth_sha256(&self) -> String {
        sha256_hex(self.truth_json.as_bytes())
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<SynthOutput> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let files = [
            (CBGS_FILE, &self.cbgs_geojson),
            (POIS_FILE, &self.pois_csv),
            (VISITS_FILE, &self.visits_csv),
            (INCIDENTS_FILE, &self.incidents_csv),
            (CONFIG_FILE, &self.config_json),
            (TRUTH_FILE, &self.truth_json),
        ];
        let mut paths = Vec::new();
        for (name, text) in files {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            paths.push(p);
        }
        Ok(SynthOutput {
            files: paths,
            truth_sha256: self.truth_sha256(),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// SHA-256 of a file's bytes, e.g. a `ground_truth.json` next to the inputs.
pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(sha256_hex(&bytes))
}

pub fn generate(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    generate_data(config)?.write(out_dir)
}

/// Socioeconomic attributes written to the CBG file (density is derived).
fn attribute_names() -> Vec<&'static str> {
    SOCIO_VARIABLES
        .iter()
        .map(|(n, _)| *n)
        .filter(|n| *n != POPULATION_DENSITY)
        .collect()
}

/// Base shares inside each composition group, in member order.
fn composition_bases() -> BTreeMap<&'static str, f64> {
    [
        ("pct_white", 45.0),
        ("pct_black", 30.0),
        ("pct_amind_aknative", 0.5),
        ("pct_asian", 6.0),
        ("pct_nhpi", 0.2),
        ("pct_other_races", 3.0),
        ("pct_age_under18", 22.0),
        ("pct_age_18_29", 18.0),
        ("pct_age_30_39", 15.0),
        ("pct_age_40_49", 13.0),
        ("pct_age_50_59", 12.0),
        ("pct_age_over60", 20.0),
        ("pct_lt_highschool", 15.0),
        ("pct_highschool", 30.0),
        ("pct_university", 55.0),
    ]
    .into_iter()
    .collect()
}

/// `(centre, scale)` for the free-standing percentage and income variables;
/// values are `centre + scale · field`, clamped to [0, 100] for percentages.
fn marginal(name: &str) -> (f64, f64) {
    match name {
        "pct_hispanic" => (20.0, 10.0),
        "pct_unemployment" => (8.0, 3.0),
        "pct_female_hh" => (12.0, 4.0),
        "pct_security_inc" => (30.0, 6.0),
        "pct_assistant_inc" => (4.0, 1.5),
        "pct_assist_inc_or_snap" => (18.0, 6.0),
        "pct_renter_hh" => (45.0, 12.0),
        "pct_stay_5yrs" => (60.0, 8.0),
        _ => (50.0, 10.0),
    }
}

fn round_to(x: f64, decimals: i32) -> f64 {
    let s = 10f64.powi(decimals);
    (x * s).round() / s
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    for x in v.iter_mut() {
        *x = if sd > 0.0 { (*x - m) / sd } else { 0.0 };
    }
}

/// Sum of random Gaussian bumps plus a little white noise, standardized.
fn smooth_field(r: &mut rng::Rng, coords: &[(f64, f64)], width: f64) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let bumps: Vec<(f64, f64, f64, f64)> = (0..8)
        .map(|_| {
            (
                r.random_range(-0.2..1.2),
                r.random_range(-0.2..1.2),
                normal.sample(r),
                width * r.random_range(0.7..1.3),
            )
        })
        .collect();
    let mut f: Vec<f64> = coords
        .iter()
        .map(|&(u, v)| {
            let s: f64 = bumps
                .iter()
                .map(|&(cu, cv, a, w)| {
                    a * (-((u - cu).powi(2) + (v - cv).powi(2)) / (2.0 * w * w)).exp()
                })
                .sum();
            s + 0.3 * normal.sample(r)
        })
        .collect();
    standardize(&mut f);
    f
}

struct Cell {
    id: String,
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Cell {
    /// Uniform point away from the cell boundary.
    fn interior_point(&self, r: &mut rng::Rng) -> (f64, f64) {
        let (w, h) = (self.x1 - self.x0, self.y1 - self.y0);
        (
            self.x0 + w * r.random_range(0.05..0.95),
            self.y0 + h * r.random_range(0.05..0.95),
        )
    }
}

fn csv_string(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Parse {
        context: "synthetic csv".into(),
        message: e.to_string(),
    };
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse {
        context: "synthetic csv".into(),
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn to_json<T: Serialize>(value: &T, context: &str) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        context: context.to_string(),
        source: e,
    })?;
    s.push('\n');
    Ok(s)
}

const DV_TYPES: [&str; 4] = ["BATTERY", "ASSAULT", "INTIMIDATION", "STALKING"];
const HOMES: [&str; 4] = [
    "RESIDENCE",
    "APARTMENT",
    "HOUSE",
    "RESIDENCE - PORCH / HALLWAY",
];
const DECOY_NAICS: [(u32, &str); 2] = [
    (722511, "Full-Service Restaurants"),
    (445110, "Supermarkets"),
];

pub fn generate_data(config: &SynthConfig) -> Result<SynthData> {
    config.validate()?;
    let n = config.n_units();
    let seed = config.seed;

    // Geometry. Edges are computed once so neighbouring cells share vertices exactly.
    let xs: Vec<f64> = (0..=config.cols)
        .map(|c| config.origin[0] + c as f64 * config.cell_deg)
        .collect();
    let ys: Vec<f64> = (0..=config.rows)
        .map(|r| config.origin[1] + r as f64 * config.cell_deg)
        .collect();
    let mut cells = Vec::with_capacity(n);
    let mut coords = Vec::with_capacity(n);
    for r in 0..config.rows {
        for c in 0..config.cols {
            cells.push(Cell {
                id: format!("syn{r:03}{c:03}"),
                x0: xs[c],
                y0: ys[r],
                x1: xs[c + 1],
                y1: ys[r + 1],
            });
            coords.push((
                (c as f64 + 0.5) / config.cols as f64,
                (r as f64 + 0.5) / config.rows as f64,
            ));
        }
    }

    // Population and devices.
    let mut r_pop = rng::stream(seed, 0);
    let mut population = Vec::with_capacity(n);
    let mut devices = Vec::with_capacity(n);
    for _ in 0..n {
        let p = r_pop.random_range(config.population[0]..=config.population[1]);
        let f = r_pop.random_range(config.device_fraction[0]..=config.device_fraction[1]);
        population.push(p);
        devices.push(((p as f64 * f).round() as u64).max(1));
    }
    let density: Vec<f64> = cells
        .iter()
        .zip(&population)
        .map(|(c, &p)| p as f64 / planar_area_km2(&Polygon::rectangle(c.x0, c.y0, c.x1, c.y1)))
        .collect();

    // Socioeconomic attributes.
    let mut r_socio = rng::stream(seed, 1);
    let bases = composition_bases();
    let mut attrs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for group in default_composition_groups() {
        let logits: Vec<Vec<f64>> = group
            .members
            .iter()
            .map(|m| {
                let f = smooth_field(&mut r_socio, &coords, config.smoothness);
                f.iter().map(|z| bases[m.as_str()].ln() + 0.5 * z).collect()
            })
            .collect();
        for (k, m) in group.members.iter().enumerate() {
            let col = (0..n)
                .map(|i| {
                    let total: f64 = logits.iter().map(|l| l[i].exp()).sum();
                    round_to(100.0 * logits[k][i].exp() / total, 4)
                })
                .collect();
            let name = attribute_names()
                .into_iter()
                .find(|a| *a == m.as_str())
                .expect("composition members are socio variables");
            attrs.insert(name, col);
        }
    }
    for name in attribute_names() {
        if attrs.contains_key(name) {
            continue;
        }
        let f = smooth_field(&mut r_socio, &coords, config.smoothness);
        let col = if name == "med_income" {
            f.iter()
                .map(|z| (60000.0 * (0.35 * z).exp()).round())
                .collect()
        } else {
            let (c, s) = marginal(name);
            f.iter()
                .map(|z| round_to((c + s * z).clamp(0.0, 100.0), 4))
                .collect()
        };
        attrs.insert(name, col);
    }

    // Visit rates: a white-noise part plus an optional smooth part per type.
    let mut r_visit = rng::stream(seed, 2);
    let mut r_smooth = rng::stream(seed, 5);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let s = config.visit_rate_spread;
    let smooth: Vec<Option<Vec<f64>>> = config
        .visit_rate_smooth
        .iter()
        .map(|&a| (a > 0.0).then(|| smooth_field(&mut r_smooth, &coords, config.smoothness)))
        .collect();
    let mut intended_vr = vec![[0.0; 4]; n];
    let mut visitors = vec![[0u64; 4]; n];
    let mut visit_rates = vec![[0.0; 4]; n];
    for i in 0..n {
        for t in OutletType::ALL {
            let k = t.index();
            let a = config.visit_rate_smooth[k];
            let mut e = normal.sample(&mut r_visit);
            if let Some(f) = &smooth[k] {
                e = a * f[i] + (1.0 - a * a).sqrt() * e;
            }
            let v = config.visit_rate_mean[k] * (s * e - 0.5 * s * s).exp();
            intended_vr[i][k] = v;
            visitors[i][k] = (v * devices[i] as f64).round() as u64;
            visit_rates[i][k] = visit_rate_value(visitors[i][k], devices[i]);
        }
    }

    // Standardized model columns and the linear predictor.
    let column = |name: &str| -> Vec<f64> {
        if name == POPULATION_DENSITY {
            density.clone()
        } else if let Some(t) = OutletType::ALL.iter().find(|t| t.rate_column() == name) {
            visit_rates.iter().map(|v| v[t.index()]).collect()
        } else {
            attrs[name].clone()
        }
    };
    let mut scales = BTreeMap::new();
    let mut z_cols = BTreeMap::new();
    for name in config.coefficients.keys() {
        let x = column(name);
        let m = x.iter().sum::<f64>() / n as f64;
        let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Degenerate(format!(
                "synthetic column `{name}` is constant"
            )));
        }
        z_cols.insert(
            name.clone(),
            x.iter().map(|v| (v - m) / sd).collect::<Vec<_>>(),
        );
        scales.insert(name.clone(), ColumnScale { mean: m, std: sd });
    }

    let mut r_noise = rng::stream(seed, 3);
    let mut units = Vec::with_capacity(n);
    for (i, cell) in cells.iter().enumerate() {
        let (u, v) = coords[i];
        let intercept = config.intercept.at(u, v);
        let beta: BTreeMap<String, f64> = config
            .coefficients
            .iter()
            .map(|(k, f)| (k.clone(), f.at(u, v)))
            .collect();
        let noiseless = intercept + beta.iter().map(|(k, b)| b * z_cols[k][i]).sum::<f64>();
        let eps = config.noise_sd * normal.sample(&mut r_noise);
        let intended = (noiseless + eps).max(0.0);
        let mean_count = intended * population[i] as f64 / 1000.0;
        let incidents = match config.count_mode {
            CountMode::Rounded => mean_count.round() as u64,
            CountMode::Poisson if mean_count > 0.0 => Poisson::new(mean_count)
                .map_err(|e| Error::Parameter(format!("poisson mean {mean_count}: {e}")))?
                .sample(&mut r_noise) as u64,
            CountMode::Poisson => 0,
        };
        units.push(UnitTruth {
            cbg_id: cell.id.clone(),
            row: i / config.cols,
            col: i % config.cols,
            population: population[i],
            device_count: devices[i],
            intercept,
            beta,
            noiseless_rate: noiseless,
            intended_rate: intended,
            incidents,
            dv_rate: dv_rate_value(incidents, population[i]),
            intended_visit_rates: intended_vr[i],
            visitors: visitors[i],
            visit_rates: visit_rates[i],
        });
    }

    // Records.
    let mut r_rec = rng::stream(seed, 4);
    let cbgs_geojson = cbg_geojson(&cells, &units, &attrs)?;

    let mut poi_rows = Vec::new();
    let mut outlet_pois: Vec<Vec<String>> = vec![Vec::new(); 4];
    let mut decoy_pois = Vec::new();
    let poi_point = |r: &mut rng::Rng| {
        let cell = &cells[r.random_range(0..n)];
        cell.interior_point(r)
    };
    for t in OutletType::ALL {
        for _ in 0..config.pois_per_type {
            let id = format!("P{:05}", poi_rows.len() + 1);
            let (x, y) = poi_point(&mut r_rec);
            poi_rows.push(vec![
                id.clone(),
                t.naics().to_string(),
                x.to_string(),
                y.to_string(),
                t.label().to_string(),
            ]);
            outlet_pois[t.index()].push(id);
        }
    }
    for (code, label) in DECOY_NAICS {
        for _ in 0..config.pois_per_type {
            let id = format!("P{:05}", poi_rows.len() + 1);
            let (x, y) = poi_point(&mut r_rec);
            poi_rows.push(vec![
                id.clone(),
                format!("{code:06}"),
                x.to_string(),
                y.to_string(),
                label.to_string(),
            ]);
            decoy_pois.push(id);
        }
    }

    let mut visit_rows = Vec::new();
    for (i, cell) in cells.iter().enumerate() {
        let mut per_poi: BTreeMap<&str, u64> = BTreeMap::new();
        for t in OutletType::ALL {
            let ids = &outlet_pois[t.index()];
            for _ in 0..visitors[i][t.index()] {
                *per_poi
                    .entry(ids.choose(&mut r_rec).expect("at least one poi"))
                    .or_insert(0) += 1;
            }
        }
        if config.decoy_fraction > 0.0 {
            let id = decoy_pois.choose(&mut r_rec).expect("decoy pois exist");
            *per_poi.entry(id).or_insert(0) += r_rec.random_range(1..=20);
        }
        for (poi, count) in per_poi {
            visit_rows.push(vec![poi.to_string(), cell.id.clone(), count.to_string()]);
        }
    }

    let mut incident_rows = Vec::new();
    let next_incident = |row: [String; 5], rows: &mut Vec<Vec<String>>| {
        let mut r = vec![format!("I{:07}", rows.len() + 1)];
        r.extend(row);
        rows.push(r);
    };
    for (i, cell) in cells.iter().enumerate() {
        for _ in 0..units[i].incidents {
            let (x, y) = cell.interior_point(&mut r_rec);
            let ty = DV_TYPES.choose(&mut r_rec).expect("nonempty");
            let loc = HOMES.choose(&mut r_rec).expect("nonempty");
            next_incident(
                [
                    x.to_string(),
                    y.to_string(),
                    "true".into(),
                    ty.to_string(),
                    loc.to_string(),
                ],
                &mut incident_rows,
            );
        }
    }
    let total: u64 = units.iter().map(|u| u.incidents).sum();
    let decoys = (config.decoy_fraction * total as f64).round() as usize;
    for d in 0..decoys {
        let cell = &cells[r_rec.random_range(0..n)];
        let (mut x, mut y) = cell.interior_point(&mut r_rec);
        let fields = match d % 4 {
            0 => ("false", "BATTERY", "RESIDENCE"),
            1 => ("true", "THEFT", "APARTMENT"),
            2 => ("true", "BATTERY", "STREET"),
            _ => {
                // Valid record outside the study area.
                x = xs[0] - config.cell_deg * r_rec.random_range(0.5..2.0);
                y = ys[0] - config.cell_deg * r_rec.random_range(0.5..2.0);
                ("true", "ASSAULT", "RESIDENCE")
            }
        };
        next_incident(
            [
                x.to_string(),
                y.to_string(),
                fields.0.into(),
                fields.1.into(),
                fields.2.into(),
            ],
            &mut incident_rows,
        );
    }

    let truth = GroundTruth {
        format_version: crate::FORMAT_VERSION.to_string(),
        config: config.clone(),
        scales,
        dv_rate_bound: 1000.0 / (2.0 * *population.iter().min().expect("n >= 25") as f64),
        visit_rate_bound: 1.0 / (2.0 * *devices.iter().min().expect("n >= 25") as f64),
        decoy_incidents: decoys,
        units,
    };
    Ok(SynthData {
        cbgs_geojson,
        pois_csv: csv_string(
            &["poi_id", "naics", "lon", "lat", "category_label"],
            &poi_rows,
        )?,
        visits_csv: csv_string(&["poi_id", "cbg_id", "visitor_count"], &visit_rows)?,
        incidents_csv: csv_string(
            &[
                "incident_id",
                "lon",
                "lat",
                "domestic",
                "primary_type",
                "location_description",
            ],
            &incident_rows,
        )?,
        config_json: to_json(config, "synth config")?,
        truth_json: to_json(&truth, "ground truth")?,
        truth,
    })
}

fn cbg_geojson(
    cells: &[Cell],
    units: &[UnitTruth],
    attrs: &BTreeMap<&str, Vec<f64>>,
) -> Result<String> {
    let features: Vec<Value> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut props = serde_json::Map::new();
            props.insert("cbg_id".into(), json!(c.id));
            props.insert("population".into(), json!(units[i].population));
            props.insert("device_count".into(), json!(units[i].device_count));
            for (name, col) in attrs {
                props.insert((*name).into(), json!(col[i]));
            }
            json!({
                "type": "Feature",
                "properties": props,
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[c.x0, c.y0], [c.x1, c.y0], [c.x1, c.y1], [c.x0, c.y1], [c.x0, c.y0]]],
                },
            })
        })
        .collect();
    to_json(
        &json!({"type": "FeatureCollection", "features": features}),
        "cbg geojson",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            rows: 6,
            cols: 5,
            ..scenario_paper_like(seed)
        }
    }

    #[test]
    fn fields_hit_their_ends() {
        let g = CoefField::LinearGradient {
            direction: [-1.0, 0.0],
            lo: -1.0,
            hi: 3.0,
        };
        assert_eq!(g.at(0.0, 0.3), 3.0);
        assert_eq!(g.at(1.0, 0.9), -1.0);
        let r = CoefField::Radial {
            center: [0.5, 0.5],
            lo: 10.0,
            hi: 4.0,
        };
        assert_eq!(r.at(0.5, 0.5), 10.0);
        assert!((r.at(1.0, 1.0) - 4.0).abs() < 1e-12);
        assert_eq!(CoefField::constant(2.5).at(0.1, 0.7), 2.5);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_data(&small(9)).unwrap();
        let b = generate_data(&small(9)).unwrap();
        assert_eq!(a.cbgs_geojson, b.cbgs_geojson);
        assert_eq!(a.visits_csv, b.visits_csv);
        assert_eq!(a.incidents_csv, b.incidents_csv);
        assert_eq!(a.truth_json, b.truth_json);
        let c = generate_data(&small(10)).unwrap();
        assert_ne!(a.incidents_csv, c.incidents_csv);
    }

    #[test]
    fn composition_groups_sum_to_100() {
        let d = generate_data(&small(3)).unwrap();
        let root: Value = serde_json::from_str(&d.cbgs_geojson).unwrap();
        for f in root["features"].as_array().unwrap() {
            for g in default_composition_groups() {
                let s: f64 = g
                    .members
                    .iter()
                    .map(|m| f["properties"][m].as_f64().unwrap())
                    .sum();
                assert!((s - 100.0).abs() < 1e-3, "{s}");
            }
        }
    }

    #[test]
    fn rates_stay_within_rounding_of_intent() {
        let d = generate_data(&small(4)).unwrap();
        let t = &d.truth;
        for u in &t.units {
            assert!((u.dv_rate - u.intended_rate).abs() <= t.dv_rate_bound + 1e-12);
            for k in 0..4 {
                assert!(
                    (u.visit_rates[k] - u.intended_visit_rates[k]).abs()
                        <= t.visit_rate_bound + 1e-12
                );
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let tiny = SynthConfig {
            rows: 4,
            cols: 6,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_data(&tiny), Err(Error::Parameter(_))));
        let mut c = SynthConfig::default();
        c.noise_sd = -1.0;
        assert!(c.validate().is_err());
        let mut c = SynthConfig::default();
        c.coefficients
            .insert("shoe_size".into(), CoefField::constant(1.0));
        assert!(c.validate().is_err());
    }

    #[test]
    fn poisson_mode_runs() {
        let c = SynthConfig {
            count_mode: CountMode::Poisson,
            ..small(5)
        };
        let d = generate_data(&c).unwrap();
        assert!(d.truth.units.iter().any(|u| u.incidents > 0));
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = scenario_heterogeneous(7);
        let back: SynthConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
