//! Outcome and exposure rates per CBG, and assembly of the standardized
//! design matrix.
//!
//! * DV rate: incidents per 1,000 residents.
//! * Visit rate: visitors from the CBG to one outlet type, divided by the
//!   number of devices residing in the CBG.
//! * Population density: residents per km².

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::Assignment;
use crate::ingest::{CbgTable, OutletType, PoiTable, VisitTable};
use crate::linalg::Matrix;

/// Variable groups of the design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Race,
    Age,
    Disadvantage,
    Instability,
    Urbanicity,
    Visits,
}

pub const POPULATION_DENSITY: &str = "population_density";

/// Known socioeconomic and demographic variables with their category.
pub const SOCIO_VARIABLES: [(&str, Category); 25] = [
    ("pct_white", Category::Race),
    ("pct_black", Category::Race),
    ("pct_amind_aknative", Category::Race),
    ("pct_asian", Category::Race),
    ("pct_nhpi", Category::Race),
    ("pct_other_races", Category::Race),
    ("pct_hispanic", Category::Race),
    ("pct_age_under18", Category::Age),
    ("pct_age_18_29", Category::Age),
    ("pct_age_30_39", Category::Age),
    ("pct_age_40_49", Category::Age),
    ("pct_age_50_59", Category::Age),
    ("pct_age_over60", Category::Age),
    ("med_income", Category::Disadvantage),
    ("pct_unemployment", Category::Disadvantage),
    ("pct_female_hh", Category::Disadvantage),
    ("pct_lt_highschool", Category::Disadvantage),
    ("pct_highschool", Category::Disadvantage),
    ("pct_university", Category::Disadvantage),
    ("pct_security_inc", Category::Disadvantage),
    ("pct_assistant_inc", Category::Disadvantage),
    ("pct_assist_inc_or_snap", Category::Disadvantage),
    ("pct_renter_hh", Category::Instability),
    ("pct_stay_5yrs", Category::Instability),
    (POPULATION_DENSITY, Category::Urbanicity),
];

/// The 19 variables retained after multicollinearity screening.
pub const BASELINE_VARIABLES: [&str; 19] = [
    "pct_white",
    "pct_amind_aknative",
    "pct_asian",
    "pct_nhpi",
    "pct_hispanic",
    "pct_age_18_29",
    "pct_age_30_39",
    "pct_age_40_49",
    "pct_age_50_59",
    "pct_age_over60",
    "med_income",
    "pct_unemployment",
    "pct_female_hh",
    "pct_lt_highschool",
    "pct_security_inc",
    "pct_assistant_inc",
    "pct_renter_hh",
    "pct_stay_5yrs",
    POPULATION_DENSITY,
];

/// Share variables that add up to 100 within a group, with the member dropped
/// first to break the exact linear dependence.
pub fn default_composition_groups() -> Vec<CompositionGroup> {
    let group = |members: &[&str], reference: &str| CompositionGroup {
        members: members.iter().map(|s| s.to_string()).collect(),
        reference: reference.to_string(),
    };
    vec![
        group(
            &[
                "pct_white",
                "pct_black",
                "pct_amind_aknative",
                "pct_asian",
                "pct_nhpi",
                "pct_other_races",
            ],
            "pct_other_races",
        ),
        group(
            &[
                "pct_age_under18",
                "pct_age_18_29",
                "pct_age_30_39",
                "pct_age_40_49",
                "pct_age_50_59",
                "pct_age_over60",
            ],
            "pct_age_under18",
        ),
        group(
            &["pct_lt_highschool", "pct_highschool", "pct_university"],
            "pct_highschool",
        ),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositionGroup {
    pub members: Vec<String>,
    pub reference: String,
}

pub fn category_of(name: &str) -> Option<Category> {
    if let Some((_, c)) = SOCIO_VARIABLES.iter().find(|(n, _)| *n == name) {
        return Some(*c);
    }
    OutletType::ALL
        .iter()
        .any(|t| t.rate_column() == name)
        .then_some(Category::Visits)
}

/// Incidents per 1,000 residents.
pub fn dv_rate_value(incidents: u64, population: u64) -> f64 {
    1000.0 * incidents as f64 / population as f64
}

/// Visitors per resident device.
pub fn visit_rate_value(visitors: u64, devices: u64) -> f64 {
    visitors as f64 / devices as f64
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Exclusion {
    pub cbg_id: String,
    pub reason: String,
}

/// A per-CBG quantity plus the CBGs that could not receive one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerCbg<T> {
    pub values: BTreeMap<String, T>,
    pub excluded: Vec<Exclusion>,
}

/// DV rate for every CBG with `population >= min_pop` (and at least 1).
pub fn dv_rate(counts: &Assignment, cbgs: &CbgTable, min_pop: u64) -> PerCbg<f64> {
    let mut values = BTreeMap::new();
    let mut excluded = Vec::new();
    for r in cbgs.iter() {
        let n = counts.count_for(&r.cbg_id).unwrap_or(0);
        if r.population == 0 || r.population < min_pop {
            let reason = if r.population == 0 && n > 0 {
                format!("population 0 with {n} incidents")
            } else {
                format!("population {} below minimum {min_pop}", r.population)
            };
            excluded.push(Exclusion {
                cbg_id: r.cbg_id.clone(),
                reason,
            });
        } else {
            values.insert(r.cbg_id.clone(), dv_rate_value(n, r.population));
        }
    }
    PerCbg { values, excluded }
}

/// Visitor totals per home CBG, indexed by [`OutletType::index`].
pub type VisitorSums = BTreeMap<String, [u64; 4]>;

/// Re-indexes POI-centric visit records by the visitors' home CBG. Visits to
/// POIs absent from `pois`, or whose NAICS code is not an outlet type, are
/// ignored.
pub fn reverse_visits(visits: &VisitTable, pois: &PoiTable) -> VisitorSums {
    let mut sums = VisitorSums::new();
    for v in visits.records() {
        let Some(t) = pois.get(&v.poi_id).and_then(|p| p.outlet) else {
            continue;
        };
        sums.entry(v.cbg_id.clone()).or_insert([0; 4])[t.index()] += v.visitor_count;
    }
    sums
}

/// Four visit rates per CBG with `device_count >= min_devices` (and at least 1).
pub fn visit_rate(sums: &VisitorSums, cbgs: &CbgTable, min_devices: u64) -> PerCbg<[f64; 4]> {
    let mut values = BTreeMap::new();
    let mut excluded = Vec::new();
    for r in cbgs.iter() {
        if r.device_count == 0 || r.device_count < min_devices {
            excluded.push(Exclusion {
                cbg_id: r.cbg_id.clone(),
                reason: format!(
                    "device count {} below minimum {min_devices}",
                    r.device_count
                ),
            });
            continue;
        }
        let s = sums.get(&r.cbg_id).copied().unwrap_or([0; 4]);
        values.insert(
            r.cbg_id.clone(),
            s.map(|v| visit_rate_value(v, r.device_count)),
        );
    }
    PerCbg { values, excluded }
}

pub fn population_density(cbgs: &CbgTable) -> PerCbg<f64> {
    let mut values = BTreeMap::new();
    let mut excluded = Vec::new();
    for r in cbgs.iter() {
        if r.area_km2 > 0.0 && r.area_km2.is_finite() {
            values.insert(r.cbg_id.clone(), r.population as f64 / r.area_km2);
        } else {
            excluded.push(Exclusion {
                cbg_id: r.cbg_id.clone(),
                reason: format!("area {} km² is not positive", r.area_km2),
            });
        }
    }
    PerCbg { values, excluded }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    pub min_pop: u64,
    pub min_devices: u64,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            min_pop: 1,
            min_devices: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub cbg_id: String,
    pub incidents: u64,
    pub dv_rate: f64,
    pub visitors: [u64; 4],
    pub visit_rates: [f64; 4],
    pub population_density: f64,
}

impl RateRow {
    pub fn visit_rate(&self, t: OutletType) -> f64 {
        self.visit_rates[t.index()]
    }
}

/// Rates for every CBG eligible on all three derivations, sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub excluded: Vec<Exclusion>,
}

impl RateTable {
    pub fn get(&self, cbg_id: &str) -> Option<&RateRow> {
        self.rows
            .binary_search_by(|r| r.cbg_id.as_str().cmp(cbg_id))
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn ids(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.cbg_id.as_str()).collect()
    }
}

pub fn derive_rates(
    cbgs: &CbgTable,
    counts: &Assignment,
    sums: &VisitorSums,
    opts: RateOptions,
) -> RateTable {
    let dv = dv_rate(counts, cbgs, opts.min_pop);
    let vr = visit_rate(sums, cbgs, opts.min_devices);
    let dens = population_density(cbgs);
    let mut excluded: Vec<Exclusion> = dv
        .excluded
        .into_iter()
        .chain(vr.excluded)
        .chain(dens.excluded)
        .collect();
    excluded.sort_by(|a, b| a.cbg_id.cmp(&b.cbg_id));

    let rows = cbgs
        .iter()
        .filter_map(|r| {
            let id = &r.cbg_id;
            Some(RateRow {
                cbg_id: id.clone(),
                incidents: counts.count_for(id).unwrap_or(0),
                dv_rate: *dv.values.get(id)?,
                visitors: sums.get(id).copied().unwrap_or([0; 4]),
                visit_rates: *vr.values.get(id)?,
                population_density: *dens.values.get(id)?,
            })
        })
        .collect();
    RateTable { rows, excluded }
}

/// Per-column mean and population standard deviation (denominator n).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    /// Fits on the given rows of `raw`; a zero-variance column is an error
    /// naming the column.
    pub fn fit(raw: &Matrix<f64>, rows: &[usize], names: &[String]) -> Result<Self> {
        let n = rows.len() as f64;
        let p = raw.ncols();
        let mut means = vec![0.0; p];
        let mut stds = vec![0.0; p];
        for j in 0..p {
            let m = rows.iter().map(|&i| raw[(i, j)]).sum::<f64>() / n;
            let var = rows.iter().map(|&i| (raw[(i, j)] - m).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::ConstantColumn(
                    names.get(j).cloned().unwrap_or_else(|| format!("#{j}")),
                ));
            }
            means[j] = m;
            stds[j] = sd;
        }
        Ok(Self { means, stds })
    }

    pub fn transform(&self, raw: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(raw.nrows(), raw.ncols(), |i, j| {
            (raw[(i, j)] - self.means[j]) / self.stds[j]
        })
    }

    pub fn inverse_transform(&self, z: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(z.nrows(), z.ncols(), |i, j| {
            z[(i, j)] * self.stds[j] + self.means[j]
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub category: Category,
}

/// Named, categorized design matrix. `values` are the z-scores of `raw` under
/// `scaler`; rows are in ascending `cbg_id` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub row_ids: Vec<String>,
    pub columns: Vec<FeatureColumn>,
    pub raw: Matrix<f64>,
    pub values: Matrix<f64>,
    pub scaler: Scaler,
}

impl FeatureMatrix {
    pub fn from_raw(
        row_ids: Vec<String>,
        columns: Vec<FeatureColumn>,
        raw: Matrix<f64>,
    ) -> Result<Self> {
        let names: Vec<String> = columns.iter().map(|c| c.name.clone()).collect();
        let mut seen = std::collections::BTreeSet::new();
        for n in &names {
            if !seen.insert(n) {
                return Err(Error::Schema(format!("duplicate column `{n}`")));
            }
        }
        if raw.as_slice().iter().any(|x| !x.is_finite()) {
            return Err(Error::Degenerate(
                "feature matrix has non-finite values".into(),
            ));
        }
        let all: Vec<usize> = (0..raw.nrows()).collect();
        let scaler = Scaler::fit(&raw, &all, &names)?;
        let values = scaler.transform(&raw);
        Ok(Self {
            row_ids,
            columns,
            raw,
            values,
            scaler,
        })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Keeps the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::Schema(format!("unknown column `{n}`")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            row_ids: self.row_ids.clone(),
            columns: idx.iter().map(|&j| self.columns[j].clone()).collect(),
            raw: self.raw.select_columns(&idx),
            values: self.values.select_columns(&idx),
            scaler: Scaler {
                means: idx.iter().map(|&j| self.scaler.means[j]).collect(),
                stds: idx.iter().map(|&j| self.scaler.stds[j]).collect(),
            },
        })
    }

    pub fn drop_columns(&self, names: &[String]) -> Result<Self> {
        let keep: Vec<String> = self
            .names()
            .into_iter()
            .filter(|n| !names.contains(n))
            .collect();
        self.select(&keep)
    }
}

/// Design matrix plus aligned target (DV rate).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    pub features: FeatureMatrix,
    pub target: Vec<f64>,
}

/// Builds the standardized design matrix for the CBGs that have rates and all
/// requested attributes. `population_density` is taken from the rate table;
/// with `include_visits` the four visit-rate columns are appended.
pub fn assemble_features(
    cbgs: &CbgTable,
    rates: &RateTable,
    include_visits: bool,
    variables: &[String],
) -> Result<ModelData> {
    let mut columns: Vec<FeatureColumn> = Vec::new();
    for v in variables {
        let category = category_of(v).ok_or_else(|| {
            Error::Schema(format!("variable `{v}` is not a known model variable"))
        })?;
        columns.push(FeatureColumn {
            name: v.clone(),
            category,
        });
    }
    if include_visits {
        for t in OutletType::ALL {
            let name = t.rate_column();
            if !variables.contains(&name) {
                columns.push(FeatureColumn {
                    name,
                    category: Category::Visits,
                });
            }
        }
    }

    let mut row_ids = Vec::new();
    let mut rows = Vec::new();
    let mut target = Vec::new();
    for rate in &rates.rows {
        let Some(rec) = cbgs.get(&rate.cbg_id) else {
            continue;
        };
        let row: Option<Vec<f64>> = columns
            .iter()
            .map(|c| {
                if c.name == POPULATION_DENSITY {
                    Some(rate.population_density)
                } else if c.category == Category::Visits {
                    OutletType::ALL
                        .iter()
                        .find(|t| t.rate_column() == c.name)
                        .map(|t| rate.visit_rate(*t))
                } else {
                    rec.attributes.get(&c.name).copied()
                }
            })
            .collect();
        match row {
            Some(r) => {
                row_ids.push(rate.cbg_id.clone());
                rows.push(r);
                target.push(rate.dv_rate);
            }
            None => log::warn!("cbg {} lacks a requested attribute; skipped", rate.cbg_id),
        }
    }
    if rows.is_empty() {
        return Err(Error::Degenerate(
            "no CBG has every requested variable".into(),
        ));
    }
    let raw = Matrix::from_rows(&rows);
    let features = FeatureMatrix::from_raw(row_ids, columns, raw)?;
    Ok(ModelData { features, target })
}
