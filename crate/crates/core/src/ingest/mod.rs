//! Loading and validation of the five input kinds: CBG polygons (GeoJSON),
//! POIs, visits and incidents (CSV). Tables are immutable once built and
//! always sorted by their key, which is the canonical row order used by every
//! downstream seeded operation.

mod cbg;
mod filter;
mod tables;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use cbg::{load_cbgs, parse_cbgs, planar_area_km2};
pub use filter::{
    filter_alcohol_pois, filter_dv_incidents, DvFilter, DvFilterReport, DEFAULT_ALCOHOL_NAICS,
    DEFAULT_DV_TYPES, DEFAULT_HOME_LOCATIONS,
};
pub use tables::{
    load_incidents, load_pois, load_visits, parse_incidents, parse_pois, parse_visits,
};

use crate::error::{Error, Result};
use crate::geo::{Point, Polygon};

/// A CSV row that failed validation and was dropped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowRejection {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub message: String,
}

/// Outcome of a loader: the accepted table plus rejected rows.
#[derive(Debug, Clone)]
pub struct Loaded<T> {
    pub table: T,
    pub input_rows: usize,
    pub rejected: Vec<RowRejection>,
}

impl<T> Loaded<T> {
    pub fn accepted_rows(&self) -> usize {
        self.input_rows - self.rejected.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbgRecord {
    pub cbg_id: String,
    pub polygon: Polygon,
    pub population: u64,
    pub device_count: u64,
    pub area_km2: f64,
    pub attributes: BTreeMap<String, f64>,
}

/// Six-digit NAICS industry code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Naics(pub u32);

impl Naics {
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        if s.len() == 6 && s.bytes().all(|b| b.is_ascii_digit()) {
            s.parse().ok().map(Naics)
        } else {
            None
        }
    }
}

impl std::fmt::Display for Naics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:06}", self.0)
    }
}

/// The four alcohol outlet categories and their NAICS codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutletType {
    LiquorStore,
    DrinkingPlace,
    Brewery,
    Winery,
}

impl OutletType {
    pub const ALL: [OutletType; 4] = [
        OutletType::LiquorStore,
        OutletType::DrinkingPlace,
        OutletType::Brewery,
        OutletType::Winery,
    ];

    pub fn from_naics(code: Naics) -> Option<Self> {
        match code.0 {
            445310 => Some(OutletType::LiquorStore),
            722410 => Some(OutletType::DrinkingPlace),
            312120 => Some(OutletType::Brewery),
            312130 => Some(OutletType::Winery),
            _ => None,
        }
    }

    pub fn naics(self) -> Naics {
        Naics(match self {
            OutletType::LiquorStore => 445310,
            OutletType::DrinkingPlace => 722410,
            OutletType::Brewery => 312120,
            OutletType::Winery => 312130,
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            OutletType::LiquorStore => "Beer, Wine, and Liquor Stores",
            OutletType::DrinkingPlace => "Drinking Places",
            OutletType::Brewery => "Breweries",
            OutletType::Winery => "Wineries",
        }
    }

    /// Short snake_case name used in column and file names.
    pub fn key(self) -> &'static str {
        match self {
            OutletType::LiquorStore => "liquor_store",
            OutletType::DrinkingPlace => "drinking_place",
            OutletType::Brewery => "brewery",
            OutletType::Winery => "winery",
        }
    }

    /// Name of the visit-rate feature column.
    pub fn rate_column(self) -> String {
        format!("{}_vr", self.key())
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub poi_id: String,
    pub naics: Naics,
    pub location: Point,
    pub category_label: String,
    /// Outlet category implied by the NAICS code, if it is one of the four.
    pub outlet: Option<OutletType>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub poi_id: String,
    pub cbg_id: String,
    pub visitor_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentRecord {
    pub incident_id: String,
    pub location: Point,
    pub domestic: bool,
    pub primary_type: String,
    pub location_description: String,
}

macro_rules! keyed_table {
    ($name:ident, $rec:ty, $key:ident) => {
        #[derive(Debug, Clone, PartialEq, Default)]
        pub struct $name {
            records: Vec<$rec>,
        }

        impl $name {
            /// Sorts by key; duplicate keys are a schema error.
            pub fn new(mut records: Vec<$rec>) -> Result<Self> {
                records.sort_by(|a, b| a.$key.cmp(&b.$key));
                if let Some(w) = records.windows(2).find(|w| w[0].$key == w[1].$key) {
                    return Err(Error::Schema(format!(
                        "duplicate {} `{}`",
                        stringify!($key),
                        w[0].$key
                    )));
                }
                Ok(Self { records })
            }

            pub fn records(&self) -> &[$rec] {
                &self.records
            }

            pub fn len(&self) -> usize {
                self.records.len()
            }

            pub fn is_empty(&self) -> bool {
                self.records.is_empty()
            }

            pub fn get(&self, key: &str) -> Option<&$rec> {
                self.position(key).map(|i| &self.records[i])
            }

            pub fn position(&self, key: &str) -> Option<usize> {
                self.records
                    .binary_search_by(|r| r.$key.as_str().cmp(key))
                    .ok()
            }

            pub fn iter(&self) -> std::slice::Iter<'_, $rec> {
                self.records.iter()
            }
        }
    };
}

keyed_table!(CbgTable, CbgRecord, cbg_id);
keyed_table!(PoiTable, PoiRecord, poi_id);
keyed_table!(IncidentTable, IncidentRecord, incident_id);

impl CbgTable {
    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.cbg_id.as_str()).collect()
    }
}

impl PoiTable {
    pub fn count_by_outlet(&self) -> BTreeMap<OutletType, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            if let Some(t) = r.outlet {
                *out.entry(t).or_insert(0) += 1;
            }
        }
        out
    }
}

/// Visit records sorted by `(poi_id, cbg_id)`; the pair is unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VisitTable {
    records: Vec<VisitRecord>,
}

impl VisitTable {
    pub fn new(mut records: Vec<VisitRecord>) -> Result<Self> {
        records.sort_by(|a, b| (&a.poi_id, &a.cbg_id).cmp(&(&b.poi_id, &b.cbg_id)));
        if let Some(w) = records
            .windows(2)
            .find(|w| w[0].poi_id == w[1].poi_id && w[0].cbg_id == w[1].cbg_id)
        {
            return Err(Error::Schema(format!(
                "duplicate visit pair ({}, {})",
                w[0].poi_id, w[0].cbg_id
            )));
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[VisitRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_visitors(&self) -> u64 {
        self.records.iter().map(|r| r.visitor_count).sum()
    }
}

/// Referential check of visits against POI and CBG tables.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LinkReport {
    pub unknown_pois: Vec<String>,
    pub unknown_cbgs: Vec<String>,
}

impl LinkReport {
    pub fn is_clean(&self) -> bool {
        self.unknown_pois.is_empty() && self.unknown_cbgs.is_empty()
    }
}

/// Cross-file referential integrity pass, kept separate so each file can be
/// loaded and validated on its own.
pub fn link(cbgs: &CbgTable, pois: &PoiTable, visits: &VisitTable) -> Result<LinkReport> {
    let report = link_report(cbgs, pois, visits);
    if report.is_clean() {
        Ok(report)
    } else {
        Err(Error::Referential(format!(
            "visits reference {} unknown poi_id(s) [{}] and {} unknown cbg_id(s) [{}]",
            report.unknown_pois.len(),
            preview(&report.unknown_pois),
            report.unknown_cbgs.len(),
            preview(&report.unknown_cbgs),
        )))
    }
}

/// Same as [`link`] but returns the offending keys instead of failing.
pub fn link_report(cbgs: &CbgTable, pois: &PoiTable, visits: &VisitTable) -> LinkReport {
    let mut report = LinkReport::default();
    for v in visits.records() {
        if pois.get(&v.poi_id).is_none() {
            report.unknown_pois.push(v.poi_id.clone());
        }
        if cbgs.get(&v.cbg_id).is_none() {
            report.unknown_cbgs.push(v.cbg_id.clone());
        }
    }
    report.unknown_pois.sort();
    report.unknown_pois.dedup();
    report.unknown_cbgs.sort();
    report.unknown_cbgs.dedup();
    report
}

fn preview(keys: &[String]) -> String {
    let mut s = keys.iter().take(5).cloned().collect::<Vec<_>>().join(", ");
    if keys.len() > 5 {
        s.push_str(", ...");
    }
    s
}

/// Paths of the four input files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputPaths {
    pub cbgs: std::path::PathBuf,
    pub pois: std::path::PathBuf,
    pub visits: std::path::PathBuf,
    pub incidents: std::path::PathBuf,
}

impl InputPaths {
    /// Conventional file names inside a directory (what `synth` writes).
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        Self {
            cbgs: d.join("cbgs.geojson"),
            pois: d.join("pois.csv"),
            visits: d.join("visits.csv"),
            incidents: d.join("incidents.csv"),
        }
    }
}

/// All input tables with their load reports.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cbgs: CbgTable,
    pub pois: Loaded<PoiTable>,
    pub visits: Loaded<VisitTable>,
    pub incidents: Loaded<IncidentTable>,
}

impl Dataset {
    pub fn load(paths: &InputPaths, attribute_schema: &[String]) -> Result<Self> {
        Ok(Self {
            cbgs: load_cbgs(&paths.cbgs, attribute_schema)?,
            pois: load_pois(&paths.pois)?,
            visits: load_visits(&paths.visits)?,
            incidents: load_incidents(&paths.incidents)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naics_requires_six_digits() {
        assert_eq!(Naics::parse("445310"), Some(Naics(445310)));
        assert_eq!(Naics::parse("44531"), None);
        assert_eq!(Naics::parse("4453100"), None);
        assert_eq!(Naics::parse("44531a"), None);
        assert_eq!(Naics(12345).to_string(), "012345");
    }

    #[test]
    fn link_flags_unknown_keys() {
        let pois = PoiTable::new(vec![PoiRecord {
            poi_id: "p1".into(),
            naics: Naics(445310),
            location: Point::new(0.0, 0.0),
            category_label: String::new(),
            outlet: Some(OutletType::LiquorStore),
        }])
        .unwrap();
        let visits = VisitTable::new(vec![
            VisitRecord {
                poi_id: "p1".into(),
                cbg_id: "c9".into(),
                visitor_count: 3,
            },
            VisitRecord {
                poi_id: "p2".into(),
                cbg_id: "c9".into(),
                visitor_count: 1,
            },
        ])
        .unwrap();
        let cbgs = CbgTable::default();
        let report = link_report(&cbgs, &pois, &visits);
        assert_eq!(report.unknown_pois, vec!["p2".to_string()]);
        assert_eq!(report.unknown_cbgs, vec!["c9".to_string()]);
        assert!(matches!(
            link(&cbgs, &pois, &visits),
            Err(Error::Referential(_))
        ));
    }
}
