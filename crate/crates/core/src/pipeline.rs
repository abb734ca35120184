//! Input files to rate table: load, filter, link, assign and derive.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{vif_prune, VifOptions, VifReport};
use crate::error::Result;
use crate::geo::{assign_incidents, Assignment};
use crate::ingest::CbgTable;
use crate::ingest::{
    filter_alcohol_pois, filter_dv_incidents, link, Dataset, DvFilter, DvFilterReport,
    IncidentTable, InputPaths, LinkReport, Naics, PoiTable, DEFAULT_ALCOHOL_NAICS,
};
use crate::rates::{
    assemble_features, default_composition_groups, derive_rates, reverse_visits, RateOptions,
    RateTable, VisitorSums, POPULATION_DENSITY, SOCIO_VARIABLES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeriveOptions {
    pub alcohol_naics: BTreeSet<u32>,
    pub dv_filter: DvFilter,
    pub rates: RateOptions,
    /// Attributes every CBG must carry.
    pub attributes: Vec<String>,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        Self {
            alcohol_naics: DEFAULT_ALCOHOL_NAICS.into_iter().collect(),
            dv_filter: DvFilter::default(),
            rates: RateOptions::default(),
            attributes: socio_attributes(),
        }
    }
}

/// All 25 socioeconomic variables, density included.
pub fn socio_variables() -> Vec<String> {
    SOCIO_VARIABLES.iter().map(|(n, _)| n.to_string()).collect()
}

/// VIF options with the standard composition groups.
pub fn default_vif_options() -> VifOptions {
    VifOptions {
        composition_groups: default_composition_groups(),
        ..VifOptions::default()
    }
}

/// Screens `candidates` (socioeconomic only) for multicollinearity; the
/// retained set is the baseline variable list.
pub fn screen_variables(
    cbgs: &CbgTable,
    rates: &RateTable,
    candidates: &[String],
    opts: &VifOptions,
) -> Result<VifReport> {
    let data = assemble_features(cbgs, rates, false, candidates)?;
    vif_prune(&data.features, opts)
}

/// Socioeconomic variables read from the CBG file (density is derived).
pub fn socio_attributes() -> Vec<String> {
    SOCIO_VARIABLES
        .iter()
        .map(|(n, _)| n.to_string())
        .filter(|n| n != POPULATION_DENSITY)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Derived {
    pub dataset: Dataset,
    pub link: LinkReport,
    pub alcohol_pois: PoiTable,
    pub dv_incidents: IncidentTable,
    pub dv_report: DvFilterReport,
    pub assignment: Assignment,
    pub visitor_sums: VisitorSums,
    pub rates: RateTable,
}

pub fn load_dataset(paths: &InputPaths, opts: &DeriveOptions) -> Result<(Dataset, LinkReport)> {
    let dataset = Dataset::load(paths, &opts.attributes)?;
    let report = link(&dataset.cbgs, &dataset.pois.table, &dataset.visits.table)?;
    Ok((dataset, report))
}

pub fn derive(paths: &InputPaths, opts: &DeriveOptions) -> Result<Derived> {
    let (dataset, link) = load_dataset(paths, opts)?;
    derive_from(dataset, link, opts)
}

pub fn derive_from(dataset: Dataset, link: LinkReport, opts: &DeriveOptions) -> Result<Derived> {
    let codes: BTreeSet<Naics> = opts.alcohol_naics.iter().map(|&c| Naics(c)).collect();
    let alcohol_pois = filter_alcohol_pois(&dataset.pois.table, &codes);
    let (dv_incidents, dv_report) = filter_dv_incidents(&dataset.incidents.table, &opts.dv_filter);
    let assignment = assign_incidents(&dv_incidents, &dataset.cbgs);
    let visitor_sums = reverse_visits(&dataset.visits.table, &alcohol_pois);
    let rates = derive_rates(&dataset.cbgs, &assignment, &visitor_sums, opts.rates);
    Ok(Derived {
        dataset,
        link,
        alcohol_pois,
        dv_incidents,
        dv_report,
        assignment,
        visitor_sums,
        rates,
    })
}
