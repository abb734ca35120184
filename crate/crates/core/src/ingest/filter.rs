use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{IncidentTable, Naics, PoiTable};

/// Liquor stores, drinking places, breweries, wineries.
pub const DEFAULT_ALCOHOL_NAICS: [u32; 4] = [445310, 722410, 312120, 312130];

/// Default allowlist of incident types that count as domestic violence.
/// Values follow the Chicago Police Department primary-type vocabulary.
pub const DEFAULT_DV_TYPES: [&str; 10] = [
    "ASSAULT",
    "BATTERY",
    "CRIM SEXUAL ASSAULT",
    "CRIMINAL SEXUAL ASSAULT",
    "HOMICIDE",
    "INTIMIDATION",
    "KIDNAPPING",
    "OFFENSE INVOLVING CHILDREN",
    "SEX OFFENSE",
    "STALKING",
];

/// Default allowlist of home-related location descriptions.
pub const DEFAULT_HOME_LOCATIONS: [&str; 10] = [
    "APARTMENT",
    "CHA APARTMENT",
    "DRIVEWAY - RESIDENTIAL",
    "HOUSE",
    "RESIDENCE",
    "RESIDENCE - GARAGE",
    "RESIDENCE - PORCH / HALLWAY",
    "RESIDENCE - YARD (FRONT / BACK)",
    "RESIDENCE PORCH/HALLWAY",
    "RESIDENTIAL YARD (FRONT/BACK)",
];

/// Keeps POIs whose NAICS code is in `codes`.
pub fn filter_alcohol_pois(pois: &PoiTable, codes: &BTreeSet<Naics>) -> PoiTable {
    let kept = pois
        .records()
        .iter()
        .filter(|p| codes.contains(&p.naics))
        .cloned()
        .collect();
    PoiTable::new(kept).expect("subset of a keyed table has unique keys")
}

/// Allowlists for incident cleanup. Matching is case-insensitive and ignores
/// surrounding whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DvFilter {
    pub dv_types: BTreeSet<String>,
    pub home_locations: BTreeSet<String>,
}

impl Default for DvFilter {
    fn default() -> Self {
        Self {
            dv_types: DEFAULT_DV_TYPES.iter().map(|s| s.to_string()).collect(),
            home_locations: DEFAULT_HOME_LOCATIONS
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DvFilterReport {
    pub input: usize,
    /// Domestic flag false.
    pub not_domestic: usize,
    /// Flagged domestic but the crime type is not on the allowlist.
    pub mislabeled_type: usize,
    /// Domestic and allowlisted type, but outside a home-related location.
    pub public_space: usize,
    pub kept: usize,
}

fn normalize(s: &str) -> String {
    s.trim().to_uppercase()
}

pub fn filter_dv_incidents(
    incidents: &IncidentTable,
    filter: &DvFilter,
) -> (IncidentTable, DvFilterReport) {
    let types: BTreeSet<String> = filter.dv_types.iter().map(|s| normalize(s)).collect();
    let homes: BTreeSet<String> = filter.home_locations.iter().map(|s| normalize(s)).collect();
    let mut report = DvFilterReport {
        input: incidents.len(),
        ..Default::default()
    };
    let mut kept = Vec::new();
    for r in incidents.records() {
        if !r.domestic {
            report.not_domestic += 1;
        } else if !types.contains(&normalize(&r.primary_type)) {
            report.mislabeled_type += 1;
        } else if !homes.contains(&normalize(&r.location_description)) {
            report.public_space += 1;
        } else {
            kept.push(r.clone());
        }
    }
    report.kept = kept.len();
    let table = IncidentTable::new(kept).expect("subset of a keyed table has unique keys");
    (table, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Point;
    use crate::ingest::{IncidentRecord, OutletType, PoiRecord};
    use proptest::prelude::*;

    fn poi(id: &str, code: u32) -> PoiRecord {
        PoiRecord {
            poi_id: id.into(),
            naics: Naics(code),
            location: Point::new(0.0, 0.0),
            category_label: String::new(),
            outlet: OutletType::from_naics(Naics(code)),
        }
    }

    fn incident(id: &str, domestic: bool, ty: &str, loc: &str) -> IncidentRecord {
        IncidentRecord {
            incident_id: id.into(),
            location: Point::new(0.0, 0.0),
            domestic,
            primary_type: ty.into(),
            location_description: loc.into(),
        }
    }

    fn defaults() -> BTreeSet<Naics> {
        DEFAULT_ALCOHOL_NAICS.iter().map(|&c| Naics(c)).collect()
    }

    #[test]
    fn keeps_three_of_five() {
        let t = PoiTable::new(vec![
            poi("a", 445310),
            poi("b", 722511),
            poi("c", 312120),
            poi("d", 445110),
            poi("e", 722410),
        ])
        .unwrap();
        let f = filter_alcohol_pois(&t, &defaults());
        let ids: Vec<_> = f.records().iter().map(|p| p.poi_id.as_str()).collect();
        assert_eq!(ids, ["a", "c", "e"]);
        assert_eq!(f.records()[0].outlet, Some(OutletType::LiquorStore));
    }

    #[test]
    fn all_present_codes_is_identity() {
        let t = PoiTable::new(vec![poi("a", 445310), poi("b", 722511)]).unwrap();
        let codes = t.records().iter().map(|p| p.naics).collect();
        assert_eq!(filter_alcohol_pois(&t, &codes), t);
    }

    #[test]
    fn chicago_outlet_counts() {
        let mut recs = Vec::new();
        let mut n = 0;
        for (code, count) in [
            (445310, 410),
            (722410, 135),
            (312120, 103),
            (312130, 16),
            (722511, 50),
        ] {
            for _ in 0..count {
                recs.push(poi(&format!("p{n:04}"), code));
                n += 1;
            }
        }
        let f = filter_alcohol_pois(&PoiTable::new(recs).unwrap(), &defaults());
        let c = f.count_by_outlet();
        assert_eq!(c[&OutletType::LiquorStore], 410);
        assert_eq!(c[&OutletType::Brewery], 103);
        assert_eq!(c[&OutletType::Winery], 16);
        assert_eq!(c[&OutletType::DrinkingPlace], 135);
        assert_eq!(f.len(), 664);
    }

    #[test]
    fn dv_filter_stages() {
        let t = IncidentTable::new(vec![
            incident("1", true, "BATTERY", "Residence"),
            incident("2", true, "ARSON", "Residence"),
            incident("3", true, "BATTERY", "Street"),
            incident("4", false, "BATTERY", "Residence"),
            incident("5", true, "assault", " APARTMENT "),
            incident("6", true, "BATTERY", "Driveway - Residential"),
        ])
        .unwrap();
        let (kept, rep) = filter_dv_incidents(&t, &DvFilter::default());
        let ids: Vec<_> = kept
            .records()
            .iter()
            .map(|r| r.incident_id.as_str())
            .collect();
        assert_eq!(ids, ["1", "5", "6"]);
        assert_eq!(
            rep,
            DvFilterReport {
                input: 6,
                not_domestic: 1,
                mislabeled_type: 1,
                public_space: 1,
                kept: 3
            }
        );
    }

    proptest! {
        #[test]
        fn union_of_code_sets(codes in proptest::collection::vec(0usize..6, 0..12),
                              s1 in proptest::collection::btree_set(0usize..6, 0..6),
                              s2 in proptest::collection::btree_set(0usize..6, 0..6)) {
            const POOL: [u32; 6] = [445310, 722410, 312120, 312130, 445110, 722511];
            let t = PoiTable::new(codes.iter().enumerate().map(|(i, &c)| poi(&format!("p{i}"), POOL[c])).collect()).unwrap();
            let c1: BTreeSet<Naics> = s1.iter().map(|&i| Naics(POOL[i])).collect();
            let c2: BTreeSet<Naics> = s2.iter().map(|&i| Naics(POOL[i])).collect();
            let both: BTreeSet<Naics> = c1.union(&c2).copied().collect();
            let lhs: BTreeSet<String> = filter_alcohol_pois(&t, &both).records().iter().map(|p| p.poi_id.clone()).collect();
            let mut rhs: BTreeSet<String> = filter_alcohol_pois(&t, &c1).records().iter().map(|p| p.poi_id.clone()).collect();
            rhs.extend(filter_alcohol_pois(&t, &c2).records().iter().map(|p| p.poi_id.clone()));
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn dv_filter_idempotent(rows in proptest::collection::vec((any::<bool>(), 0usize..4, 0usize..4), 0..30)) {
            const TYPES: [&str; 4] = ["BATTERY", "ARSON", "THEFT", "ASSAULT"];
            const LOCS: [&str; 4] = ["RESIDENCE", "STREET", "APARTMENT", "GAS STATION"];
            let t = IncidentTable::new(rows.iter().enumerate()
                .map(|(i, &(d, ty, loc))| incident(&format!("i{i}"), d, TYPES[ty], LOCS[loc])).collect()).unwrap();
            let f = DvFilter::default();
            let (once, r1) = filter_dv_incidents(&t, &f);
            let (twice, r2) = filter_dv_incidents(&once, &f);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(r2.kept, r1.kept);
            prop_assert_eq!(r1.not_domestic + r1.mislabeled_type + r1.public_space + r1.kept, r1.input);
        }
    }
}
