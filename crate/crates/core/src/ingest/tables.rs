use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use super::{
    IncidentRecord, IncidentTable, Loaded, Naics, OutletType, PoiRecord, PoiTable, RowRejection,
    VisitRecord, VisitTable,
};
use crate::error::{Error, Result};
use crate::geo::Point;

const POI_COLUMNS: [&str; 5] = ["poi_id", "naics", "lon", "lat", "category_label"];
const VISIT_COLUMNS: [&str; 3] = ["poi_id", "cbg_id", "visitor_count"];
const INCIDENT_COLUMNS: [&str; 6] = [
    "incident_id",
    "lon",
    "lat",
    "domestic",
    "primary_type",
    "location_description",
];

/// Column positions resolved from the header row.
struct Header<const N: usize>([usize; N]);

impl<const N: usize> Header<N> {
    fn resolve(file: &str, headers: &csv::StringRecord, wanted: [&str; N]) -> Result<Self> {
        let mut pos = [0; N];
        for (slot, name) in pos.iter_mut().zip(wanted) {
            *slot = headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Schema(format!("{file}: missing column `{name}`")))?;
        }
        Ok(Self(pos))
    }

    fn get<'r>(&self, rec: &'r csv::StringRecord, k: usize) -> &'r str {
        rec.get(self.0[k]).unwrap_or("").trim()
    }
}

/// Drives a CSV source, handing each data row to `parse` and collecting
/// rejections. Duplicate keys (as reported by `key`) are rejected after the
/// first occurrence.
fn read_rows<R: Read, T, const N: usize>(
    file: &str,
    source: R,
    columns: [&str; N],
    parse: impl Fn(&Header<N>, &csv::StringRecord) -> std::result::Result<T, String>,
    key: impl Fn(&T) -> String,
) -> Result<(Vec<T>, usize, Vec<RowRejection>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            context: file.into(),
            message: format!("cannot read header row: {e}"),
        })?
        .clone();
    let header = Header::resolve(file, &headers, columns)?;

    let mut out = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        rows += 1;
        let row = i + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowRejection {
                    row,
                    message: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        match parse(&header, &rec) {
            Ok(t) => {
                let k = key(&t);
                if seen.insert(k.clone()) {
                    out.push(t);
                } else {
                    rejected.push(RowRejection {
                        row,
                        message: format!("duplicate key `{k}`"),
                    });
                }
            }
            Err(message) => rejected.push(RowRejection { row, message }),
        }
    }
    for r in &rejected {
        log::warn!("{file}: row {} rejected: {}", r.row, r.message);
    }
    Ok((out, rows, rejected))
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn nonempty<'a>(s: &'a str, what: &str) -> std::result::Result<&'a str, String> {
    if s.is_empty() {
        Err(format!("empty `{what}`"))
    } else {
        Ok(s)
    }
}

fn coordinate(lon: &str, lat: &str) -> std::result::Result<Point, String> {
    let x: f64 = lon
        .parse()
        .map_err(|_| format!("lon `{lon}` is not a number"))?;
    let y: f64 = lat
        .parse()
        .map_err(|_| format!("lat `{lat}` is not a number"))?;
    if !(-180.0..=180.0).contains(&x) {
        return Err(format!("lon {x} outside [-180, 180]"));
    }
    if !(-90.0..=90.0).contains(&y) {
        return Err(format!("lat {y} outside [-90, 90]"));
    }
    Ok(Point::new(x, y))
}

pub fn load_pois(path: impl AsRef<Path>) -> Result<Loaded<PoiTable>> {
    let path = path.as_ref();
    parse_pois(open(path)?, &path.display().to_string())
}

pub fn parse_pois<R: Read>(source: R, file: &str) -> Result<Loaded<PoiTable>> {
    let (records, input_rows, rejected) = read_rows(
        file,
        source,
        POI_COLUMNS,
        |h, rec| {
            let poi_id = nonempty(h.get(rec, 0), "poi_id")?.to_string();
            let naics_raw = h.get(rec, 1);
            let naics = Naics::parse(naics_raw)
                .ok_or_else(|| format!("naics `{naics_raw}` is not a 6-digit code"))?;
            let location = coordinate(h.get(rec, 2), h.get(rec, 3))?;
            Ok(PoiRecord {
                poi_id,
                naics,
                location,
                category_label: h.get(rec, 4).to_string(),
                outlet: OutletType::from_naics(naics),
            })
        },
        |r| r.poi_id.clone(),
    )?;
    Ok(Loaded {
        table: PoiTable::new(records)?,
        input_rows,
        rejected,
    })
}

pub fn load_visits(path: impl AsRef<Path>) -> Result<Loaded<VisitTable>> {
    let path = path.as_ref();
    parse_visits(open(path)?, &path.display().to_string())
}

pub fn parse_visits<R: Read>(source: R, file: &str) -> Result<Loaded<VisitTable>> {
    let (records, input_rows, rejected) = read_rows(
        file,
        source,
        VISIT_COLUMNS,
        |h, rec| {
            let poi_id = nonempty(h.get(rec, 0), "poi_id")?.to_string();
            let cbg_id = nonempty(h.get(rec, 1), "cbg_id")?.to_string();
            let raw = h.get(rec, 2);
            let visitor_count: u64 = raw
                .parse()
                .map_err(|_| format!("visitor_count `{raw}` is not a nonnegative integer"))?;
            if visitor_count == 0 {
                return Err("visitor_count must be at least 1".into());
            }
            Ok(VisitRecord {
                poi_id,
                cbg_id,
                visitor_count,
            })
        },
        |r| format!("{}|{}", r.poi_id, r.cbg_id),
    )?;
    Ok(Loaded {
        table: VisitTable::new(records)?,
        input_rows,
        rejected,
    })
}

pub fn load_incidents(path: impl AsRef<Path>) -> Result<Loaded<IncidentTable>> {
    let path = path.as_ref();
    parse_incidents(open(path)?, &path.display().to_string())
}

pub fn parse_incidents<R: Read>(source: R, file: &str) -> Result<Loaded<IncidentTable>> {
    let (records, input_rows, rejected) = read_rows(
        file,
        source,
        INCIDENT_COLUMNS,
        |h, rec| {
            let incident_id = nonempty(h.get(rec, 0), "incident_id")?.to_string();
            let location = coordinate(h.get(rec, 1), h.get(rec, 2))?;
            let flag = h.get(rec, 3);
            let domestic = if flag.eq_ignore_ascii_case("true") {
                true
            } else if flag.eq_ignore_ascii_case("false") {
                false
            } else {
                return Err(format!("domestic `{flag}` is not true/false"));
            };
            Ok(IncidentRecord {
                incident_id,
                location,
                domestic,
                primary_type: h.get(rec, 4).to_string(),
                location_description: h.get(rec, 5).to_string(),
            })
        },
        |r| r.incident_id.clone(),
    )?;
    Ok(Loaded {
        table: IncidentTable::new(records)?,
        input_rows,
        rejected,
    })
}
