use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{Map, Value};

use super::{CbgRecord, CbgTable};
use crate::error::{Error, Result};
use crate::geo::{Point, Polygon, EARTH_RADIUS_M};

const RESERVED: [&str; 4] = ["cbg_id", "population", "device_count", "area_km2"];

pub fn load_cbgs(path: impl AsRef<Path>, attribute_schema: &[String]) -> Result<CbgTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cbgs(&text, attribute_schema)
}

/// Parses a GeoJSON FeatureCollection of CBG polygons.
///
/// Every feature must carry `cbg_id`, `population` and `device_count`;
/// `area_km2` is optional and falls back to an equal-area planar estimate.
/// All other numeric properties are kept as attributes, and each name in
/// `attribute_schema` must be present on every feature.
pub fn parse_cbgs(text: &str, attribute_schema: &[String]) -> Result<CbgTable> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Json {
        context: "CBG GeoJSON".into(),
        source: e,
    })?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Parse {
            context: "CBG GeoJSON".into(),
            message: "top-level object is not a FeatureCollection".into(),
        });
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse {
            context: "CBG GeoJSON".into(),
            message: "missing `features` array".into(),
        })?;

    let mut records = Vec::with_capacity(features.len());
    for (i, feature) in features.iter().enumerate() {
        records.push(parse_feature(i, feature, attribute_schema)?);
    }
    CbgTable::new(records)
}

fn parse_feature(index: usize, feature: &Value, schema: &[String]) -> Result<CbgRecord> {
    let props = feature
        .get("properties")
        .and_then(Value::as_object)
        .ok_or_else(|| Error::Parse {
            context: format!("feature #{index}"),
            message: "missing properties".into(),
        })?;
    let cbg_id = match props.get("cbg_id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => {
            return Err(Error::Schema(format!(
                "feature #{index}: missing or empty `cbg_id`"
            )))
        }
    };
    let ctx = |message: String| Error::Parse {
        context: format!("feature {cbg_id}"),
        message,
    };

    let population = count_property(props, "population").map_err(|m| schema_err(&cbg_id, m))?;
    let device_count = count_property(props, "device_count").map_err(|m| schema_err(&cbg_id, m))?;

    let geometry = feature
        .get("geometry")
        .ok_or_else(|| ctx("missing geometry".into()))?;
    let polygon = parse_polygon(geometry).map_err(ctx)?;

    let area_km2 = match props.get("area_km2") {
        None | Some(Value::Null) => planar_area_km2(&polygon),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| schema_err(&cbg_id, "`area_km2` is not a number".into()))?,
    };
    if !(area_km2.is_finite() && area_km2 > 0.0) {
        return Err(Error::Geometry(format!(
            "feature {cbg_id}: area_km2 must be positive, got {area_km2}"
        )));
    }

    let mut attributes = BTreeMap::new();
    for (k, v) in props {
        if RESERVED.contains(&k.as_str()) {
            continue;
        }
        if let Some(x) = v.as_f64() {
            attributes.insert(k.clone(), x);
        }
    }
    for name in schema {
        match attributes.get(name) {
            Some(x) if x.is_finite() => {}
            Some(_) => {
                return Err(schema_err(
                    &cbg_id,
                    format!("attribute `{name}` is not finite"),
                ))
            }
            None => {
                return Err(schema_err(
                    &cbg_id,
                    format!("missing declared attribute `{name}`"),
                ))
            }
        }
    }

    Ok(CbgRecord {
        cbg_id,
        polygon,
        population,
        device_count,
        area_km2,
        attributes,
    })
}

fn schema_err(id: &str, message: String) -> Error {
    Error::Schema(format!("feature {id}: {message}"))
}

fn count_property(props: &Map<String, Value>, key: &str) -> std::result::Result<u64, String> {
    match props.get(key) {
        None | Some(Value::Null) => Err(format!("missing `{key}`")),
        Some(Value::Number(n)) => {
            if let Some(u) = n.as_u64() {
                Ok(u)
            } else if let Some(f) = n.as_f64().filter(|f| f.fract() == 0.0 && *f >= 0.0) {
                Ok(f as u64)
            } else {
                Err(format!("`{key}` must be a nonnegative integer, got {n}"))
            }
        }
        Some(other) => Err(format!(
            "`{key}` must be a nonnegative integer, got {other}"
        )),
    }
}

fn parse_polygon(geometry: &Value) -> std::result::Result<Polygon, String> {
    let kind = geometry.get("type").and_then(Value::as_str).unwrap_or("");
    let coords = geometry
        .get("coordinates")
        .and_then(Value::as_array)
        .ok_or("geometry has no coordinates")?;
    let rings_json = match kind {
        "Polygon" => coords,
        "MultiPolygon" if coords.len() == 1 => coords[0]
            .as_array()
            .ok_or("malformed MultiPolygon coordinates")?,
        "MultiPolygon" => return Err("multi-part polygons are not supported".into()),
        other => return Err(format!("unsupported geometry type `{other}`")),
    };
    if rings_json.is_empty() {
        return Err("polygon has no rings".into());
    }
    let mut rings = Vec::with_capacity(rings_json.len());
    for (r, ring) in rings_json.iter().enumerate() {
        let pts = ring.as_array().ok_or("ring is not an array")?;
        let mut ring_pts = Vec::with_capacity(pts.len());
        for p in pts {
            let xy = p.as_array().ok_or("vertex is not an array")?;
            let (x, y) = match (
                xy.first().and_then(Value::as_f64),
                xy.get(1).and_then(Value::as_f64),
            ) {
                (Some(x), Some(y)) => (x, y),
                _ => return Err("vertex is not a numeric pair".into()),
            };
            if !(-180.0..=180.0).contains(&x) || !(-90.0..=90.0).contains(&y) {
                return Err(format!("vertex ({x}, {y}) out of lon/lat range"));
            }
            ring_pts.push(Point::new(x, y));
        }
        if ring_pts.len() < 4 {
            return Err(format!(
                "ring {r} has {} vertices, need at least 4",
                ring_pts.len()
            ));
        }
        if ring_pts.first() != ring_pts.last() {
            return Err(format!("ring {r} is not closed"));
        }
        rings.push(ring_pts);
    }
    let exterior = rings.remove(0);
    Ok(Polygon::new(exterior, rings))
}

/// Area in km² from an equirectangular projection about the polygon's mean
/// latitude. Accurate to well under a percent for block-group sized polygons.
pub fn planar_area_km2(poly: &Polygon) -> f64 {
    let lat0 = poly.exterior.iter().map(|p| p.y).sum::<f64>() / poly.exterior.len() as f64;
    let ky = EARTH_RADIUS_M * std::f64::consts::PI / 180.0 / 1000.0;
    let kx = ky * lat0.to_radians().cos();
    poly.area() * kx * ky
}
