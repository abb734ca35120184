//! Planar and spherical geometry for CBG polygons: containment, centroids,
//! great-circle distances, nearest neighbours and spatial weights.
//!
//! Coordinates are `(lon, lat)` degrees everywhere. Containment and centroids
//! treat degrees as planar coordinates, which is adequate at city scale;
//! distances are haversine.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{CbgTable, IncidentTable};

/// Mean earth radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    /// Longitude, degrees.
    pub x: f64,
    /// Latitude, degrees.
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Outer ring plus optional holes. Rings are closed (first vertex repeated last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub exterior: Vec<Point>,
    pub holes: Vec<Vec<Point>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Inside,
    Boundary,
    Outside,
}

impl Polygon {
    pub fn new(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Self {
        Self { exterior, holes }
    }

    /// Axis-aligned rectangle, counter-clockwise.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new(
            vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
                Point::new(x0, y0),
            ],
            Vec::new(),
        )
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    /// Planar area in degree² (outer minus holes).
    pub fn area(&self) -> f64 {
        let outer = ring_signed_area(&self.exterior).abs();
        let holes: f64 = self.holes.iter().map(|h| ring_signed_area(h).abs()).sum();
        outer - holes
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.exterior {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Even-odd classification of `p`; a point on any ring edge is `Boundary`.
    pub fn locate(&self, p: Point) -> Location {
        let mut inside = false;
        for ring in self.rings() {
            for w in ring.windows(2) {
                if on_segment(p, w[0], w[1]) {
                    return Location::Boundary;
                }
            }
            if ray_crossings_odd(p, ring) {
                inside = !inside;
            }
        }
        if inside {
            Location::Inside
        } else {
            Location::Outside
        }
    }
}

fn ring_signed_area(ring: &[Point]) -> f64 {
    ring.windows(2)
        .map(|w| w[0].x * w[1].y - w[1].x * w[0].y)
        .sum::<f64>()
        / 2.0
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    cross == 0.0
        && p.x >= a.x.min(b.x)
        && p.x <= a.x.max(b.x)
        && p.y >= a.y.min(b.y)
        && p.y <= a.y.max(b.y)
}

fn ray_crossings_odd(p: Point, ring: &[Point]) -> bool {
    let mut odd = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                odd = !odd;
            }
        }
    }
    odd
}

/// Containment test; boundary points count as contained.
pub fn point_in_polygon(p: Point, poly: &Polygon) -> Result<bool> {
    if poly.area() <= 0.0 {
        return Err(Error::Geometry("polygon has zero area".into()));
    }
    Ok(poly.locate(p) != Location::Outside)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub cbg_id: String,
    pub point: Point,
}

/// Area-weighted planar centroid of the outer ring minus holes.
pub fn centroid(poly: &Polygon) -> Result<Point> {
    let mut area = 0.0;
    let (mut mx, mut my) = (0.0, 0.0);
    for (i, ring) in poly.rings().enumerate() {
        let a = ring_signed_area(ring);
        let (mut rx, mut ry) = (0.0, 0.0);
        for w in ring.windows(2) {
            let c = w[0].x * w[1].y - w[1].x * w[0].y;
            rx += (w[0].x + w[1].x) * c;
            ry += (w[0].y + w[1].y) * c;
        }
        // Orient every ring positively, then subtract holes.
        let s = if a < 0.0 { -1.0 } else { 1.0 };
        let sign = if i == 0 { s } else { -s };
        area += sign * a;
        mx += sign * rx / 6.0;
        my += sign * ry / 6.0;
    }
    if area.abs() <= 0.0 || !area.is_finite() {
        return Err(Error::Geometry(
            "cannot take centroid of zero-area polygon".into(),
        ));
    }
    Ok(Point::new(mx / area, my / area))
}

pub fn centroids(cbgs: &CbgTable) -> Result<Vec<Centroid>> {
    cbgs.iter()
        .map(|r| {
            centroid(&r.polygon)
                .map(|point| Centroid {
                    cbg_id: r.cbg_id.clone(),
                    point,
                })
                .map_err(|e| Error::Geometry(format!("cbg {}: {e}", r.cbg_id)))
        })
        .collect()
}

/// Haversine great-circle distance in metres.
pub fn distance(p: Point, q: Point) -> f64 {
    let (lat1, lat2) = (p.y.to_radians(), q.y.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (q.x - p.x).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Full pairwise distance matrix (row-major, n×n).
pub fn distance_matrix(points: &[Point]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n];
    d.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
        for (j, slot) in row.iter_mut().enumerate() {
            if i != j {
                *slot = distance(points[i], points[j]);
            }
        }
    });
    d
}

/// Per point, the `k` nearest other points as `(index, metres)`, ascending by
/// distance with ties going to the lower index.
pub fn knn(points: &[Point], k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = points.len();
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!(
            "knn needs 1 <= k < n, got k = {k}, n = {n}"
        )));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut row: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, distance(points[i], points[j])))
                .collect();
            row.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            row.truncate(k);
            row
        })
        .collect())
}

/// Count of incidents per CBG, aligned with the CBG table order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub cbg_ids: Vec<String>,
    pub counts: Vec<u64>,
    pub unassigned: usize,
}

impl Assignment {
    pub fn count_for(&self, cbg_id: &str) -> Option<u64> {
        self.cbg_ids
            .binary_search_by(|c| c.as_str().cmp(cbg_id))
            .ok()
            .map(|i| self.counts[i])
    }

    pub fn assigned(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Index of the CBG containing `p`. A point on a shared edge goes to the
/// candidate with the smallest `cbg_id` (tables are id-sorted, so the first).
pub fn locate_point(p: Point, cbgs: &CbgTable, boxes: &[(Point, Point)]) -> Option<usize> {
    cbgs.records().iter().enumerate().find_map(|(j, r)| {
        let (lo, hi) = boxes[j];
        if p.x < lo.x || p.x > hi.x || p.y < lo.y || p.y > hi.y {
            return None;
        }
        (r.polygon.locate(p) != Location::Outside).then_some(j)
    })
}

pub fn assign_incidents(incidents: &IncidentTable, cbgs: &CbgTable) -> Assignment {
    let boxes: Vec<_> = cbgs.iter().map(|r| r.polygon.bbox()).collect();
    let hits: Vec<Option<usize>> = incidents
        .records()
        .par_iter()
        .map(|inc| locate_point(inc.location, cbgs, &boxes))
        .collect();
    let mut counts = vec![0u64; cbgs.len()];
    let mut unassigned = 0;
    for h in hits {
        match h {
            Some(j) => counts[j] += 1,
            None => unassigned += 1,
        }
    }
    Assignment {
        cbg_ids: cbgs.ids().into_iter().map(String::from).collect(),
        counts,
        unassigned,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightsScheme {
    /// Units sharing at least one boundary vertex.
    #[default]
    Queen,
    /// Units sharing at least one boundary edge.
    Rook,
    Knn {
        k: usize,
    },
}

impl std::fmt::Display for WeightsScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightsScheme::Queen => write!(f, "queen"),
            WeightsScheme::Rook => write!(f, "rook"),
            WeightsScheme::Knn { k } => write!(f, "knn({k})"),
        }
    }
}

/// Row-standardized sparse spatial weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightsMatrix {
    pub n: usize,
    pub scheme: WeightsScheme,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl WeightsMatrix {
    /// Row-standardizes binary neighbour lists. Self-links and duplicates are dropped.
    pub fn from_neighbors(scheme: WeightsScheme, neighbors: Vec<Vec<usize>>) -> Self {
        let n = neighbors.len();
        let rows = neighbors
            .into_iter()
            .enumerate()
            .map(|(i, nb)| {
                let set: BTreeSet<usize> = nb.into_iter().filter(|&j| j != i).collect();
                let w = 1.0 / set.len().max(1) as f64;
                set.into_iter().map(|j| (j, w)).collect()
            })
            .collect();
        Self { n, scheme, rows }
    }

    pub fn isolates(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.rows[i].is_empty()).collect()
    }

    /// Weights among the units `keep` (ascending, renumbered `0..keep.len()`),
    /// re-standardized from the surviving neighbour links.
    pub fn restrict(&self, keep: &[usize]) -> Self {
        let mut new_index = vec![usize::MAX; self.n];
        for (k, &i) in keep.iter().enumerate() {
            new_index[i] = k;
        }
        let neighbors = keep
            .iter()
            .map(|&i| {
                self.rows[i]
                    .iter()
                    .filter(|&&(j, w)| w > 0.0 && new_index[j] != usize::MAX)
                    .map(|&(j, _)| new_index[j])
                    .collect()
            })
            .collect();
        Self::from_neighbors(self.scheme, neighbors)
    }

    /// Sum of all weights.
    pub fn total(&self) -> f64 {
        self.rows.iter().flatten().map(|&(_, w)| w).sum()
    }
}

fn vertex_key(p: Point) -> (i64, i64) {
    ((p.x * 1e9).round() as i64, (p.y * 1e9).round() as i64)
}

pub fn spatial_weights(cbgs: &CbgTable, scheme: WeightsScheme) -> Result<WeightsMatrix> {
    let n = cbgs.len();
    if n < 2 {
        return Err(Error::Parameter(
            "spatial weights need at least 2 units".into(),
        ));
    }
    let neighbors: Vec<Vec<usize>> = match scheme {
        WeightsScheme::Knn { k } => {
            let pts: Vec<Point> = centroids(cbgs)?.into_iter().map(|c| c.point).collect();
            knn(&pts, k)?
                .into_iter()
                .map(|row| row.into_iter().map(|(j, _)| j).collect())
                .collect()
        }
        WeightsScheme::Queen | WeightsScheme::Rook => {
            let mut owners: HashMap<_, BTreeSet<usize>> = HashMap::new();
            for (i, r) in cbgs.iter().enumerate() {
                for ring in r.polygon.rings() {
                    if scheme == WeightsScheme::Queen {
                        for p in ring {
                            owners
                                .entry((vertex_key(*p), (0, 0)))
                                .or_default()
                                .insert(i);
                        }
                    } else {
                        for w in ring.windows(2) {
                            let (a, b) = (vertex_key(w[0]), vertex_key(w[1]));
                            let key = if a <= b { (a, b) } else { (b, a) };
                            owners.entry(key).or_default().insert(i);
                        }
                    }
                }
            }
            let mut nb: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
            for set in owners.values() {
                for &i in set {
                    nb[i].extend(set.iter().copied().filter(|&j| j != i));
                }
            }
            nb.into_iter().map(|s| s.into_iter().collect()).collect()
        }
    };
    let w = WeightsMatrix::from_neighbors(scheme, neighbors);
    for i in w.isolates() {
        log::warn!(
            "unit {} has no {} neighbours",
            cbgs.records()[i].cbg_id,
            scheme
        );
    }
    Ok(w)
}
