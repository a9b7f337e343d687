//! Building footprints with LoD2 attributes and a grid spatial index.
//!
//! Footprints come from a GeoJSON `FeatureCollection` of `Polygon` (or
//! `MultiPolygon`) features. Recognised properties: `id`, `floors`,
//! `height_m`, `roof_type` and `function`. Interior rings are dropped.

use std::collections::{HashMap, HashSet};
use std::fmt;

use geojson::{Feature, FeatureCollection, GeoJson, Geometry, JsonObject, JsonValue};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{project_local, unproject_local, LonLat, Xy, METRES_PER_DEG};
use crate::polygon;

#[derive(Debug, Error)]
pub enum FootprintError {
    #[error("malformed footprint document: {0}")]
    MalformedDocument(String),
    #[error("footprint collection contains no usable polygons")]
    EmptyCollection,
    #[error("footprint {0} has a degenerate ring")]
    DegenerateRing(String),
    #[error("grid cell size must be positive, got {0}")]
    InvalidCellSize(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RoofType {
    Flat,
    Nonflat,
    #[default]
    Unknown,
}

impl RoofType {
    pub fn from_tag(tag: &str) -> Self {
        match tag.to_ascii_lowercase().as_str() {
            "flat" => RoofType::Flat,
            "nonflat" | "non-flat" | "pitched" | "gabled" | "hipped" => RoofType::Nonflat,
            _ => RoofType::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoofType::Flat => "flat",
            RoofType::Nonflat => "nonflat",
            RoofType::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BuildingFunction {
    Residential,
    Commercial,
    Other,
    #[default]
    Unknown,
}

impl BuildingFunction {
    pub fn from_tag(tag: &str) -> Self {
        match tag.to_ascii_lowercase().as_str() {
            "residential" => BuildingFunction::Residential,
            "commercial" => BuildingFunction::Commercial,
            "unknown" | "" => BuildingFunction::Unknown,
            _ => BuildingFunction::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BuildingFunction::Residential => "residential",
            BuildingFunction::Commercial => "commercial",
            BuildingFunction::Other => "other",
            BuildingFunction::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BuildingAttributes {
    pub floor_count: Option<u32>,
    pub height_m: Option<f64>,
    pub roof_type: RoofType,
    pub function: BuildingFunction,
}

/// Why a ring was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingDefect {
    TooFewVertices,
    ZeroArea,
    SelfIntersecting,
    NonFinite,
}

impl fmt::Display for RingDefect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RingDefect::TooFewVertices => "fewer than 3 distinct vertices",
            RingDefect::ZeroArea => "zero area",
            RingDefect::SelfIntersecting => "self-intersecting",
            RingDefect::NonFinite => "non-finite coordinate",
        })
    }
}

/// A validated building footprint. The exterior ring is closed and
/// counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    id: String,
    exterior: Vec<LonLat>,
    pub attrs: BuildingAttributes,
}

impl Footprint {
    pub fn new(id: impl Into<String>, ring: &[LonLat], attrs: BuildingAttributes) -> Result<Self, RingDefect> {
        if ring.iter().any(|p| !p.lon.is_finite() || !p.lat.is_finite()) {
            return Err(RingDefect::NonFinite);
        }
        let mut pts: Vec<LonLat> = Vec::with_capacity(ring.len() + 1);
        for &p in ring {
            if pts.last() != Some(&p) {
                pts.push(p);
            }
        }
        while pts.len() > 1 && pts.first() == pts.last() {
            pts.pop();
        }
        let distinct: HashSet<(u64, u64)> = pts.iter().map(|p| (p.lon.to_bits(), p.lat.to_bits())).collect();
        if distinct.len() < 3 {
            return Err(RingDefect::TooFewVertices);
        }
        pts.push(pts[0]);

        // Orientation and simplicity are affine-invariant, so raw degrees do.
        let plane: Vec<Xy> = pts.iter().map(|p| Xy::new(p.lon, p.lat)).collect();
        let area = polygon::signed_area(&plane);
        let collinear = plane.iter().all(|q| plane[1].sub(plane[0]).cross(q.sub(plane[0])) == 0.0);
        if !collinear && polygon::is_self_intersecting(&plane) {
            return Err(RingDefect::SelfIntersecting);
        }
        if area == 0.0 {
            return Err(RingDefect::ZeroArea);
        }
        if area < 0.0 {
            pts.reverse();
        }
        Ok(Self { id: id.into(), exterior: pts, attrs })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Closed, counter-clockwise exterior ring.
    pub fn exterior(&self) -> &[LonLat] {
        &self.exterior
    }

    /// Exterior ring on the tangent plane at `origin`.
    pub fn project(&self, origin: LonLat) -> Vec<Xy> {
        self.exterior.iter().map(|&p| project_local(origin, p)).collect()
    }

    pub fn bounds(&self) -> (LonLat, LonLat) {
        let mut lo = LonLat::new(f64::INFINITY, f64::INFINITY);
        let mut hi = LonLat::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.exterior {
            lo.lon = lo.lon.min(p.lon);
            lo.lat = lo.lat.min(p.lat);
            hi.lon = hi.lon.max(p.lon);
            hi.lat = hi.lat.max(p.lat);
        }
        (lo, hi)
    }

    /// Whether the footprint meets the circle of `radius_m` about `center`,
    /// measured on the tangent plane at `center`.
    pub fn intersects_circle(&self, center: LonLat, radius_m: f64) -> bool {
        polygon::intersects_disc(&self.project(center), Xy::default(), radius_m)
    }
}

/// Area centroid on the tangent plane at the first vertex, returned as lon/lat.
pub fn centroid(fp: &Footprint) -> Result<LonLat, FootprintError> {
    let origin = fp.exterior[0];
    polygon::area_centroid(&fp.project(origin))
        .map(|c| unproject_local(origin, c))
        .ok_or_else(|| FootprintError::DegenerateRing(fp.id.clone()))
}

/// Uniform lon/lat grid mapping cells to footprint indices.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cell_size_deg: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl SpatialIndex {
    pub const DEFAULT_CELL_SIZE_DEG: f64 = 0.005;

    fn build(footprints: &[Footprint], cell_size_deg: f64) -> Self {
        let mut idx = Self { cell_size_deg, cells: HashMap::new() };
        for (i, fp) in footprints.iter().enumerate() {
            let (lo, hi) = fp.bounds();
            let (c0, c1) = (idx.cell(lo), idx.cell(hi));
            for cx in c0.0..=c1.0 {
                for cy in c0.1..=c1.1 {
                    idx.cells.entry((cx, cy)).or_default().push(i);
                }
            }
        }
        idx
    }

    fn cell(&self, p: LonLat) -> (i64, i64) {
        ((p.lon / self.cell_size_deg).floor() as i64, (p.lat / self.cell_size_deg).floor() as i64)
    }

    pub fn cell_size_deg(&self) -> f64 {
        self.cell_size_deg
    }

    /// Indices of every footprint registered in a cell overlapping the box.
    fn candidates(&self, lo: LonLat, hi: LonLat) -> Vec<usize> {
        let (c0, c1) = (self.cell(lo), self.cell(hi));
        let mut out = Vec::new();
        for cx in c0.0..=c1.0 {
            for cy in c0.1..=c1.1 {
                if let Some(ids) = self.cells.get(&(cx, cy)) {
                    out.extend_from_slice(ids);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// A feature dropped while loading.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureIssue {
    pub index: usize,
    pub id: Option<String>,
    pub reason: String,
}

/// Immutable set of footprints plus its spatial index.
#[derive(Debug, Clone)]
pub struct FootprintStore {
    footprints: Vec<Footprint>,
    by_id: HashMap<String, usize>,
    index: SpatialIndex,
}

impl FootprintStore {
    pub fn from_footprints(footprints: Vec<Footprint>, cell_size_deg: f64) -> Result<Self, FootprintError> {
        if !(cell_size_deg > 0.0 && cell_size_deg.is_finite()) {
            return Err(FootprintError::InvalidCellSize(cell_size_deg));
        }
        if footprints.is_empty() {
            return Err(FootprintError::EmptyCollection);
        }
        let by_id = footprints.iter().enumerate().map(|(i, f)| (f.id.clone(), i)).collect();
        let index = SpatialIndex::build(&footprints, cell_size_deg);
        Ok(Self { footprints, by_id, index })
    }

    pub fn len(&self) -> usize {
        self.footprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.footprints.is_empty()
    }

    pub fn footprints(&self) -> &[Footprint] {
        &self.footprints
    }

    pub fn get(&self, id: &str) -> Option<&Footprint> {
        self.by_id.get(id).map(|&i| &self.footprints[i])
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    /// Footprints meeting the circle of `radius_m` about `center`, in store order.
    pub fn query_buffer(&self, center: LonLat, radius_m: f64) -> Vec<&Footprint> {
        let dlat = radius_m / METRES_PER_DEG;
        let dlon = radius_m / (METRES_PER_DEG * center.lat.to_radians().cos());
        // pad by one part in 1e9 against rounding at the box edge
        let pad = 1e-9 * (1.0 + dlon.abs());
        let lo = LonLat::new(center.lon - dlon - pad, center.lat - dlat - pad);
        let hi = LonLat::new(center.lon + dlon + pad, center.lat + dlat + pad);
        self.index
            .candidates(lo, hi)
            .into_iter()
            .map(|i| &self.footprints[i])
            .filter(|fp| fp.intersects_circle(center, radius_m))
            .collect()
    }

    /// Serializes back to a GeoJSON `FeatureCollection` that [`load_footprints`] reads.
    pub fn to_geojson(&self) -> String {
        let features = self.footprints.iter().map(footprint_to_feature).collect();
        let fc = FeatureCollection { bbox: None, features, foreign_members: None };
        GeoJson::FeatureCollection(fc).to_string()
    }
}

fn footprint_to_feature(fp: &Footprint) -> Feature {
    let ring: Vec<Vec<f64>> = fp.exterior.iter().map(|p| vec![p.lon, p.lat]).collect();
    let mut props = JsonObject::new();
    props.insert("id".into(), JsonValue::from(fp.id.clone()));
    if let Some(f) = fp.attrs.floor_count {
        props.insert("floors".into(), JsonValue::from(f));
    }
    if let Some(h) = fp.attrs.height_m {
        props.insert("height_m".into(), JsonValue::from(h));
    }
    props.insert("roof_type".into(), JsonValue::from(fp.attrs.roof_type.as_str()));
    props.insert("function".into(), JsonValue::from(fp.attrs.function.as_str()));
    Feature {
        bbox: None,
        geometry: Some(Geometry::new(geojson::Value::Polygon(vec![ring]))),
        id: Some(geojson::feature::Id::String(fp.id.clone())),
        properties: Some(props),
        foreign_members: None,
    }
}

#[derive(Debug)]
pub struct LoadedStore {
    pub store: FootprintStore,
    pub issues: Vec<FeatureIssue>,
}

/// Parses a GeoJSON `FeatureCollection` into an indexed store.
pub fn load_footprints(document: &str, cell_size_deg: f64) -> Result<LoadedStore, FootprintError> {
    let gj: GeoJson = document.parse().map_err(|e: geojson::Error| FootprintError::MalformedDocument(e.to_string()))?;
    let GeoJson::FeatureCollection(fc) = gj else {
        return Err(FootprintError::MalformedDocument("expected a FeatureCollection".into()));
    };
    let mut footprints = Vec::new();
    let mut issues = Vec::new();
    let mut seen = HashSet::new();
    for (index, feature) in fc.features.iter().enumerate() {
        let id = feature_id(feature);
        let mut issue = |reason: String| {
            log::warn!("dropping footprint feature {index} ({id:?}): {reason}");
            issues.push(FeatureIssue { index, id: id.clone(), reason });
        };
        let Some(fid) = id.clone() else {
            issue("missing id".into());
            continue;
        };
        if !seen.insert(fid.clone()) {
            issue("duplicate id".into());
            continue;
        }
        let ring = match exterior_ring(feature) {
            Ok((ring, had_holes)) => {
                if had_holes {
                    log::warn!("footprint {fid}: interior rings ignored");
                }
                ring
            }
            Err(reason) => {
                issue(reason);
                continue;
            }
        };
        let attrs = match attributes(feature.properties.as_ref()) {
            Ok(a) => a,
            Err(reason) => {
                issue(reason);
                continue;
            }
        };
        match Footprint::new(fid, &ring, attrs) {
            Ok(fp) => footprints.push(fp),
            Err(defect) => issue(defect.to_string()),
        }
    }
    let store = FootprintStore::from_footprints(footprints, cell_size_deg)?;
    Ok(LoadedStore { store, issues })
}

fn feature_id(f: &Feature) -> Option<String> {
    match &f.id {
        Some(geojson::feature::Id::String(s)) => return Some(s.clone()),
        Some(geojson::feature::Id::Number(n)) => return Some(n.to_string()),
        None => {}
    }
    match f.properties.as_ref()?.get("id")? {
        JsonValue::String(s) => Some(s.clone()),
        JsonValue::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

type Ring = Vec<LonLat>;

fn to_ring(coords: &[Vec<f64>]) -> Result<Ring, String> {
    coords
        .iter()
        .map(|c| match c.as_slice() {
            [lon, lat, ..] => Ok(LonLat::new(*lon, *lat)),
            _ => Err("position with fewer than 2 coordinates".to_string()),
        })
        .collect()
}

fn exterior_ring(f: &Feature) -> Result<(Ring, bool), String> {
    let geom = f.geometry.as_ref().ok_or("missing geometry")?;
    match &geom.value {
        geojson::Value::Polygon(rings) => {
            let outer = rings.first().ok_or("polygon without rings")?;
            Ok((to_ring(outer)?, rings.len() > 1))
        }
        geojson::Value::MultiPolygon(polys) => {
            // keep the largest part
            let mut best: Option<(f64, Ring, bool)> = None;
            for rings in polys {
                let Some(outer) = rings.first() else { continue };
                let ring = to_ring(outer)?;
                let plane: Vec<Xy> = ring.iter().map(|p| Xy::new(p.lon, p.lat)).collect();
                let area = polygon::signed_area(&plane).abs();
                if best.as_ref().is_none_or(|b| area > b.0) {
                    best = Some((area, ring, rings.len() > 1));
                }
            }
            if polys.len() > 1 {
                log::warn!("multipolygon with {} parts reduced to its largest part", polys.len());
            }
            best.map(|(_, r, h)| (r, h)).ok_or_else(|| "empty multipolygon".to_string())
        }
        other => Err(format!("unsupported geometry type {}", other.type_name())),
    }
}

fn attributes(props: Option<&JsonObject>) -> Result<BuildingAttributes, String> {
    let mut a = BuildingAttributes::default();
    let Some(props) = props else { return Ok(a) };
    match props.get("floors") {
        None | Some(JsonValue::Null) => {}
        Some(v) => {
            let n = v.as_u64().filter(|&n| n >= 1 && n <= u32::MAX as u64).ok_or("floors must be an integer >= 1")?;
            a.floor_count = Some(n as u32);
        }
    }
    match props.get("height_m") {
        None | Some(JsonValue::Null) => {}
        Some(v) => {
            let h = v.as_f64().filter(|h| *h > 0.0 && h.is_finite()).ok_or("height_m must be > 0")?;
            a.height_m = Some(h);
        }
    }
    if let Some(JsonValue::String(s)) = props.get("roof_type") {
        a.roof_type = RoofType::from_tag(s);
    }
    if let Some(JsonValue::String(s)) = props.get("function") {
        a.function = BuildingFunction::from_tag(s);
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_feature(id: &str, lon: f64, lat: f64, s: f64, cw: bool) -> String {
        let mut ring = vec![[lon, lat], [lon + s, lat], [lon + s, lat + s], [lon, lat + s], [lon, lat]];
        if cw {
            ring.reverse();
        }
        format!(
            r#"{{"type":"Feature","properties":{{"id":"{id}","floors":3,"height_m":9.5,"roof_type":"flat","function":"residential"}},
               "geometry":{{"type":"Polygon","coordinates":[{}]}}}}"#,
            serde_json::to_string(&ring).unwrap()
        )
    }

    fn collection(features: &[String]) -> String {
        format!(r#"{{"type":"FeatureCollection","features":[{}]}}"#, features.join(","))
    }

    #[test]
    fn loads_single_square() {
        let doc = collection(&[square_feature("a", 11.5, 48.1, 0.0001, false)]);
        let loaded = load_footprints(&doc, 0.005).unwrap();
        assert_eq!(loaded.store.len(), 1);
        let fp = loaded.store.get("a").unwrap();
        assert_eq!(fp.attrs.floor_count, Some(3));
        assert_eq!(fp.attrs.roof_type, RoofType::Flat);
    }

    #[test]
    fn clockwise_ring_is_reoriented() {
        let doc = collection(&[square_feature("a", 11.5, 48.1, 0.0001, true)]);
        let store = load_footprints(&doc, 0.005).unwrap().store;
        let ring: Vec<Xy> = store.footprints()[0].exterior().iter().map(|p| Xy::new(p.lon, p.lat)).collect();
        assert!(polygon::signed_area(&ring) > 0.0);
    }

    #[test]
    fn bowtie_is_rejected_with_log_entry() {
        let mut feats: Vec<String> = (0..5).map(|i| square_feature(&format!("s{i}"), 11.5 + i as f64 * 0.001, 48.1, 0.0002, false)).collect();
        feats.push(
            r#"{"type":"Feature","properties":{"id":"bowtie"},"geometry":{"type":"Polygon",
                "coordinates":[[[11.6,48.1],[11.601,48.101],[11.601,48.1],[11.6,48.101],[11.6,48.1]]]}}"#
                .to_string(),
        );
        let loaded = load_footprints(&collection(&feats), 0.005).unwrap();
        assert_eq!(loaded.store.len(), 5);
        assert_eq!(loaded.issues.len(), 1);
        assert_eq!(loaded.issues[0].id.as_deref(), Some("bowtie"));
        assert_eq!(loaded.issues[0].reason, "self-intersecting");
    }

    #[test]
    fn load_errors() {
        assert!(matches!(load_footprints("nope", 0.005), Err(FootprintError::MalformedDocument(_))));
        assert!(matches!(load_footprints(&collection(&[]), 0.005), Err(FootprintError::EmptyCollection)));
        let doc = collection(&[square_feature("a", 11.5, 48.1, 0.0001, false)]);
        assert!(matches!(load_footprints(&doc, 0.0), Err(FootprintError::InvalidCellSize(_))));
    }

    #[test]
    fn buffer_query_includes_containing_and_excludes_far() {
        let doc = collection(&[
            square_feature("near", 11.5, 48.1, 0.0002, false),
            // roughly 740 m east
            square_feature("far", 11.51, 48.1, 0.0002, false),
        ]);
        let store = load_footprints(&doc, 0.005).unwrap().store;
        let inside = LonLat::new(11.5001, 48.1001);
        let hits: Vec<&str> = store.query_buffer(inside, 1.0).iter().map(|f| f.id()).collect();
        assert_eq!(hits, vec!["near"]);
        let hits = store.query_buffer(inside, 100.0);
        assert_eq!(hits.len(), 1);
    }

    #[test]
    fn centroid_of_square() {
        let fp = Footprint::new(
            "sq",
            &[LonLat::new(11.0, 48.0), LonLat::new(11.001, 48.0), LonLat::new(11.001, 48.001), LonLat::new(11.0, 48.001)],
            BuildingAttributes::default(),
        )
        .unwrap();
        let c = centroid(&fp).unwrap();
        assert!((c.lon - 11.0005).abs() < 1e-9);
        assert!((c.lat - 48.0005).abs() < 1e-9);
    }

    #[test]
    fn ring_defects() {
        let a = BuildingAttributes::default();
        let p = |x: f64, y: f64| LonLat::new(x, y);
        assert_eq!(Footprint::new("x", &[p(0.0, 0.0), p(1.0, 0.0), p(0.0, 0.0)], a.clone()), Err(RingDefect::TooFewVertices));
        assert_eq!(Footprint::new("x", &[p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.0)], a.clone()), Err(RingDefect::ZeroArea));
        assert_eq!(Footprint::new("x", &[p(0.0, f64::NAN), p(1.0, 0.0), p(2.0, 0.0)], a), Err(RingDefect::NonFinite));
    }

    #[test]
    fn geojson_round_trip() {
        let doc = collection(&[
            square_feature("a", 11.5, 48.1, 0.0001, true),
            square_feature("b", 11.6, 48.1, 0.0001, false),
        ]);
        let s1 = load_footprints(&doc, 0.005).unwrap().store;
        let s2 = load_footprints(&s1.to_geojson(), 0.005).unwrap().store;
        assert_eq!(s1.footprints(), s2.footprints());
    }
}
