//! Street-level image metadata: parsing, filtering and GPX export.
//!
//! Input is a JSON array of records. Recognised keys (aliases in brackets):
//!
//! | key | type | notes |
//! |-----|------|-------|
//! | `image_id` (`id`) | string or integer | required |
//! | `captured_at` | RFC 3339 string or epoch milliseconds | required |
//! | `lon`, `lat` | degrees | required, or a GeoJSON `geometry` point |
//! | `heading_deg` (`compass_angle`) | degrees | required, wrapped to `[0, 360)` |
//! | `camera_type` | `perspective`, `panorama`/`spherical`/`equirectangular`, other | optional |
//! | `quality_score` | number in `[0, 1]` | optional |
//! | `image_width_px` (`width`), `image_height_px` (`height`) | positive integers | required |
//!
//! Unknown keys are ignored. A bad record is skipped and reported; it never
//! aborts the whole document.

use std::fmt;

use chrono::{DateTime, TimeZone, Timelike, Utc};
use chrono_tz::Tz;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::geo::{normalize_deg, LonLat};
use crate::gpx::{self, GpxPoint};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed metadata document: {0}")]
    MalformedDocument(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid bounding box: {0}")]
    InvalidBoundingBox(String),
    #[error("unknown time zone {0:?}")]
    UnknownTimeZone(String),
    #[error(transparent)]
    Gpx(#[from] gpx::GpxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraType {
    Perspective,
    Panorama,
    Unknown,
}

impl CameraType {
    fn from_tag(tag: &str) -> Self {
        match tag.to_ascii_lowercase().as_str() {
            "perspective" => CameraType::Perspective,
            "panorama" | "spherical" | "equirectangular" => CameraType::Panorama,
            _ => CameraType::Unknown,
        }
    }
}

/// Capture metadata for one street-level photograph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: String,
    pub captured_at: DateTime<Utc>,
    pub lon: f64,
    pub lat: f64,
    pub heading_deg: f64,
    pub camera_type: CameraType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality_score: Option<f64>,
    pub image_width_px: u32,
    pub image_height_px: u32,
}

impl ImageMeta {
    pub fn position(&self) -> LonLat {
        LonLat::new(self.lon, self.lat)
    }
}

/// Why a single record was skipped during parsing.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordIssueKind {
    MissingField(&'static str),
    InvalidValue { field: &'static str, reason: String },
    NotAnObject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordIssue {
    pub index: usize,
    pub image_id: Option<String>,
    pub kind: RecordIssueKind,
}

impl fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}", self.index)?;
        if let Some(id) = &self.image_id {
            write!(f, " ({id})")?;
        }
        match &self.kind {
            RecordIssueKind::MissingField(name) => write!(f, ": missing field {name}"),
            RecordIssueKind::InvalidValue { field, reason } => write!(f, ": invalid {field}: {reason}"),
            RecordIssueKind::NotAnObject => write!(f, ": not an object"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedMetadata {
    pub metas: Vec<ImageMeta>,
    pub issues: Vec<RecordIssue>,
}

/// Parses a JSON array of metadata records.
pub fn parse_metadata(document: &str) -> Result<ParsedMetadata, IngestError> {
    let value: Value =
        serde_json::from_str(document).map_err(|e| IngestError::MalformedDocument(e.to_string()))?;
    let Value::Array(records) = value else {
        return Err(IngestError::MalformedDocument("top level is not an array".into()));
    };
    let mut parsed = ParsedMetadata::default();
    for (index, record) in records.iter().enumerate() {
        match parse_record(record) {
            Ok(meta) => parsed.metas.push(meta),
            Err(kind) => {
                let image_id = record.as_object().and_then(|o| id_of(o).ok());
                log::warn!("skipping metadata record {index}: {kind:?}");
                parsed.issues.push(RecordIssue { index, image_id, kind });
            }
        }
    }
    Ok(parsed)
}

fn field<'a>(obj: &'a Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n)).filter(|v| !v.is_null())
}

fn id_of(obj: &Map<String, Value>) -> Result<String, RecordIssueKind> {
    match field(obj, &["image_id", "id"]) {
        Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(invalid("image_id", "expected string")),
        None => Err(RecordIssueKind::MissingField("image_id")),
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> RecordIssueKind {
    RecordIssueKind::InvalidValue { field, reason: reason.into() }
}

fn number(obj: &Map<String, Value>, name: &'static str, aliases: &[&str]) -> Result<f64, RecordIssueKind> {
    match field(obj, aliases) {
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| invalid(name, "expected a finite number")),
        None => Err(RecordIssueKind::MissingField(name)),
    }
}

fn pixels(obj: &Map<String, Value>, name: &'static str, aliases: &[&str]) -> Result<u32, RecordIssueKind> {
    match field(obj, aliases) {
        Some(v) => v
            .as_u64()
            .filter(|&n| n > 0 && n <= u32::MAX as u64)
            .map(|n| n as u32)
            .ok_or_else(|| invalid(name, "expected a positive integer")),
        None => Err(RecordIssueKind::MissingField(name)),
    }
}

fn parse_record(record: &Value) -> Result<ImageMeta, RecordIssueKind> {
    let obj = record.as_object().ok_or(RecordIssueKind::NotAnObject)?;
    let image_id = id_of(obj)?;

    let captured_at = match field(obj, &["captured_at"]) {
        Some(Value::String(s)) => DateTime::parse_from_rfc3339(s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|e| invalid("captured_at", e.to_string()))?,
        Some(Value::Number(n)) => n
            .as_i64()
            .and_then(|ms| Utc.timestamp_millis_opt(ms).single())
            .ok_or_else(|| invalid("captured_at", "bad epoch milliseconds"))?,
        Some(_) => return Err(invalid("captured_at", "expected string or number")),
        None => return Err(RecordIssueKind::MissingField("captured_at")),
    };

    let (lon, lat) = match field(obj, &["geometry", "computed_geometry"]) {
        Some(Value::Object(g)) => {
            let c = g
                .get("coordinates")
                .and_then(Value::as_array)
                .filter(|c| c.len() >= 2)
                .ok_or_else(|| invalid("geometry", "expected point coordinates"))?;
            match (c[0].as_f64(), c[1].as_f64()) {
                (Some(lon), Some(lat)) => (lon, lat),
                _ => return Err(invalid("geometry", "non-numeric coordinates")),
            }
        }
        _ => (number(obj, "lon", &["lon", "lng", "longitude"])?, number(obj, "lat", &["lat", "latitude"])?),
    };
    if !(-180.0..=180.0).contains(&lon) {
        return Err(invalid("lon", format!("{lon} outside [-180, 180]")));
    }
    if !(-90.0..=90.0).contains(&lat) {
        return Err(invalid("lat", format!("{lat} outside [-90, 90]")));
    }

    let heading_deg = normalize_deg(number(obj, "heading_deg", &["heading_deg", "compass_angle"])?);

    let camera_type = match field(obj, &["camera_type"]) {
        Some(Value::String(s)) => CameraType::from_tag(s),
        Some(_) => return Err(invalid("camera_type", "expected string")),
        None => CameraType::Unknown,
    };

    let quality_score = match field(obj, &["quality_score"]) {
        Some(v) => {
            let q = v.as_f64().ok_or_else(|| invalid("quality_score", "expected number"))?;
            if !(0.0..=1.0).contains(&q) {
                return Err(invalid("quality_score", format!("{q} outside [0, 1]")));
            }
            Some(q)
        }
        None => None,
    };

    Ok(ImageMeta {
        image_id,
        captured_at,
        lon,
        lat,
        heading_deg,
        camera_type,
        quality_score,
        image_width_px: pixels(obj, "image_width_px", &["image_width_px", "width"])?,
        image_height_px: pixels(obj, "image_height_px", &["image_height_px", "height"])?,
    })
}

/// Geographic bounding box, `min < max` on both axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lon_min: f64,
    pub lat_min: f64,
    pub lon_max: f64,
    pub lat_max: f64,
}

impl BoundingBox {
    /// The Munich study area.
    pub const MUNICH: BoundingBox =
        BoundingBox { lon_min: 11.3212, lat_min: 48.0557, lon_max: 11.7774, lat_max: 48.2872 };

    pub fn new(lon_min: f64, lat_min: f64, lon_max: f64, lat_max: f64) -> Result<Self, IngestError> {
        if !(lon_min < lon_max && lat_min < lat_max) {
            return Err(IngestError::InvalidBoundingBox(format!(
                "({lon_min}, {lat_min}, {lon_max}, {lat_max}) is not well ordered"
            )));
        }
        Ok(Self { lon_min, lat_min, lon_max, lat_max })
    }

    pub fn contains(&self, p: LonLat) -> bool {
        (self.lon_min..=self.lon_max).contains(&p.lon) && (self.lat_min..=self.lat_max).contains(&p.lat)
    }
}

/// Half-open local-hour interval `[start, end)`, wrapping past midnight when `start > end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NightHours {
    pub start_hour: u32,
    pub end_hour: u32,
}

impl Default for NightHours {
    fn default() -> Self {
        Self { start_hour: 21, end_hour: 6 }
    }
}

impl NightHours {
    pub fn contains(&self, hour: u32) -> bool {
        if self.start_hour <= self.end_hour {
            (self.start_hour..self.end_hour).contains(&hour)
        } else {
            hour >= self.start_hour || hour < self.end_hour
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub min_quality: f64,
    pub night_hours: NightHours,
    pub timezone: Tz,
    pub exclude_panoramas: bool,
    pub bounding_box: BoundingBox,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_quality: 0.5,
            night_hours: NightHours::default(),
            timezone: chrono_tz::Europe::Berlin,
            exclude_panoramas: true,
            bounding_box: BoundingBox::MUNICH,
        }
    }
}

pub fn parse_timezone(name: &str) -> Result<Tz, IngestError> {
    name.parse::<Tz>().map_err(|_| IngestError::UnknownTimeZone(name.to_owned()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    Panorama,
    Night,
    LowQuality,
    OutOfBounds,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::Panorama => "Panorama",
            RejectReason::Night => "Night",
            RejectReason::LowQuality => "LowQuality",
            RejectReason::OutOfBounds => "OutOfBounds",
        })
    }
}

/// First rule that rejects `meta`, checked in the order
/// panorama, night, quality, bounds.
pub fn reject_reason(meta: &ImageMeta, cfg: &FilterConfig) -> Option<RejectReason> {
    if cfg.exclude_panoramas && meta.camera_type == CameraType::Panorama {
        return Some(RejectReason::Panorama);
    }
    let local_hour = meta.captured_at.with_timezone(&cfg.timezone).hour();
    if cfg.night_hours.contains(local_hour) {
        return Some(RejectReason::Night);
    }
    if meta.quality_score.is_some_and(|q| q < cfg.min_quality) {
        return Some(RejectReason::LowQuality);
    }
    if !cfg.bounding_box.contains(meta.position()) {
        return Some(RejectReason::OutOfBounds);
    }
    None
}

#[derive(Debug, Clone, Default)]
pub struct FilterOutcome {
    pub kept: Vec<ImageMeta>,
    pub rejected: Vec<(ImageMeta, RejectReason)>,
}

/// Partitions `metas` into kept and rejected, preserving input order in each.
pub fn filter_metadata(metas: &[ImageMeta], cfg: &FilterConfig) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for m in metas {
        match reject_reason(m, cfg) {
            None => out.kept.push(m.clone()),
            Some(r) => out.rejected.push((m.clone(), r)),
        }
    }
    out
}

/// Rejection log as CSV with header `image_id,reason`.
pub fn rejection_log_csv(rejected: &[(ImageMeta, RejectReason)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["image_id", "reason"]).expect("in-memory write");
    for (m, r) in rejected {
        w.write_record([m.image_id.as_str(), &r.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
}

/// One `<wpt>` per image, ordered by capture time (ties by id).
pub fn export_gpx(metas: &[ImageMeta]) -> Result<String, IngestError> {
    if metas.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let mut sorted: Vec<&ImageMeta> = metas.iter().collect();
    sorted.sort_by(|a, b| a.captured_at.cmp(&b.captured_at).then_with(|| a.image_id.cmp(&b.image_id)));
    let points: Vec<GpxPoint> = sorted
        .iter()
        .map(|m| GpxPoint {
            position: m.position(),
            name: Some(m.image_id.clone()),
            time: Some(m.captured_at),
            description: Some(format!("heading={:.3}", m.heading_deg)),
        })
        .collect();
    Ok(gpx::write_waypoints(&points))
}

/// A waypoint recovered from an exported GPX file.
#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub image_id: Option<String>,
    pub position: LonLat,
    pub captured_at: Option<DateTime<Utc>>,
}

pub fn parse_gpx(text: &str) -> Result<Vec<Waypoint>, IngestError> {
    Ok(gpx::read_points(text)?
        .into_iter()
        .filter(|(kind, _)| *kind == gpx::GpxKind::Waypoint)
        .map(|(_, p)| Waypoint { image_id: p.name, position: p.position, captured_at: p.time })
        .collect())
}
