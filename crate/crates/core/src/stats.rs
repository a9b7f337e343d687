//! Per-floor, per-source image counts and height-versus-floor exports.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::footprint::{BuildingFunction, Footprint, RoofType};

/// Floor counts above this go into the overflow bucket.
pub const MAX_TABLE_FLOORS: u32 = 18;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty input")]
    EmptyInput,
    #[error("row {row}: {reason}")]
    BadRecord { row: usize, reason: String },
    #[error("unreadable CSV: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Mapillary,
    SelfCaptured,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Mapillary => "mapillary",
            Source::SelfCaptured => "self_captured",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub image_id: String,
    pub footprint_id: String,
    pub floor_count: u32,
    pub source: Source,
    #[serde(default)]
    pub height_m: Option<f64>,
}

/// Histogram row key: an exact floor count or the overflow bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FloorBucket {
    Floors(u32),
    Overflow,
}

impl fmt::Display for FloorBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FloorBucket::Floors(n) => write!(f, "{n}"),
            FloorBucket::Overflow => write!(f, "{}+", MAX_TABLE_FLOORS + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct SourceCounts {
    pub total: usize,
    pub mapillary: usize,
    pub self_captured: usize,
}

impl SourceCounts {
    fn add(&mut self, s: Source) {
        self.total += 1;
        match s {
            Source::Mapillary => self.mapillary += 1,
            Source::SelfCaptured => self.self_captured += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FloorHistogram {
    pub rows: BTreeMap<FloorBucket, SourceCounts>,
    pub totals: SourceCounts,
}

impl FloorHistogram {
    pub fn get(&self, floors: u32) -> SourceCounts {
        let key = if floors > MAX_TABLE_FLOORS { FloorBucket::Overflow } else { FloorBucket::Floors(floors) };
        self.rows.get(&key).copied().unwrap_or_default()
    }

    /// CSV with one row per observed bucket and a final `total` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("floors,total,mapillary,self_captured\n");
        let row = |k: &dyn fmt::Display, c: &SourceCounts| format!("{k},{},{},{}\n", c.total, c.mapillary, c.self_captured);
        for (k, c) in &self.rows {
            out.push_str(&row(k, c));
        }
        out.push_str(&row(&"total", &self.totals));
        out
    }
}

pub fn floor_histogram(records: &[DatasetRecord]) -> Result<FloorHistogram, StatsError> {
    if records.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let mut rows: BTreeMap<FloorBucket, SourceCounts> = BTreeMap::new();
    let mut totals = SourceCounts::default();
    for r in records {
        let key =
            if r.floor_count > MAX_TABLE_FLOORS { FloorBucket::Overflow } else { FloorBucket::Floors(r.floor_count) };
        rows.entry(key).or_default().add(r.source);
        totals.add(r.source);
    }
    Ok(FloorHistogram { rows, totals })
}

/// Reads records from CSV with columns `image_id,footprint_id,floor_count,source[,height_m]`.
pub fn read_records(text: &str) -> Result<Vec<DatasetRecord>, StatsError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<DatasetRecord>().enumerate() {
        let rec = rec.map_err(|e| StatsError::BadRecord { row: i + 1, reason: e.to_string() })?;
        if rec.floor_count == 0 {
            return Err(StatsError::BadRecord { row: i + 1, reason: "floor_count must be >= 1".into() });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(records: &[DatasetRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).expect("in-memory");
    }
    String::from_utf8(w.into_inner().expect("in-memory")).expect("utf8")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightFloorRow {
    pub footprint_id: String,
    pub floor_count: u32,
    pub height_m: f64,
    pub roof_type: RoofType,
    pub function: BuildingFunction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeightFloorExport {
    pub rows: Vec<HeightFloorRow>,
    /// Footprints lacking a floor count or a height.
    pub skipped: usize,
}

impl HeightFloorExport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["footprint_id", "floor_count", "height_m", "roof_type", "function"]).expect("in-memory");
        for r in &self.rows {
            w.write_record([
                r.footprint_id.clone(),
                r.floor_count.to_string(),
                format_height(r.height_m),
                r.roof_type.as_str().to_owned(),
                r.function.as_str().to_owned(),
            ])
            .expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf8")
    }
}

// Shortest representation that parses back to the same value.
fn format_height(h: f64) -> String {
    format!("{h}")
}

pub fn height_floor_export(footprints: &[Footprint]) -> HeightFloorExport {
    let mut rows = Vec::new();
    let mut skipped = 0;
    for fp in footprints {
        match (fp.attrs.floor_count, fp.attrs.height_m) {
            (Some(floor_count), Some(height_m)) => rows.push(HeightFloorRow {
                footprint_id: fp.id().to_owned(),
                floor_count,
                height_m,
                roof_type: fp.attrs.roof_type,
                function: fp.attrs.function,
            }),
            _ => skipped += 1,
        }
    }
    HeightFloorExport { rows, skipped }
}

pub fn read_height_floor(text: &str) -> Result<Vec<HeightFloorRow>, StatsError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |reason: String| StatsError::BadRecord { row: i + 1, reason };
        let field = |k: usize| rec.get(k).ok_or_else(|| bad(format!("missing column {k}")));
        out.push(HeightFloorRow {
            footprint_id: field(0)?.to_owned(),
            floor_count: field(1)?.parse().map_err(|_| bad("bad floor_count".into()))?,
            height_m: field(2)?.parse().map_err(|_| bad("bad height_m".into()))?,
            roof_type: RoofType::from_tag(field(3)?),
            function: BuildingFunction::from_tag(field(4)?),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::footprint::BuildingAttributes;
    use crate::geo::LonLat;

    fn rec(floors: u32, source: Source) -> DatasetRecord {
        DatasetRecord { image_id: "i".into(), footprint_id: "f".into(), floor_count: floors, source, height_m: None }
    }

    fn square(id: &str, floors: Option<u32>, height: Option<f64>, roof: RoofType) -> Footprint {
        let ring = [LonLat::new(11.5, 48.1), LonLat::new(11.501, 48.1), LonLat::new(11.501, 48.101), LonLat::new(11.5, 48.101)];
        let attrs =
            BuildingAttributes { floor_count: floors, height_m: height, roof_type: roof, function: BuildingFunction::Residential };
        Footprint::new(id, &ring, attrs).unwrap()
    }

    #[test]
    fn single_record() {
        let h = floor_histogram(&[rec(3, Source::Mapillary)]).unwrap();
        assert_eq!(h.rows.len(), 1);
        assert_eq!(h.get(3), SourceCounts { total: 1, mapillary: 1, self_captured: 0 });
        assert!(matches!(floor_histogram(&[]), Err(StatsError::EmptyInput)));
    }

    #[test]
    fn overflow_bucket() {
        let h = floor_histogram(&[rec(19, Source::SelfCaptured), rec(25, Source::Mapillary), rec(18, Source::Mapillary)])
            .unwrap();
        assert_eq!(h.get(30).total, 2);
        assert_eq!(h.get(18).total, 1);
        let csv = h.to_csv();
        assert!(csv.contains("\n18,1,1,0\n19+,2,1,1\ntotal,3,2,1\n"), "{csv}");
    }

    #[test]
    fn records_round_trip() {
        let mut rs = vec![rec(2, Source::Mapillary), rec(9, Source::SelfCaptured)];
        rs[1].height_m = Some(27.5);
        let back = read_records(&write_records(&rs)).unwrap();
        assert_eq!(back, rs);
        assert!(read_records("image_id,footprint_id,floor_count,source\na,b,0,mapillary\n").is_err());
        assert!(read_records("image_id,footprint_id,floor_count,source\na,b,2,drone\n").is_err());
    }

    #[test]
    fn height_export_skips_incomplete() {
        let fps = vec![
            square("a", Some(3), Some(9.5), RoofType::Flat),
            square("b", Some(4), None, RoofType::Flat),
            square("c", Some(5), Some(16.25), RoofType::Nonflat),
            square("d", Some(2), Some(0.1 + 0.2), RoofType::Unknown),
        ];
        let ex = height_floor_export(&fps);
        assert_eq!(ex.skipped, 1);
        assert_eq!(ex.rows.len(), 3);
        let back = read_height_floor(&ex.to_csv()).unwrap();
        assert_eq!(back, ex.rows);
    }
}
