//! Accept/reject rules for cropped facade images, driven by precomputed
//! segmentation summaries and a window-detection flag.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QualityError {
    #[error("invalid segmentation summary: {0}")]
    InvalidSummary(String),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("unreadable summaries: {0}")]
    Read(String),
}

/// Per-class pixel shares of one crop, plus shares over the top-row band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSummary {
    pub frac_building: f64,
    pub frac_vegetation: f64,
    pub frac_sky: f64,
    pub frac_other: f64,
    pub top_rows_building_frac: f64,
    pub top_rows_vegetation_frac: f64,
    pub window_detected: bool,
}

impl SegmentationSummary {
    pub fn validate(&self) -> Result<(), QualityError> {
        let fields = [
            ("frac_building", self.frac_building),
            ("frac_vegetation", self.frac_vegetation),
            ("frac_sky", self.frac_sky),
            ("frac_other", self.frac_other),
            ("top_rows_building_frac", self.top_rows_building_frac),
            ("top_rows_vegetation_frac", self.top_rows_vegetation_frac),
        ];
        for (name, v) in fields {
            if !(0.0..=1.0).contains(&v) {
                return Err(QualityError::InvalidSummary(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let total = self.frac_building + self.frac_vegetation + self.frac_sky + self.frac_other;
        if (total - 1.0).abs() > 1e-6 {
            return Err(QualityError::InvalidSummary(format!("class fractions sum to {total}")));
        }
        if self.top_rows_building_frac + self.top_rows_vegetation_frac > 1.0 + 1e-6 {
            return Err(QualityError::InvalidSummary("top-band fractions exceed 1".into()));
        }
        Ok(())
    }
}

/// All comparisons are strict: a value equal to its threshold passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub min_building: f64,
    pub max_vegetation: f64,
    pub top_building: f64,
    pub top_vegetation: f64,
    /// Fraction of image rows forming the top band; recorded for the
    /// segmentation side that produces the summaries.
    pub top_band_frac: f64,
    pub require_windows: bool,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            min_building: 0.20,
            max_vegetation: 0.70,
            top_building: 0.5,
            top_vegetation: 0.5,
            top_band_frac: 0.05,
            require_windows: true,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), QualityError> {
        for (name, v) in [
            ("min_building", self.min_building),
            ("max_vegetation", self.max_vegetation),
            ("top_building", self.top_building),
            ("top_vegetation", self.top_vegetation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(QualityError::InvalidThresholds(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.top_band_frac > 0.0 && self.top_band_frac <= 1.0) {
            return Err(QualityError::InvalidThresholds(format!("top_band_frac = {}", self.top_band_frac)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FilterReason {
    LowBuilding,
    HighVegetation,
    NoWindows,
    TruncatedTop,
    OccludedTop,
}

impl fmt::Display for FilterReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterReason::LowBuilding => "LowBuilding",
            FilterReason::HighVegetation => "HighVegetation",
            FilterReason::NoWindows => "NoWindows",
            FilterReason::TruncatedTop => "TruncatedTop",
            FilterReason::OccludedTop => "OccludedTop",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Reject(BTreeSet<FilterReason>),
}

impl Decision {
    pub fn is_keep(&self) -> bool {
        matches!(self, Decision::Keep)
    }

    /// `|`-joined reason codes, empty for `Keep`.
    pub fn reason_codes(&self) -> String {
        match self {
            Decision::Keep => String::new(),
            Decision::Reject(rs) => rs.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("|"),
        }
    }
}

pub fn evaluate_filters(s: &SegmentationSummary, t: &Thresholds) -> Result<Decision, QualityError> {
    s.validate()?;
    let mut reasons = BTreeSet::new();
    if s.frac_building < t.min_building {
        reasons.insert(FilterReason::LowBuilding);
    }
    if s.frac_vegetation > t.max_vegetation {
        reasons.insert(FilterReason::HighVegetation);
    }
    if t.require_windows && !s.window_detected {
        reasons.insert(FilterReason::NoWindows);
    }
    if s.top_rows_building_frac > t.top_building {
        reasons.insert(FilterReason::TruncatedTop);
    }
    if s.top_rows_vegetation_frac > t.top_vegetation {
        reasons.insert(FilterReason::OccludedTop);
    }
    Ok(if reasons.is_empty() { Decision::Keep } else { Decision::Reject(reasons) })
}

/// A summary keyed by its crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyedSummary {
    pub image_id: String,
    pub crop_index: u32,
    #[serde(flatten)]
    pub summary: SegmentationSummary,
}

/// Reads summaries from CSV (header row naming the fields) or a JSON array.
pub fn read_summaries(text: &str) -> Result<Vec<KeyedSummary>, QualityError> {
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(text).map_err(|e| QualityError::Read(e.to_string()));
    }
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize::<CsvSummary>()
        .map(|r| r.map(Into::into).map_err(|e| QualityError::Read(e.to_string())))
        .collect()
}

// csv cannot deserialize through #[serde(flatten)]
#[derive(Deserialize)]
struct CsvSummary {
    image_id: String,
    crop_index: u32,
    frac_building: f64,
    frac_vegetation: f64,
    frac_sky: f64,
    frac_other: f64,
    top_rows_building_frac: f64,
    top_rows_vegetation_frac: f64,
    #[serde(deserialize_with = "de_bool")]
    window_detected: bool,
}

fn de_bool<'de, D: serde::Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(serde::de::Error::custom(format!("not a boolean: {other:?}"))),
    }
}

impl From<CsvSummary> for KeyedSummary {
    fn from(c: CsvSummary) -> Self {
        KeyedSummary {
            image_id: c.image_id,
            crop_index: c.crop_index,
            summary: SegmentationSummary {
                frac_building: c.frac_building,
                frac_vegetation: c.frac_vegetation,
                frac_sky: c.frac_sky,
                frac_other: c.frac_other,
                top_rows_building_frac: c.top_rows_building_frac,
                top_rows_vegetation_frac: c.top_rows_vegetation_frac,
                window_detected: c.window_detected,
            },
        }
    }
}
