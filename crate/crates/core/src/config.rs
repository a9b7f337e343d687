//! Pipeline configuration: a TOML file plus `section.key=value` overrides.
//!
//! Relative paths in the file resolve against the file's directory; paths
//! given as overrides resolve against the working directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::footprint::SpatialIndex;
use crate::head::model::ModelConfig;
use crate::ingestion::{parse_timezone, BoundingBox, FilterConfig, NightHours};
use crate::matcher::MatcherParams;
use crate::planner::TourKind;
use crate::quality::Thresholds;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config field {field}: {message}")]
    Field { field: String, message: String },
    #[error("bad override {0:?}: expected section.key=value")]
    Override(String),
    #[error("config field {0} is not set")]
    Missing(&'static str),
}

impl ConfigError {
    fn field(field: &str, message: impl ToString) -> Self {
        ConfigError::Field { field: field.to_owned(), message: message.to_string() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub footprints: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub crops: Option<PathBuf>,
    pub summaries: Option<PathBuf>,
    pub quota: Option<PathBuf>,
    pub records: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSettings {
    pub min_quality: f64,
    pub night_start_hour: u32,
    pub night_end_hour: u32,
    pub timezone: String,
    pub exclude_panoramas: bool,
    pub bbox: BoundingBox,
}

impl Default for IngestSettings {
    fn default() -> Self {
        let d = FilterConfig::default();
        Self {
            min_quality: d.min_quality,
            night_start_hour: d.night_hours.start_hour,
            night_end_hour: d.night_hours.end_hour,
            timezone: d.timezone.name().to_owned(),
            exclude_panoramas: d.exclude_panoramas,
            bbox: d.bounding_box,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreSettings {
    pub cell_size_deg: f64,
}

impl Default for StoreSettings {
    fn default() -> Self {
        Self { cell_size_deg: SpatialIndex::DEFAULT_CELL_SIZE_DEG }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanSettings {
    pub photos_per_building: u32,
    pub closed: bool,
}

impl Default for PlanSettings {
    fn default() -> Self {
        Self { photos_per_building: 3, closed: false }
    }
}

impl PlanSettings {
    pub fn tour_kind(&self) -> TourKind {
        if self.closed {
            TourKind::Closed
        } else {
            TourKind::Open
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Governs every random choice; copied into the training seed.
    pub seed: u64,
    /// Worker cap for `match` and `filter`; 0 means one per core.
    pub jobs: usize,
    pub paths: Paths,
    pub ingest: IngestSettings,
    pub store: StoreSettings,
    pub matcher: MatcherParams,
    pub filter: Thresholds,
    pub plan: PlanSettings,
    pub train: ModelConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: 1,
            paths: Paths::default(),
            ingest: IngestSettings::default(),
            store: StoreSettings::default(),
            matcher: MatcherParams::default(),
            filter: Thresholds::default(),
            plan: PlanSettings::default(),
            train: ModelConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Loads `file` (defaults only when `None`), applies overrides and validates.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut root = match file {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_owned(), source })?;
                let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
                let base = path.parent().unwrap_or(Path::new(""));
                resolve_paths(&mut table, base);
                table
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: PipelineConfig = serde_path_to_error::deserialize(toml::Value::Table(root)).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Field { field, message: e.into_inner().to_string() }
        })?;
        let mut cfg = cfg;
        cfg.train.optimizer.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.filter_config()?;
        self.matcher.validate().map_err(|e| ConfigError::field("matcher", e))?;
        self.filter.validate().map_err(|e| ConfigError::field("filter", e))?;
        self.train.validate().map_err(|e| ConfigError::field("train", e))?;
        if !(self.store.cell_size_deg > 0.0 && self.store.cell_size_deg.is_finite()) {
            return Err(ConfigError::field("store.cell_size_deg", "must be > 0"));
        }
        if self.plan.photos_per_building == 0 {
            return Err(ConfigError::field("plan.photos_per_building", "must be >= 1"));
        }
        Ok(())
    }

    pub fn filter_config(&self) -> Result<FilterConfig, ConfigError> {
        let s = &self.ingest;
        if s.night_start_hour > 23 || s.night_end_hour > 23 {
            return Err(ConfigError::field("ingest.night_start_hour", "hours must lie in 0..=23"));
        }
        let b = s.bbox;
        let bounding_box = BoundingBox::new(b.lon_min, b.lat_min, b.lon_max, b.lat_max)
            .map_err(|e| ConfigError::field("ingest.bbox", e))?;
        Ok(FilterConfig {
            min_quality: s.min_quality,
            night_hours: NightHours { start_hour: s.night_start_hour, end_hour: s.night_end_hour },
            timezone: parse_timezone(&s.timezone).map_err(|e| ConfigError::field("ingest.timezone", e))?,
            exclude_panoramas: s.exclude_panoramas,
            bounding_box,
        })
    }

    /// The path configured under `paths.<name>`, or a [`ConfigError::Missing`] naming it.
    pub fn require(&self, name: &'static str) -> Result<&Path, ConfigError> {
        let p = &self.paths;
        let slot = match name {
            "paths.footprints" => &p.footprints,
            "paths.metadata" => &p.metadata,
            "paths.crops" => &p.crops,
            "paths.summaries" => &p.summaries,
            "paths.quota" => &p.quota,
            "paths.records" => &p.records,
            "paths.dataset" => &p.dataset,
            "paths.model" => &p.model,
            "paths.pairs" => &p.pairs,
            "paths.out_dir" => &p.out_dir,
            _ => return Err(ConfigError::Missing(name)),
        };
        slot.as_deref().ok_or(ConfigError::Missing(name))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn resolve_paths(table: &mut toml::Table, base: &Path) {
    if let Some(toml::Value::Table(paths)) = table.get_mut("paths") {
        for (_, v) in paths.iter_mut() {
            if let toml::Value::String(s) = v {
                if Path::new(s.as_str()).is_relative() {
                    *v = toml::Value::String(base.join(s.as_str()).to_string_lossy().into_owned());
                }
            }
        }
    }
}

/// Applies `a.b.c=value`; the value is read as a TOML literal when it parses
/// as one and as a bare string otherwise.
pub fn apply_override(root: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_owned()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(spec.to_owned()));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_owned()));
    let (last, sections) = parts.split_last().expect("non-empty");
    let mut cur = root;
    for s in sections {
        let entry = cur.entry(s.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(ConfigError::Override(spec.to_owned())),
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
