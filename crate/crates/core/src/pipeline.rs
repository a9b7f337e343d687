//! Subcommand runners: read the configured inputs, call into the library,
//! write outputs atomically under `paths.out_dir`.
//!
//! Every runner depends only on its declared inputs, so any subcommand can be
//! run on its own.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, PipelineConfig};
use crate::evaluation::{confusion_csv, evaluate, read_pairs, EvalReport};
use crate::footprint::{load_footprints, FootprintStore};
use crate::head::model::{epoch_log_csv, read_dataset, read_features, train, FloorModel, TrainError};
use crate::ingestion::{export_gpx, filter_metadata, parse_metadata, rejection_log_csv, ImageMeta};
use crate::matcher::{match_crop, CropBox};
use crate::planner::{export_route, plan_route, select_targets, shortfall_csv, Quota};
use crate::quality::{evaluate_filters, read_summaries};
use crate::stats::{floor_histogram, height_floor_export, read_records};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Ingest,
    Match,
    Filter,
    Plan,
    Stats,
    Train,
    Infer,
    Eval,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Ingest,
        Command::Match,
        Command::Filter,
        Command::Plan,
        Command::Stats,
        Command::Train,
        Command::Infer,
        Command::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Match => "match",
            Command::Filter => "filter",
            Command::Plan => "plan",
            Command::Stats => "stats",
            Command::Train => "train",
            Command::Infer => "infer",
            Command::Eval => "eval",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
#[error("unknown subcommand {0:?}")]
pub struct UnknownSubcommand(pub String);

impl FromStr for Command {
    type Err = UnknownSubcommand;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| UnknownSubcommand(s.to_owned()))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    #[error("{0}")]
    Run(String),
}

impl PipelineError {
    /// 1 for configuration problems, 2 for everything touching data.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            _ => 2,
        }
    }
}

fn data_err(path: &Path, e: impl ToString) -> PipelineError {
    PipelineError::Data { path: path.to_owned(), message: e.to_string() }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.to_owned(), source })
}

/// Writes through a temporary file in the target directory and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), PipelineError> {
    let io = |source| PipelineError::Io { path: path.to_owned(), source };
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn new(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        Ok(Self { dir: cfg.require("paths.out_dir")?.to_owned(), written: Vec::new() })
    }

    fn put(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
        let path = self.dir.join(name);
        write_atomic(&path, contents.as_ref())?;
        log::info!("wrote {}", path.display());
        self.written.push(path);
        Ok(())
    }
}

fn load_store(cfg: &PipelineConfig) -> Result<FootprintStore, PipelineError> {
    let path = cfg.require("paths.footprints")?;
    let loaded = load_footprints(&read_text(path)?, cfg.store.cell_size_deg).map_err(|e| data_err(path, e))?;
    for issue in &loaded.issues {
        log::warn!("footprint feature {} ({:?}) skipped: {}", issue.index, issue.id, issue.reason);
    }
    log::info!("loaded {} footprints", loaded.store.len());
    Ok(loaded.store)
}

fn load_metadata(cfg: &PipelineConfig) -> Result<Vec<ImageMeta>, PipelineError> {
    let path = cfg.require("paths.metadata")?;
    let parsed = parse_metadata(&read_text(path)?).map_err(|e| data_err(path, e))?;
    Ok(parsed.metas)
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| PipelineError::Run(e.to_string()))
}

/// Runs one subcommand and returns the files it wrote.
pub fn run(cmd: Command, cfg: &PipelineConfig) -> Result<Vec<PathBuf>, PipelineError> {
    log::info!("running {cmd} with seed {}", cfg.seed);
    let mut out = Outputs::new(cfg)?;
    match cmd {
        Command::Ingest => ingest(cfg, &mut out)?,
        Command::Match => match_crops(cfg, &mut out)?,
        Command::Filter => filter_crops(cfg, &mut out)?,
        Command::Plan => plan(cfg, &mut out)?,
        Command::Stats => stats(cfg, &mut out)?,
        Command::Train => train_model(cfg, &mut out)?,
        Command::Infer => infer(cfg, &mut out)?,
        Command::Eval => eval(cfg, &mut out)?,
    }
    Ok(out.written)
}

fn ingest(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), PipelineError> {
    let path = cfg.require("paths.metadata")?;
    let filter = cfg.filter_config()?;
    let parsed = parse_metadata(&read_text(path)?).map_err(|e| data_err(path, e))?;
    let outcome = filter_metadata(&parsed.metas, &filter);
    log::info!(
        "metadata: {} parsed, {} malformed, {} kept, {} rejected",
        parsed.metas.len(),
        parsed.issues.len(),
        outcome.kept.len(),
        outcome.rejected.len()
    );
    let mut issues = String::from("index,image_id,issue\n");
    for i in &parsed.issues {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([i.index.to_string(), i.image_id.clone().unwrap_or_default(), i.to_string()]).expect("in-memory");
        issues.push_str(std::str::from_utf8(&w.into_inner().expect("in-memory")).expect("utf8"));
    }
    out.put("waypoints.gpx", export_gpx(&outcome.kept).map_err(|e| data_err(path, e))?)?;
    out.put("rejected.csv", rejection_log_csv(&outcome.rejected))?;
    out.put("malformed.csv", issues)?;
    out.put("metadata_kept.json", to_json(&outcome.kept))?;
    Ok(())
}

fn match_crops(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), PipelineError> {
    let store = load_store(cfg)?;
    let metas = load_metadata(cfg)?;
    let crops_path = cfg.require("paths.crops")?;
    let crops: Vec<CropBox> = serde_json::from_str(&read_text(crops_path)?).map_err(|e| data_err(crops_path, e))?;
    let by_id: HashMap<&str, &ImageMeta> = metas.iter().map(|m| (m.image_id.as_str(), m)).collect();

    // Crops without an explicit index are numbered in file order per image.
    let mut next_index: HashMap<&str, u32> = HashMap::new();
    let indexed: Vec<(u32, &CropBox)> = crops
        .iter()
        .map(|c| {
            let n = next_index.entry(c.image_id.as_str()).or_insert(0);
            let idx = c.crop_index.unwrap_or(*n);
            *n = idx + 1;
            (idx, c)
        })
        .collect();

    let pool = thread_pool(cfg.jobs)?;
    let results: Vec<Result<Option<(bool, String)>, PipelineError>> = pool.install(|| {
        indexed
            .par_iter()
            .map(|(idx, crop)| {
                let Some(meta) = by_id.get(crop.image_id.as_str()) else {
                    log::warn!("crop {}#{idx}: no metadata for image", crop.image_id);
                    return Ok(None);
                };
                let r = match_crop(&store, meta, crop, &cfg.matcher)
                    .map_err(|e| data_err(crops_path, format!("{}#{idx}: {e}", crop.image_id)))?;
                let line = format!(
                    "{},{idx},{},{:.6},{}\n",
                    csv_field(&crop.image_id),
                    r.footprint_id.as_deref().map(csv_field).unwrap_or_default(),
                    r.confidence,
                    r.rays_cast
                );
                Ok(Some((r.footprint_id.is_some(), line)))
            })
            .collect()
    });
    let mut text = String::from("image_id,crop_index,footprint_id,confidence,rays_cast\n");
    let (mut matched, mut unmatched) = (0, 0);
    for r in results {
        if let Some((hit, line)) = r? {
            if hit {
                matched += 1;
            } else {
                unmatched += 1;
            }
            text.push_str(&line);
        }
    }
    log::info!("matched {matched} crops, {unmatched} without a footprint");
    out.put("matches.csv", text)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn filter_crops(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), PipelineError> {
    let path = cfg.require("paths.summaries")?;
    let summaries = read_summaries(&read_text(path)?).map_err(|e| data_err(path, e))?;
    let pool = thread_pool(cfg.jobs)?;
    let decisions: Vec<_> =
        pool.install(|| summaries.par_iter().map(|k| evaluate_filters(&k.summary, &cfg.filter)).collect());
    let mut text = String::from("image_id,crop_index,decision,reasons\n");
    let mut kept = 0;
    for (k, d) in summaries.iter().zip(decisions) {
        let d = d.map_err(|e| data_err(path, format!("{}#{}: {e}", k.image_id, k.crop_index)))?;
        kept += usize::from(d.is_keep());
        let verdict = if d.is_keep() { "keep" } else { "reject" };
        text.push_str(&format!("{},{},{verdict},{}\n", csv_field(&k.image_id), k.crop_index, d.reason_codes()));
    }
    log::info!("filter: {kept} of {} crops kept", summaries.len());
    out.put("decisions.csv", text)
}

fn plan(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), PipelineError> {
    let store = load_store(cfg)?;
    let quota_path = cfg.require("paths.quota")?;
    let quota = Quota::from_json(&read_text(quota_path)?).map_err(|e| data_err(quota_path, e))?;
    let selection = select_targets(&store, &quota, cfg.seed);
    for (floors, missing) in &selection.shortfalls {
        log::warn!("quota for {floors} floors short by {missing}");
    }
    let plan = plan_route(&selection.targets, cfg.plan.tour_kind(), cfg.plan.photos_per_building)
        .map_err(|e| data_err(quota_path, e))?;
    log::info!("route over {} buildings, {:.1} m", plan.stops.len(), plan.total_distance_m);
    let (gpx, legs) = export_route(&plan).map_err(|e| PipelineError::Run(e.to_string()))?;
    out.put("route.gpx", gpx)?;
    out.put("legs.csv", legs)?;
    out.put("shortfall.csv", shortfall_csv(&selection.shortfalls))
}

fn stats(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), PipelineError> {
    let path = cfg.require("paths.records")?;
    let records = read_records(&read_text(path)?).map_err(|e| data_err(path, e))?;
    let hist = floor_histogram(&records).map_err(|e| data_err(path, e))?;
    out.put("floor_histogram.csv", hist.to_csv())?;
    if cfg.paths.footprints.is_some() {
        let store = load_store(cfg)?;
        let export = height_floor_export(store.footprints());
        if export.skipped > 0 {
            log::info!("height export: {} footprints lack floors or height", export.skipped);
        }
        out.put("height_floor.csv", export.to_csv())?;
    } else {
        log::info!("paths.footprints not set; skipping height export");
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainReport<'a> {
    variant: String,
    mtl_roof: bool,
    seed: u64,
    best_epoch: usize,
    samples: [usize; 3],
    validation: &'a EvalReport,
    test: Option<EvalReport>,
}

fn train_model(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), PipelineError> {
    let path = cfg.require("paths.dataset")?;
    let file = std::fs::File::open(path).map_err(|source| PipelineError::Io { path: path.to_owned(), source })?;
    let (_, data) = read_dataset(file).map_err(|e| data_err(path, e))?;
    let mut model_cfg = cfg.train.clone();
    if let Some(first) = data.first() {
        if first.features.len() != model_cfg.encoder.input_dim {
            log::info!("input_dim set to {} from the dataset", first.features.len());
            model_cfg.encoder.input_dim = first.features.len();
        }
    }
    let outcome = match train(&model_cfg, &data) {
        Ok(o) => o,
        Err(TrainError::NonFiniteLoss { epoch, log }) => {
            out.put("epochs.csv", epoch_log_csv(&log))?;
            return Err(PipelineError::Run(format!("training diverged at epoch {epoch}")));
        }
        Err(e) => return Err(data_err(path, e)),
    };
    let test_set: Vec<_> = outcome.split.test.iter().map(|&i| data[i].clone()).collect();
    let test = if test_set.is_empty() { None } else { Some(outcome.model.evaluate(&test_set).map_err(|e| data_err(path, e))?) };
    log::info!(
        "best epoch {} with validation accuracy {:.4}, MAE {:.4}",
        outcome.best_epoch,
        outcome.best_val.accuracy,
        outcome.best_val.mae
    );
    let report = TrainReport {
        variant: model_cfg.variant.to_string(),
        mtl_roof: model_cfg.mtl_roof,
        seed: model_cfg.optimizer.seed,
        best_epoch: outcome.best_epoch,
        samples: [outcome.split.train.len(), outcome.split.val.len(), outcome.split.test.len()],
        validation: &outcome.best_val,
        test,
    };
    out.put("model.json", outcome.model.to_json() + "\n")?;
    out.put("epochs.csv", epoch_log_csv(&outcome.log))?;
    out.put("train_report.json", to_json(&report))
}

fn infer(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), PipelineError> {
    let model_path = cfg.require("paths.model")?;
    let model = FloorModel::from_json(&read_text(model_path)?).map_err(|e| data_err(model_path, e))?;
    let path = cfg.require("paths.dataset")?;
    let file = std::fs::File::open(path).map_err(|source| PipelineError::Io { path: path.to_owned(), source })?;
    let table = read_features(file).map_err(|e| data_err(path, e))?;
    let preds: Vec<_> = table
        .rows
        .par_iter()
        .map(|r| model.predict(&r.features))
        .collect::<Result<_, _>>()
        .map_err(|e| data_err(path, e))?;
    let mut text = String::from("row,id,pred_class,pred_floors,expectation,roof_prob,gt_class\n");
    for (i, (r, p)) in table.rows.iter().zip(&preds).enumerate() {
        text.push_str(&format!(
            "{i},{},{},{},{:.6},{},{}\n",
            r.id.as_deref().map(csv_field).unwrap_or_default(),
            p.label.class(),
            p.label.floors(),
            p.expectation,
            p.roof_prob.map(|x| format!("{x:.6}")).unwrap_or_default(),
            r.label.map(|l| l.class().to_string()).unwrap_or_default(),
        ));
    }
    log::info!("predicted {} rows", preds.len());
    out.put("predictions.csv", text)
}

fn eval(cfg: &PipelineConfig, out: &mut Outputs) -> Result<(), PipelineError> {
    let path = cfg.require("paths.pairs")?;
    let (preds, gts) = read_pairs(&read_text(path)?).map_err(|e| data_err(path, e))?;
    let report = evaluate(&preds, &gts).map_err(|e| data_err(path, e))?;
    log::info!(
        "n={} accuracy={:.4} accuracy_pm1={:.4} mae={:.4} rmse={:.4}",
        report.n,
        report.accuracy,
        report.accuracy_pm1,
        report.mae,
        report.rmse
    );
    out.put("eval_report.json", to_json(&report))?;
    out.put("confusion.csv", confusion_csv(&report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("serve".parse::<Command>().is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path().join("sub")).unwrap().count(), 1);
    }

    #[test]
    fn missing_path_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig::load(None, &[format!("paths.out_dir={:?}", dir.path())]).unwrap();
        let e = run(Command::Match, &cfg).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("paths.footprints"));
    }

    #[test]
    fn eval_writes_report() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = dir.path().join("pairs.csv");
        std::fs::write(&pairs, "pred_class,gt_class\n3,3\n4,5\n5,7\n").unwrap();
        let cfg = PipelineConfig::load(
            None,
            &[format!("paths.out_dir={:?}", dir.path().join("out")), format!("paths.pairs={pairs:?}")],
        )
        .unwrap();
        let written = run(Command::Eval, &cfg).unwrap();
        assert_eq!(written.len(), 2);
        let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&written[0]).unwrap()).unwrap();
        assert_eq!(report["accuracy"].as_f64().unwrap(), 1.0 / 3.0);
    }
}
