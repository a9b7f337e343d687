//! Desk-scale floor model: a one-hidden-layer perceptron encoder feeding the
//! gate, subset classifiers and optional roof head, trained with Adam.
//!
//! Parameters live in one flat vector so the optimizer state and the JSON
//! model file stay simple. Training is single-threaded and fully determined
//! by the configured seed.

use std::io::Read;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loss::{forward, loss_and_grad, HeadForward, HeadScores, LossTerms};
use super::{predict, ClassPmf, FloorLabel, HeadError, PredictionRule, RoofLabel, SubsetPartition, Variant, NUM_CLASSES};
use crate::evaluation::{evaluate, EvalReport};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("sample {index} has {got} features, expected {expected}")]
    DimensionMismatch { index: usize, got: usize, expected: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, log: Vec<EpochLog> },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error("dataset: {0}")]
    Dataset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub hidden: usize,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self { input_dim: 64, hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self { learning_rate: 0.001, epochs: 100, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub mtl_roof: bool,
    pub encoder: EncoderSpec,
    pub optimizer: OptimizerSpec,
    /// Train and validation shares; the remainder is the test split.
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::full(),
            mtl_roof: false,
            encoder: EncoderSpec::default(),
            optimizer: OptimizerSpec::default(),
            train_frac: 0.8,
            val_frac: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.variant.partition()?;
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if self.encoder.input_dim == 0 || self.encoder.hidden == 0 {
            return bad("encoder dimensions must be positive");
        }
        if !(self.optimizer.learning_rate > 0.0 && self.optimizer.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if self.optimizer.epochs == 0 || self.optimizer.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.train_frac > 0.0 && self.val_frac >= 0.0 && self.train_frac + self.val_frac <= 1.0 + 1e-12) {
            return bad("train_frac/val_frac must be non-negative and sum to at most 1");
        }
        Ok(())
    }
}

/// One labeled feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: FloorLabel,
    pub roof: Option<RoofLabel>,
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Layout {
    d: usize,
    h: usize,
    s: usize,
    roof: bool,
    w1: usize,
    b1: usize,
    wg: usize,
    bg: usize,
    wc: usize,
    bc: usize,
    wr: usize,
    br: usize,
    len: usize,
}

impl Layout {
    fn new(d: usize, h: usize, s: usize, roof: bool) -> Self {
        let w1 = 0;
        let b1 = w1 + h * d;
        let wg = b1 + h;
        let bg = wg + s * h;
        let wc = bg + s;
        let bc = wc + NUM_CLASSES * h;
        let wr = bc + NUM_CLASSES;
        let br = wr + if roof { h } else { 0 };
        let len = br + usize::from(roof);
        Self { d, h, s, roof, w1, b1, wg, bg, wc, bc, wr, br, len }
    }
}

struct Activations {
    z1: Vec<f64>,
    hidden: Vec<f64>,
    scores: HeadScores,
}

fn encode(layout: &Layout, p: &[f64], part: &SubsetPartition, x: &[f64]) -> Activations {
    let Layout { d, h, s, .. } = *layout;
    let mut z1 = p[layout.b1..layout.b1 + h].to_vec();
    for (i, zi) in z1.iter_mut().enumerate() {
        let row = &p[layout.w1 + i * d..layout.w1 + (i + 1) * d];
        *zi += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
    let hidden: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
    let affine = |w: usize, b: usize, rows: usize| -> Vec<f64> {
        (0..rows)
            .map(|r| p[b + r] + p[w + r * h..w + (r + 1) * h].iter().zip(&hidden).map(|(a, v)| a * v).sum::<f64>())
            .collect()
    };
    let gate = affine(layout.wg, layout.bg, s);
    let classes = affine(layout.wc, layout.bc, NUM_CLASSES);
    let within = part.ranges().into_iter().map(|r| classes[r].to_vec()).collect();
    let roof = layout
        .roof
        .then(|| p[layout.br] + p[layout.wr..layout.wr + h].iter().zip(&hidden).map(|(a, v)| a * v).sum::<f64>());
    Activations { z1, hidden, scores: HeadScores { gate, within, roof } }
}

fn backprop(layout: &Layout, p: &[f64], x: &[f64], act: &Activations, gs: &HeadScores, grad: &mut [f64]) {
    let Layout { d, h, .. } = *layout;
    let mut dh = vec![0.0; h];
    let mut dense = |w: usize, b: usize, dscores: &[f64], dh: &mut [f64]| {
        for (r, &g) in dscores.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[b + r] += g;
            for j in 0..h {
                grad[w + r * h + j] += g * act.hidden[j];
                dh[j] += g * p[w + r * h + j];
            }
        }
    };
    dense(layout.wg, layout.bg, &gs.gate, &mut dh);
    let dclasses: Vec<f64> = gs.within.iter().flatten().copied().collect();
    dense(layout.wc, layout.bc, &dclasses, &mut dh);
    if let Some(dr) = gs.roof {
        dense(layout.wr, layout.br, &[dr], &mut dh);
    }
    for i in 0..h {
        if act.z1[i] <= 0.0 || dh[i] == 0.0 {
            continue;
        }
        grad[layout.b1 + i] += dh[i];
        for k in 0..d {
            grad[layout.w1 + i * d + k] += dh[i] * x[k];
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// A single prediction with the intermediate quantities behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: FloorLabel,
    pub expectation: f64,
    pub gate: Vec<f64>,
    pub pmf: ClassPmf,
    pub roof_prob: Option<f64>,
}

/// Trained encoder and heads, serializable as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorModel {
    pub config: ModelConfig,
    partition: SubsetPartition,
    layout: Layout,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    params: Vec<f64>,
}

impl FloorModel {
    fn init(config: &ModelConfig, feature_mean: Vec<f64>, feature_std: Vec<f64>, rng: &mut ChaCha8Rng) -> Result<Self, TrainError> {
        let partition = config.variant.partition()?;
        let (d, h) = (config.encoder.input_dim, config.encoder.hidden);
        let layout = Layout::new(d, h, partition.len(), config.mtl_roof);
        let mut params = vec![0.0; layout.len];
        let he = Normal::new(0.0, (2.0 / d as f64).sqrt()).expect("valid std");
        for w in &mut params[layout.w1..layout.b1] {
            *w = he.sample(rng);
        }
        let head = Normal::new(0.0, (1.0 / h as f64).sqrt()).expect("valid std");
        for range in [layout.wg..layout.bg, layout.wc..layout.bc, layout.wr..layout.br] {
            for w in &mut params[range] {
                *w = head.sample(rng);
            }
        }
        Ok(Self { config: config.clone(), partition, layout, feature_mean, feature_std, params })
    }

    pub fn input_dim(&self) -> usize {
        self.layout.d
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.feature_mean).zip(&self.feature_std).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn head_forward(&self, x: &[f64]) -> HeadForward {
        let act = encode(&self.layout, &self.params, &self.partition, &self.standardize(x));
        forward(&act.scores, &self.partition)
    }

    pub fn predict(&self, features: &[f64]) -> Result<Prediction, TrainError> {
        if features.len() != self.layout.d {
            return Err(TrainError::DimensionMismatch { index: 0, got: features.len(), expected: self.layout.d });
        }
        let fwd = self.head_forward(features);
        let label = match self.config.variant.prediction_rule() {
            PredictionRule::Argmax => fwd.pmf.argmax(),
            PredictionRule::FloorOfExpectation => predict(fwd.expectation),
        };
        Ok(Prediction { label, expectation: fwd.expectation, gate: fwd.outputs.gate, pmf: fwd.pmf, roof_prob: fwd.roof_prob })
    }

    pub fn evaluate(&self, data: &[Sample]) -> Result<EvalReport, TrainError> {
        let preds = data.iter().map(|s| self.predict(&s.features).map(|p| p.label)).collect::<Result<Vec<_>, _>>()?;
        let gts: Vec<FloorLabel> = data.iter().map(|s| s.label).collect();
        evaluate(&preds, &gts).map_err(|e| TrainError::Dataset(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let m: FloorModel = serde_json::from_str(text).map_err(|e| TrainError::Dataset(format!("model file: {e}")))?;
        let expect = Layout::new(m.layout.d, m.layout.h, m.partition.len(), m.layout.roof);
        if m.layout != expect || m.params.len() != expect.len || m.feature_mean.len() != expect.d || m.feature_std.len() != expect.d {
            return Err(TrainError::Dataset("model file has inconsistent shapes".into()));
        }
        Ok(m)
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossTerms,
    pub val_accuracy: f64,
    pub val_mae: f64,
}

pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss_total,loss_htt,loss_ce,loss_reg,loss_roof,val_accuracy,val_mae\n");
    for e in log {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            e.epoch, e.train.total, e.train.htt, e.train.ce, e.train.reg, e.train.roof, e.val_accuracy, e.val_mae
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded random split into train/validation/test index sets.
pub fn split_indices(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64) * train_frac).round() as usize;
    let n_val = (((n as f64) * val_frac).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    Split {
        train: idx[..n_train].to_vec(),
        val: idx[n_train..n_train + n_val].to_vec(),
        test: idx[n_train + n_val..].to_vec(),
    }
}

const SPLIT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FloorModel,
    pub log: Vec<EpochLog>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val: EvalReport,
    pub split: Split,
}

/// Splits `data` by the optimizer seed and trains on the train part,
/// selecting weights by validation accuracy.
pub fn train(config: &ModelConfig, data: &[Sample]) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let split = split_indices(data.len(), config.train_frac, config.val_frac, config.optimizer.seed);
    let pick = |ix: &[usize]| ix.iter().map(|&i| data[i].clone()).collect::<Vec<_>>();
    let (tr, va) = (pick(&split.train), pick(&split.val));
    let mut out = train_split(config, &tr, &va)?;
    out.split = split;
    Ok(out)
}

/// Trains on `train_set`; `val_set` drives model selection (the training set
/// is used when it is empty).
pub fn train_split(config: &ModelConfig, train_set: &[Sample], val_set: &[Sample]) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let d = config.encoder.input_dim;
    for (index, s) in train_set.iter().chain(val_set).enumerate() {
        if s.features.len() != d {
            return Err(TrainError::DimensionMismatch { index, got: s.features.len(), expected: d });
        }
        if s.features.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Dataset(format!("sample {index} has a non-finite feature")));
        }
    }
    let val_set = if val_set.is_empty() {
        log::warn!("empty validation split; selecting on training accuracy");
        train_set
    } else {
        val_set
    };

    let n = train_set.len() as f64;
    let mut mean = vec![0.0; d];
    for s in train_set {
        for (m, v) in mean.iter_mut().zip(&s.features) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for s in train_set {
        for ((sd, v), m) in std.iter_mut().zip(&s.features).zip(&mean) {
            *sd += (v - m).powi(2) / n;
        }
    }
    for sd in &mut std {
        *sd = if *sd > 1e-24 { sd.sqrt() } else { 1.0 };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.optimizer.seed);
    let mut model = FloorModel::init(config, mean, std, &mut rng)?;
    let xs: Vec<Vec<f64>> = train_set.iter().map(|s| model.standardize(&s.features)).collect();
    let layout = model.layout;
    let mut adam = Adam::new(layout.len, config.optimizer.learning_rate);
    let mut grad = vec![0.0; layout.len];
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut log = Vec::with_capacity(config.optimizer.epochs);
    let mut best: Option<(f64, usize, Vec<f64>, EvalReport)> = None;
    for epoch in 1..=config.optimizer.epochs {
        order.shuffle(&mut rng);
        let mut epoch_terms = LossTerms::default();
        for batch in order.chunks(config.optimizer.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &train_set[i];
                let act = encode(&layout, &model.params, &model.partition, &xs[i]);
                let roof_label = if config.mtl_roof { s.roof } else { None };
                let (terms, mut gs) = loss_and_grad(&config.variant, &model.partition, &act.scores, s.label, roof_label);
                epoch_terms.add_assign(&terms);
                gs.gate.iter_mut().for_each(|g| *g *= scale);
                gs.within.iter_mut().flatten().for_each(|g| *g *= scale);
                if let Some(r) = gs.roof.as_mut() {
                    *r *= scale;
                }
                backprop(&layout, &model.params, &xs[i], &act, &gs, &mut grad);
            }
            adam.step(&mut model.params, &grad);
        }
        let train_terms = epoch_terms.scaled(1.0 / n);
        let val = model.evaluate(val_set)?;
        log.push(EpochLog { epoch, train: train_terms, val_accuracy: val.accuracy, val_mae: val.mae });
        if !train_terms.total.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(TrainError::NonFiniteLoss { epoch, log });
        }
        if best.as_ref().is_none_or(|b| val.accuracy > b.0) {
            best = Some((val.accuracy, epoch, model.params.clone(), val));
        }
    }
    let (_, best_epoch, params, best_val) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainOutcome { model, log, best_epoch, best_val, split: Split { train: vec![], val: vec![], test: vec![] } })
}

/// One row of a feature table; the label is absent for unlabeled input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: Option<String>,
    pub features: Vec<f64>,
    pub label: Option<FloorLabel>,
    pub roof: Option<RoofLabel>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub feature_names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

/// Reads a feature table CSV: an optional `floors` column (1–18), an
/// optional `roof` column (`flat`/`nonflat`, `1`/`0`, empty for unknown),
/// an optional `id` column, and every other column as a numeric feature in
/// header order.
pub fn read_features<R: Read>(reader: R) -> Result<FeatureTable, TrainError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| TrainError::Dataset(e.to_string()))?.clone();
    let pos = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (floors_col, roof_col, id_col) = (pos("floors"), pos("roof"), pos("id"));
    let feature_cols: Vec<usize> =
        (0..headers.len()).filter(|&i| ![floors_col, roof_col, id_col].contains(&Some(i))).collect();
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| TrainError::Dataset(e.to_string()))?;
        let bad = |what: String| TrainError::Dataset(format!("row {}: {what}", row + 1));
        let label = match floors_col.map(|c| rec[c].trim()) {
            None | Some("") => None,
            Some(raw) => {
                let floors: i64 = raw.parse().map_err(|_| bad(format!("bad floors {raw:?}")))?;
                Some(FloorLabel::from_floors(floors).map_err(|e| bad(e.to_string()))?)
            }
        };
        let roof = match roof_col.map(|c| rec[c].trim().to_ascii_lowercase()) {
            None => None,
            Some(s) if s.is_empty() || s == "unknown" => None,
            Some(s) if s == "flat" || s == "1" => Some(RoofLabel::Flat),
            Some(s) if s == "nonflat" || s == "non-flat" || s == "0" => Some(RoofLabel::Nonflat),
            Some(s) => return Err(bad(format!("bad roof {s:?}"))),
        };
        let features = feature_cols
            .iter()
            .map(|&c| rec[c].trim().parse::<f64>().map_err(|_| bad(format!("bad feature {:?}", &rec[c]))))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(FeatureRow { id: id_col.map(|c| rec[c].trim().to_owned()), features, label, roof });
    }
    let feature_names = feature_cols.iter().map(|&c| headers[c].to_owned()).collect();
    Ok(FeatureTable { feature_names, rows })
}

/// Reads a labeled dataset; every row must carry `floors`.
pub fn read_dataset<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Sample>), TrainError> {
    let table = read_features(reader)?;
    let samples = table
        .rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| match r.label {
            Some(label) => Ok(Sample { features: r.features, label, roof: r.roof }),
            None => Err(TrainError::Dataset(format!("row {}: missing floors", i + 1))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((table.feature_names, samples))
}

/// Writes samples in the format [`read_dataset`] reads.
pub fn write_dataset(samples: &[Sample]) -> String {
    let d = samples.first().map_or(0, |s| s.features.len());
    let mut out = String::new();
    for k in 0..d {
        out.push_str(&format!("f{k},"));
    }
    out.push_str("floors,roof\n");
    for s in samples {
        for v in &s.features {
            out.push_str(&format!("{v:.6},"));
        }
        let roof = match s.roof {
            Some(RoofLabel::Flat) => "flat",
            Some(RoofLabel::Nonflat) => "nonflat",
            None => "",
        };
        out.push_str(&format!("{},{roof}\n", s.label.floors()));
    }
    out
}
