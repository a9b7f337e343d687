//! Gated classification–regression head for floor-count estimation.
//!
//! The 18 floor classes (floors 1–18, class = floors − 1) are split into
//! contiguous subsets. A gate predicts which subset an image belongs to, a
//! classifier per subset predicts the class within it, and the product of the
//! two gives the full class distribution. The expectation of that
//! distribution is the regression output, and `floor(F)` is the prediction.
//!
//! [`loss`] holds the loss terms with their analytic gradients, [`model`]
//! the desk-scale encoder and training loop.

pub mod loss;
pub mod model;

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of floor classes.
pub const NUM_CLASSES: usize = 18;

/// Lower clamp applied inside every `-ln` term.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum HeadError {
    #[error("floor class {0} outside [0, 17]")]
    InvalidClass(i64),
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("invalid head outputs: {0}")]
    InvalidOutputs(String),
}

/// Floor class `c = floors - 1`, in `0..=17`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct FloorLabel(u8);

impl FloorLabel {
    pub fn new(class: i64) -> Result<Self, HeadError> {
        if (0..NUM_CLASSES as i64).contains(&class) {
            Ok(Self(class as u8))
        } else {
            Err(HeadError::InvalidClass(class))
        }
    }

    pub fn from_floors(floors: i64) -> Result<Self, HeadError> {
        Self::new(floors - 1)
    }

    pub fn class(self) -> usize {
        self.0 as usize
    }

    pub fn floors(self) -> u32 {
        self.0 as u32 + 1
    }
}

impl TryFrom<u8> for FloorLabel {
    type Error = HeadError;
    fn try_from(v: u8) -> Result<Self, HeadError> {
        Self::new(v as i64)
    }
}

impl From<FloorLabel> for u8 {
    fn from(l: FloorLabel) -> u8 {
        l.0
    }
}

/// Index of a subset within a partition; the first is the head `H`,
/// later ones the tails `T1`, `T2`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubsetId(pub usize);

impl fmt::Display for SubsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            0 => f.write_str("H"),
            k => write!(f, "T{k}"),
        }
    }
}

/// Contiguous split of the class range at strictly increasing cut points.
///
/// A cut at `k` starts a new subset at class `k`; no cuts means a single
/// subset holding every class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct SubsetPartition {
    cuts: Vec<usize>,
}

impl SubsetPartition {
    pub fn new(cuts: Vec<usize>) -> Result<Self, HeadError> {
        if cuts.iter().any(|&c| !(1..NUM_CLASSES).contains(&c)) {
            return Err(HeadError::InvalidPartition(format!("cuts {cuts:?} must lie in [1, 17]")));
        }
        if cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HeadError::InvalidPartition(format!("cuts {cuts:?} must be strictly increasing")));
        }
        Ok(Self { cuts })
    }

    /// `H = {0..4}`, `T1 = {5..10}`, `T2 = {11..17}`.
    pub fn head_tail_tail() -> Self {
        Self { cuts: vec![5, 11] }
    }

    pub fn single() -> Self {
        Self { cuts: Vec::new() }
    }

    pub fn cuts(&self) -> &[usize] {
        &self.cuts
    }

    pub fn len(&self) -> usize {
        self.cuts.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn ranges(&self) -> Vec<Range<usize>> {
        let mut bounds = Vec::with_capacity(self.cuts.len() + 2);
        bounds.push(0);
        bounds.extend_from_slice(&self.cuts);
        bounds.push(NUM_CLASSES);
        bounds.windows(2).map(|w| w[0]..w[1]).collect()
    }

    pub fn range(&self, s: SubsetId) -> Range<usize> {
        let lo = if s.0 == 0 { 0 } else { self.cuts[s.0 - 1] };
        let hi = self.cuts.get(s.0).copied().unwrap_or(NUM_CLASSES);
        lo..hi
    }

    /// The subset containing class `c`.
    pub fn subset_of(&self, c: usize) -> SubsetId {
        SubsetId(self.cuts.partition_point(|&cut| cut <= c))
    }
}

impl Default for SubsetPartition {
    fn default() -> Self {
        Self::head_tail_tail()
    }
}

impl TryFrom<Vec<usize>> for SubsetPartition {
    type Error = HeadError;
    fn try_from(v: Vec<usize>) -> Result<Self, HeadError> {
        Self::new(v)
    }
}

impl From<SubsetPartition> for Vec<usize> {
    fn from(p: SubsetPartition) -> Vec<usize> {
        p.cuts
    }
}

pub fn partition_of(c: FloorLabel, part: &SubsetPartition) -> SubsetId {
    part.subset_of(c.class())
}

/// Gate probabilities over subsets plus one distribution per subset.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs {
    pub gate: Vec<f64>,
    pub within: Vec<Vec<f64>>,
}

fn check_simplex(name: &str, v: &[f64]) -> Result<(), HeadError> {
    if v.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(HeadError::InvalidOutputs(format!("{name} has a negative or non-finite entry")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(HeadError::InvalidOutputs(format!("{name} sums to {s}")));
    }
    Ok(())
}

impl HeadOutputs {
    pub fn validate(&self, part: &SubsetPartition) -> Result<(), HeadError> {
        if self.gate.len() != part.len() || self.within.len() != part.len() {
            return Err(HeadError::InvalidOutputs(format!(
                "expected {} subsets, got gate {} / within {}",
                part.len(),
                self.gate.len(),
                self.within.len()
            )));
        }
        check_simplex("gate", &self.gate)?;
        for (k, (w, r)) in self.within.iter().zip(part.ranges()).enumerate() {
            if w.len() != r.len() {
                return Err(HeadError::InvalidOutputs(format!("subset {k} expects {} classes, got {}", r.len(), w.len())));
            }
            check_simplex(&format!("within[{k}]"), w)?;
        }
        Ok(())
    }
}

/// Probability mass over the 18 floor classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPmf(pub [f64; NUM_CLASSES]);

impl ClassPmf {
    pub fn argmax(&self) -> FloorLabel {
        let mut best = 0;
        for c in 1..NUM_CLASSES {
            if self.0[c] > self.0[best] {
                best = c;
            }
        }
        FloorLabel(best as u8)
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// `P_c = gate[subset(c)] * within[subset(c)][c - start]`.
pub fn combine(outputs: &HeadOutputs, part: &SubsetPartition) -> ClassPmf {
    let mut p = [0.0; NUM_CLASSES];
    for (k, r) in part.ranges().into_iter().enumerate() {
        let g = outputs.gate[k];
        for (j, c) in r.enumerate() {
            p[c] = g * outputs.within[k][j];
        }
    }
    ClassPmf(p)
}

pub(crate) fn neg_log(p: f64) -> f64 {
    -p.max(LOG_CLAMP).ln()
}

/// Cross entropy of the gate against the true class's subset.
pub fn httc_loss(gate: &[f64], c_gt: FloorLabel, part: &SubsetPartition) -> f64 {
    neg_log(gate[part.subset_of(c_gt.class()).0])
}

pub fn ce_loss(pmf: &ClassPmf, c_gt: FloorLabel) -> f64 {
    neg_log(pmf.0[c_gt.class()])
}

/// `F = sum_c c * P_c`.
pub fn expectation(pmf: &ClassPmf) -> f64 {
    pmf.0.iter().enumerate().map(|(c, p)| c as f64 * p).sum()
}

pub fn reg_loss(f: f64, c_gt: FloorLabel) -> f64 {
    (f - c_gt.class() as f64).abs()
}

/// `floor(F)` clamped into the class range.
pub fn predict(f: f64) -> FloorLabel {
    let c = if f.is_nan() { 0.0 } else { f.floor().clamp(0.0, (NUM_CLASSES - 1) as f64) };
    FloorLabel(c as u8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoofLabel {
    Flat,
    Nonflat,
}

/// Binary cross entropy with `roof_prob` the probability of a flat roof.
pub fn roof_aux_loss(roof_prob: f64, label: RoofLabel) -> f64 {
    match label {
        RoofLabel::Flat => neg_log(roof_prob),
        RoofLabel::Nonflat => neg_log(1.0 - roof_prob),
    }
}

/// Experiment variants of the head. Serialized in the [`Variant::parse`] form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    /// One 18-way classifier, cross entropy, argmax prediction.
    PlainClassifier,
    /// Gate over two subsets split at `cut`.
    Htc { cut: usize },
    /// Gate over three subsets.
    Httc { cut1: usize, cut2: usize },
    /// One 18-way classifier with expectation regression.
    Hyb,
    /// Gate over three subsets with expectation regression.
    HybHttc { cut1: usize, cut2: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionRule {
    Argmax,
    FloorOfExpectation,
}

impl Variant {
    pub fn full() -> Self {
        Variant::HybHttc { cut1: 5, cut2: 11 }
    }

    pub fn partition(&self) -> Result<SubsetPartition, HeadError> {
        match *self {
            Variant::PlainClassifier | Variant::Hyb => Ok(SubsetPartition::single()),
            Variant::Htc { cut } => SubsetPartition::new(vec![cut]),
            Variant::Httc { cut1, cut2 } | Variant::HybHttc { cut1, cut2 } => SubsetPartition::new(vec![cut1, cut2]),
        }
    }

    pub fn uses_regression(&self) -> bool {
        matches!(self, Variant::Hyb | Variant::HybHttc { .. })
    }

    pub fn prediction_rule(&self) -> PredictionRule {
        if self.uses_regression() {
            PredictionRule::FloorOfExpectation
        } else {
            PredictionRule::Argmax
        }
    }

    /// Parses `plain`, `htc:6`, `httc:5,11`, `hyb`, `hyb+httc:5,11`.
    pub fn parse(s: &str) -> Result<Self, HeadError> {
        let s = s.trim().to_ascii_lowercase();
        let (name, args) = s.split_once(':').map_or((s.as_str(), None), |(a, b)| (a, Some(b)));
        let nums = |args: Option<&str>, n: usize| -> Result<Vec<usize>, HeadError> {
            let v: Vec<usize> = args
                .unwrap_or("")
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().parse().map_err(|_| HeadError::InvalidPartition(format!("bad cut {t:?}"))))
                .collect::<Result<_, _>>()?;
            if v.len() != n {
                return Err(HeadError::InvalidPartition(format!("{name} needs {n} cut(s)")));
            }
            Ok(v)
        };
        let v = match name {
            "plain" | "plain_classifier" | "baseline" => Variant::PlainClassifier,
            "hyb" => Variant::Hyb,
            "htc" => Variant::Htc { cut: nums(args, 1)?[0] },
            "httc" => {
                let c = nums(args, 2)?;
                Variant::Httc { cut1: c[0], cut2: c[1] }
            }
            "hyb+httc" | "hyb_httc" => {
                let c = nums(args, 2)?;
                Variant::HybHttc { cut1: c[0], cut2: c[1] }
            }
            other => return Err(HeadError::InvalidPartition(format!("unknown variant {other:?}"))),
        };
        v.partition()?;
        Ok(v)
    }
}

impl TryFrom<String> for Variant {
    type Error = HeadError;

    fn try_from(s: String) -> Result<Self, HeadError> {
        Variant::parse(&s)
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::PlainClassifier => f.write_str("plain"),
            Variant::Htc { cut } => write!(f, "htc:{cut}"),
            Variant::Httc { cut1, cut2 } => write!(f, "httc:{cut1},{cut2}"),
            Variant::Hyb => f.write_str("hyb"),
            Variant::HybHttc { cut1, cut2 } => write!(f, "hyb+httc:{cut1},{cut2}"),
        }
    }
}

/// Sum of the loss terms the variant uses; absent terms count as zero.
pub fn total_loss(variant: &Variant, gate: &[f64], pmf: &ClassPmf, f: f64, c_gt: FloorLabel) -> Result<f64, HeadError> {
    let part = variant.partition()?;
    let htt = if part.len() > 1 { httc_loss(gate, c_gt, &part) } else { 0.0 };
    let reg = if variant.uses_regression() { reg_loss(f, c_gt) } else { 0.0 };
    Ok(htt + ce_loss(pmf, c_gt) + reg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lbl(c: i64) -> FloorLabel {
        FloorLabel::new(c).unwrap()
    }

    fn uniform(n: usize) -> Vec<f64> {
        vec![1.0 / n as f64; n]
    }

    fn delta(n: usize, at: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        v
    }

    #[test]
    fn default_partition_sets() {
        let p = SubsetPartition::head_tail_tail();
        assert_eq!(p.ranges(), vec![0..5, 5..11, 11..18]);
        assert_eq!(partition_of(lbl(0), &p).to_string(), "H");
        assert_eq!(partition_of(lbl(4), &p).to_string(), "H");
        assert_eq!(partition_of(lbl(5), &p).to_string(), "T1");
        assert_eq!(partition_of(lbl(10), &p).to_string(), "T1");
        assert_eq!(partition_of(lbl(11), &p).to_string(), "T2");
        assert_eq!(partition_of(lbl(17), &p).to_string(), "T2");
        for (k, r) in p.ranges().into_iter().enumerate() {
            assert_eq!(p.range(SubsetId(k)), r);
        }
    }

    #[test]
    fn partition_validation() {
        assert!(SubsetPartition::new(vec![0]).is_err());
        assert!(SubsetPartition::new(vec![18]).is_err());
        assert!(SubsetPartition::new(vec![6, 6]).is_err());
        assert!(SubsetPartition::new(vec![11, 5]).is_err());
        assert_eq!(SubsetPartition::new(vec![6]).unwrap().ranges(), vec![0..6, 6..18]);
    }

    #[test]
    fn labels() {
        assert!(FloorLabel::new(18).is_err());
        assert!(FloorLabel::new(-1).is_err());
        assert_eq!(FloorLabel::from_floors(18).unwrap().class(), 17);
        assert_eq!(lbl(3).floors(), 4);
    }

    #[test]
    fn gate_loss_examples() {
        let p = SubsetPartition::head_tail_tail();
        assert_eq!(httc_loss(&[1.0, 0.0, 0.0], lbl(2), &p), 0.0);
        assert!((httc_loss(&[0.25, 0.5, 0.25], lbl(7), &p) - 0.5f64.ln().abs()).abs() < 1e-12);
        assert!((httc_loss(&[0.25, 0.5, 0.25], lbl(7), &p) - 0.6931).abs() < 1e-4);
        assert!((httc_loss(&[0.1, 0.1, 0.8], lbl(12), &p) - 0.2231).abs() < 1e-4);
        // zero probability is clamped, not infinite
        assert!((httc_loss(&[1.0, 0.0, 0.0], lbl(12), &p) - 1e-12f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn combine_examples() {
        let p = SubsetPartition::head_tail_tail();
        let o = HeadOutputs { gate: vec![1.0, 0.0, 0.0], within: vec![uniform(5), uniform(6), uniform(7)] };
        o.validate(&p).unwrap();
        let pmf = combine(&o, &p);
        for c in 0..5 {
            assert!((pmf.0[c] - 0.2).abs() < 1e-15);
        }
        assert!(pmf.0[5..].iter().all(|&x| x == 0.0));

        let o = HeadOutputs { gate: vec![0.5, 0.5, 0.0], within: vec![delta(5, 0), delta(6, 0), uniform(7)] };
        let pmf = combine(&o, &p);
        assert_eq!(pmf.0[0], 0.5);
        assert_eq!(pmf.0[5], 0.5);
        assert_eq!(pmf.sum(), 1.0);
    }

    #[test]
    fn output_validation() {
        let p = SubsetPartition::head_tail_tail();
        let o = HeadOutputs { gate: vec![0.5, 0.5], within: vec![uniform(5), uniform(6)] };
        assert!(o.validate(&p).is_err());
        let o = HeadOutputs { gate: vec![0.5, 0.6, -0.1], within: vec![uniform(5), uniform(6), uniform(7)] };
        assert!(o.validate(&p).is_err());
        let o = HeadOutputs { gate: vec![0.5, 0.5, 0.0], within: vec![uniform(5), uniform(5), uniform(7)] };
        assert!(o.validate(&p).is_err());
    }

    #[test]
    fn ce_and_expectation_examples() {
        let mut d = [0.0; NUM_CLASSES];
        d[4] = 1.0;
        let pmf = ClassPmf(d);
        assert_eq!(ce_loss(&pmf, lbl(4)), 0.0);
        assert_eq!(expectation(&pmf), 4.0);

        let mut q = [0.0; NUM_CLASSES];
        q[3] = 0.25;
        q[0] = 0.75;
        assert!((ce_loss(&ClassPmf(q), lbl(3)) - 1.3863).abs() < 1e-4);

        let u = ClassPmf([1.0 / 18.0; NUM_CLASSES]);
        assert!((expectation(&u) - 8.5).abs() < 1e-12);

        let mut h = [0.0; NUM_CLASSES];
        h[3] = 0.5;
        h[5] = 0.5;
        assert_eq!(expectation(&ClassPmf(h)), 4.0);
    }

    #[test]
    fn regression_and_prediction() {
        assert_eq!(reg_loss(4.0, lbl(4)), 0.0);
        assert!((reg_loss(3.2, lbl(4)) - 0.8).abs() < 1e-12);
        assert_eq!(reg_loss(8.5, lbl(0)), 8.5);
        assert_eq!(predict(4.0), lbl(4));
        assert_eq!(predict(4.99), lbl(4));
        assert_eq!(predict(17.6), lbl(17));
        assert_eq!(predict(-0.3), lbl(0));
        assert_eq!(predict(f64::NAN), lbl(0));
    }

    #[test]
    fn roof_loss_examples() {
        assert_eq!(roof_aux_loss(1.0, RoofLabel::Flat), 0.0);
        assert!((roof_aux_loss(0.5, RoofLabel::Flat) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((roof_aux_loss(0.5, RoofLabel::Nonflat) - 0.6931).abs() < 1e-4);
        assert!(roof_aux_loss(0.6, RoofLabel::Flat) < roof_aux_loss(0.5, RoofLabel::Flat));
    }

    #[test]
    fn total_loss_composes() {
        let v = Variant::full();
        let p = v.partition().unwrap();
        // perfect prediction
        let o = HeadOutputs { gate: vec![0.0, 1.0, 0.0], within: vec![uniform(5), delta(6, 2), uniform(7)] };
        let pmf = combine(&o, &p);
        let f = expectation(&pmf);
        assert_eq!(total_loss(&v, &o.gate, &pmf, f, lbl(7)).unwrap(), 0.0);

        let o = HeadOutputs { gate: vec![0.25, 0.5, 0.25], within: vec![uniform(5), uniform(6), uniform(7)] };
        let pmf = combine(&o, &p);
        let f = expectation(&pmf);
        let c = lbl(7);
        let expected = httc_loss(&o.gate, c, &p) + ce_loss(&pmf, c) + reg_loss(f, c);
        assert!((total_loss(&v, &o.gate, &pmf, f, c).unwrap() - expected).abs() < 1e-12);
        // plain drops the gate and regression terms
        let plain = total_loss(&Variant::PlainClassifier, &[1.0], &pmf, f, c).unwrap();
        assert!((plain - ce_loss(&pmf, c)).abs() < 1e-12);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [
            Variant::PlainClassifier,
            Variant::Htc { cut: 6 },
            Variant::Httc { cut1: 5, cut2: 11 },
            Variant::Hyb,
            Variant::full(),
        ] {
            assert_eq!(Variant::parse(&v.to_string()).unwrap(), v);
        }
        assert!(Variant::parse("httc:11,5").is_err());
        assert!(Variant::parse("htc").is_err());
        assert!(Variant::parse("nonsense").is_err());
    }
}
