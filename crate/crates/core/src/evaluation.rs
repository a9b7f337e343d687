//! Accuracy, accuracy within one floor, MAE, RMSE and row-normalized
//! confusion matrices over predicted/ground-truth floor classes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::head::{FloorLabel, NUM_CLASSES};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction and ground-truth lengths differ ({preds} vs {gts})")]
    LengthMismatch { preds: usize, gts: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("need at least 2 runs to aggregate, got {0}")]
    TooFewRuns(usize),
    #[error("unreadable paired file: {0}")]
    Read(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub accuracy_pm1: f64,
    pub mae: f64,
    pub rmse: f64,
    /// `confusion[gt][pred]`, percent of the ground-truth row.
    pub confusion: Vec<Vec<f64>>,
    /// Ground-truth classes with no samples; their rows are all zero.
    pub empty_rows: Vec<usize>,
}

pub fn evaluate(preds: &[FloorLabel], gts: &[FloorLabel]) -> Result<EvalReport, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), gts: gts.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = preds.len();
    let mut exact = 0usize;
    let mut within_one = 0usize;
    let mut abs_sum = 0u64;
    let mut sq_sum = 0u64;
    let mut counts = vec![vec![0usize; NUM_CLASSES]; NUM_CLASSES];
    for (p, g) in preds.iter().zip(gts) {
        let d = (p.class() as i64 - g.class() as i64).unsigned_abs();
        exact += usize::from(d == 0);
        within_one += usize::from(d <= 1);
        abs_sum += d;
        sq_sum += d * d;
        counts[g.class()][p.class()] += 1;
    }
    let mut empty_rows = Vec::new();
    let confusion = counts
        .iter()
        .enumerate()
        .map(|(g, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                empty_rows.push(g);
                vec![0.0; NUM_CLASSES]
            } else {
                row.iter().map(|&c| 100.0 * c as f64 / total as f64).collect()
            }
        })
        .collect();
    let nf = n as f64;
    Ok(EvalReport {
        n,
        accuracy: exact as f64 / nf,
        accuracy_pm1: within_one as f64 / nf,
        mae: abs_sum as f64 / nf,
        rmse: (sq_sum as f64 / nf).sqrt(),
        confusion,
        empty_rows,
    })
}

/// Confusion matrix as CSV: header `gt\pred,0,...,17`, one row per ground-truth class.
pub fn confusion_csv(report: &EvalReport) -> String {
    let mut out = String::from("gt\\pred");
    for c in 0..NUM_CLASSES {
        out.push_str(&format!(",{c}"));
    }
    out.push('\n');
    for (g, row) in report.confusion.iter().enumerate() {
        out.push_str(&g.to_string());
        for v in row {
            out.push_str(&format!(",{v:.4}"));
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub accuracy: MeanStd,
    pub accuracy_pm1: MeanStd,
    pub mae: MeanStd,
    pub rmse: MeanStd,
}

/// Mean and sample standard deviation (`n - 1` denominator).
pub fn mean_std(xs: &[f64]) -> MeanStd {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    MeanStd { mean, std: var.sqrt() }
}

pub fn aggregate_runs(reports: &[EvalReport]) -> Result<AggregateReport, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewRuns(reports.len()));
    }
    let col = |f: fn(&EvalReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateReport {
        runs: reports.len(),
        accuracy: col(|r| r.accuracy),
        accuracy_pm1: col(|r| r.accuracy_pm1),
        mae: col(|r| r.mae),
        rmse: col(|r| r.rmse),
    })
}

/// Reads a CSV with `pred_class` and `gt_class` columns (floor classes, 0–17).
pub fn read_pairs(text: &str) -> Result<(Vec<FloorLabel>, Vec<FloorLabel>), EvalError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| EvalError::Read(e.to_string()))?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| EvalError::Read(format!("missing column {name}")))
    };
    let (pi, gi) = (col("pred_class")?, col("gt_class")?);
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| EvalError::Read(e.to_string()))?;
        let parse = |i: usize| -> Result<FloorLabel, EvalError> {
            let raw = rec.get(i).unwrap_or("").trim();
            raw.parse::<i64>()
                .ok()
                .and_then(|c| FloorLabel::new(c).ok())
                .ok_or_else(|| EvalError::Read(format!("row {}: bad class {raw:?}", line + 1)))
        };
        preds.push(parse(pi)?);
        gts.push(parse(gi)?);
    }
    Ok((preds, gts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[i64]) -> Vec<FloorLabel> {
        v.iter().map(|&c| FloorLabel::new(c).unwrap()).collect()
    }

    #[test]
    fn perfect_predictions() {
        let g = labels(&[0, 3, 3, 17]);
        let r = evaluate(&g, &g).unwrap();
        assert_eq!((r.accuracy, r.accuracy_pm1, r.mae, r.rmse), (1.0, 1.0, 0.0, 0.0));
        assert_eq!(r.confusion[3][3], 100.0);
        assert_eq!(r.confusion[17][17], 100.0);
        assert_eq!(r.empty_rows.len(), 15);
    }

    #[test]
    fn three_sample_fixture() {
        let r = evaluate(&labels(&[3, 4, 5]), &labels(&[3, 5, 7])).unwrap();
        assert_eq!(r.accuracy, 1.0 / 3.0);
        assert_eq!(r.accuracy_pm1, 2.0 / 3.0);
        assert_eq!(r.mae, 1.0);
        assert_eq!(r.rmse, (5.0f64 / 3.0).sqrt());
        assert!((r.rmse - 1.2910).abs() < 1e-4);
        assert_eq!(r.confusion[5][4], 100.0);
        assert_eq!(r.confusion[7][5], 100.0);
    }

    #[test]
    fn input_errors() {
        assert_eq!(evaluate(&labels(&[1]), &labels(&[1, 2])), Err(EvalError::LengthMismatch { preds: 1, gts: 2 }));
        assert_eq!(evaluate(&[], &[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn aggregation() {
        let base = evaluate(&labels(&[1]), &labels(&[1])).unwrap();
        let same = aggregate_runs(&[base.clone(), base.clone()]).unwrap();
        assert_eq!(same.accuracy.std, 0.0);
        let mut a = base.clone();
        a.accuracy = 0.80;
        let mut b = base.clone();
        b.accuracy = 0.82;
        let agg = aggregate_runs(&[a, b]).unwrap();
        assert!((agg.accuracy.mean - 0.81).abs() < 1e-12);
        assert!((agg.accuracy.std - 0.014142).abs() < 1e-5);
        assert_eq!(aggregate_runs(&[base]), Err(EvalError::TooFewRuns(1)));
    }

    #[test]
    fn pairs_csv() {
        let (p, g) = read_pairs("row,pred_class,gt_class\n0,3,3\n1,4,5\n2,5,7\n").unwrap();
        assert_eq!(evaluate(&p, &g).unwrap().accuracy, 1.0 / 3.0);
        assert!(read_pairs("pred_class\n1\n").is_err());
        assert!(read_pairs("pred_class,gt_class\n1,18\n").is_err());
    }

    #[test]
    fn confusion_csv_shape() {
        let r = evaluate(&labels(&[3, 4, 5]), &labels(&[3, 5, 7])).unwrap();
        let csv = confusion_csv(&r);
        assert_eq!(csv.lines().count(), 19);
        assert!(csv.lines().nth(6).unwrap().starts_with("5,0.0000,0.0000,0.0000,0.0000,100.0000"));
    }
}
