//! Loss terms over unnormalized head scores, with analytic gradients.
//!
//! Scores are turned into probabilities by a softmax per head (gate and each
//! subset classifier) and a sigmoid for the roof head. For a gate
//! probability `g`, within-subset probabilities `w_k` and subset means
//! `m_k = sum_c c * w_k[c]`:
//!
//! * `d L_htt / d a_j = g_j - [j = k*]`
//! * `d L_ce / d a_j` is the same, and `d L_ce / d b_k* = w_k* - e_c*`
//! * `d F / d a_j = g_j (m_j - F)`, `d F / d b_k[c] = g_k w_k[c] (c - m_k)`
//! * `d L_roof / d r = sigmoid(r) - y`

use serde::{Deserialize, Serialize};

use super::{
    combine, expectation, neg_log, ClassPmf, FloorLabel, HeadOutputs, RoofLabel, SubsetPartition, Variant, LOG_CLAMP,
};

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|&s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Unnormalized scores of every head for one sample.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HeadScores {
    pub gate: Vec<f64>,
    pub within: Vec<Vec<f64>>,
    pub roof: Option<f64>,
}

impl HeadScores {
    pub fn zeros_like(other: &HeadScores) -> Self {
        Self {
            gate: vec![0.0; other.gate.len()],
            within: other.within.iter().map(|w| vec![0.0; w.len()]).collect(),
            roof: other.roof.map(|_| 0.0),
        }
    }

    /// Every score in a fixed order: gate, within subsets, roof.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.gate.clone();
        for w in &self.within {
            v.extend_from_slice(w);
        }
        v.extend(self.roof);
        v
    }

    /// Inverse of [`HeadScores::flatten`] using `self` for the shape.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let mut it = flat.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let gate = take(self.gate.len());
        let within = self.within.iter().map(|w| take(w.len())).collect();
        let roof = self.roof.map(|_| take(1)[0]);
        Self { gate, within, roof }
    }

    pub fn outputs(&self) -> HeadOutputs {
        HeadOutputs { gate: softmax(&self.gate), within: self.within.iter().map(|w| softmax(w)).collect() }
    }
}

/// Individual loss terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub htt: f64,
    pub ce: f64,
    pub reg: f64,
    pub roof: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn add_assign(&mut self, o: &LossTerms) {
        self.htt += o.htt;
        self.ce += o.ce;
        self.reg += o.reg;
        self.roof += o.roof;
        self.total += o.total;
    }

    pub fn scaled(&self, k: f64) -> LossTerms {
        LossTerms { htt: self.htt * k, ce: self.ce * k, reg: self.reg * k, roof: self.roof * k, total: self.total * k }
    }
}

/// Forward pass products needed for prediction.
#[derive(Debug, Clone)]
pub struct HeadForward {
    pub outputs: HeadOutputs,
    pub pmf: ClassPmf,
    pub expectation: f64,
    pub roof_prob: Option<f64>,
}

pub fn forward(scores: &HeadScores, part: &SubsetPartition) -> HeadForward {
    let outputs = scores.outputs();
    let pmf = combine(&outputs, part);
    let expectation = expectation(&pmf);
    HeadForward { outputs, pmf, expectation, roof_prob: scores.roof.map(sigmoid) }
}

/// Loss terms for `variant` and their gradient with respect to `scores`.
///
/// The gate term is only active when the partition has more than one subset;
/// the regression term only for the hybrid variants; the roof term only when
/// both a roof score and a roof label are present. Terms whose argument falls
/// under the log clamp contribute a zero gradient.
pub fn loss_and_grad(
    variant: &Variant,
    part: &SubsetPartition,
    scores: &HeadScores,
    c_gt: FloorLabel,
    roof_label: Option<RoofLabel>,
) -> (LossTerms, HeadScores) {
    let fwd = forward(scores, part);
    let g = &fwd.outputs.gate;
    let w = &fwd.outputs.within;
    let ranges = part.ranges();
    let c = c_gt.class();
    let k_star = part.subset_of(c).0;
    let j_star = c - ranges[k_star].start;

    let mut grad = HeadScores::zeros_like(scores);
    let mut terms = LossTerms::default();

    // -ln g_k* ; shared by the gate term and by the gate half of the CE term
    let gate_ce_grad = |grad: &mut HeadScores, weight: f64| {
        if g[k_star] >= LOG_CLAMP {
            for (j, gj) in g.iter().enumerate() {
                grad.gate[j] += weight * (gj - if j == k_star { 1.0 } else { 0.0 });
            }
        }
    };

    if part.len() > 1 {
        terms.htt = neg_log(g[k_star]);
        gate_ce_grad(&mut grad, 1.0);
    }

    // -ln P_c* = -ln g_k* - ln w_k*[j*]
    let p_true = fwd.pmf.0[c];
    terms.ce = neg_log(p_true);
    if p_true >= LOG_CLAMP {
        if part.len() > 1 {
            gate_ce_grad(&mut grad, 1.0);
        }
        for (j, wj) in w[k_star].iter().enumerate() {
            grad.within[k_star][j] += wj - if j == j_star { 1.0 } else { 0.0 };
        }
    }

    if variant.uses_regression() {
        let f = fwd.expectation;
        let diff = f - c as f64;
        terms.reg = diff.abs();
        let sign = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
        if sign != 0.0 {
            let means: Vec<f64> = ranges
                .iter()
                .zip(w)
                .map(|(r, wk)| r.clone().zip(wk).map(|(cc, p)| cc as f64 * p).sum())
                .collect();
            if part.len() > 1 {
                for j in 0..g.len() {
                    grad.gate[j] += sign * g[j] * (means[j] - f);
                }
            }
            for (k, r) in ranges.iter().enumerate() {
                for (j, cc) in r.clone().enumerate() {
                    grad.within[k][j] += sign * g[k] * w[k][j] * (cc as f64 - means[k]);
                }
            }
        }
    }

    if let (Some(r), Some(label)) = (scores.roof, roof_label) {
        let p = sigmoid(r);
        let (y, p_label) = match label {
            RoofLabel::Flat => (1.0, p),
            RoofLabel::Nonflat => (0.0, 1.0 - p),
        };
        terms.roof = neg_log(p_label);
        if p_label >= LOG_CLAMP {
            grad.roof = Some(p - y);
        }
    }

    terms.total = terms.htt + terms.ce + terms.reg + terms.roof;
    (terms, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{ce_loss, httc_loss, reg_loss, roof_aux_loss, total_loss};

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0, 2.0, 3.0]);
        let b = softmax(&[101.0, 102.0, 103.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(softmax(&[0.0]), vec![1.0]);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn terms_match_probability_level_functions() {
        let v = Variant::full();
        let part = v.partition().unwrap();
        let scores = HeadScores {
            gate: vec![0.3, -0.2, 0.1],
            within: vec![vec![0.1, 0.2, 0.3, 0.4, 0.5], vec![0.0; 6], vec![-0.5, 0.5, 0.0, 0.0, 0.1, 0.2, 0.3]],
            roof: Some(0.4),
        };
        let c = FloorLabel::new(7).unwrap();
        let (terms, _) = loss_and_grad(&v, &part, &scores, c, Some(RoofLabel::Nonflat));
        let fwd = forward(&scores, &part);
        assert!((terms.htt - httc_loss(&fwd.outputs.gate, c, &part)).abs() < 1e-12);
        assert!((terms.ce - ce_loss(&fwd.pmf, c)).abs() < 1e-12);
        assert!((terms.reg - reg_loss(fwd.expectation, c)).abs() < 1e-12);
        assert!((terms.roof - roof_aux_loss(sigmoid(0.4), RoofLabel::Nonflat)).abs() < 1e-12);
        let head_total = total_loss(&v, &fwd.outputs.gate, &fwd.pmf, fwd.expectation, c).unwrap();
        assert!((terms.total - terms.roof - head_total).abs() < 1e-12);
    }

    #[test]
    fn flatten_round_trips() {
        let s = HeadScores { gate: vec![1.0, 2.0], within: vec![vec![3.0], vec![4.0, 5.0]], roof: Some(6.0) };
        let flat = s.flatten();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(s.with_flat(&flat), s);
    }
}
