//! Evaluation: confusion matrix (faked = positive), the eight rate
//! metrics, ROC curve, AUC and equal error rate.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Label;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{labels} labels but {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("{0} is undefined: zero denominator")]
    Undefined(&'static str),
    #[error("ROC needs both classes, got {positives} faked and {negatives} real")]
    SingleClass { positives: usize, negatives: usize },
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl fmt::Display for ConfusionMatrix {
    /// `[[TP FP] [FN TN]]` layout.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = [self.tp, self.fp, self.fn_, self.tn]
            .iter()
            .map(|v| v.to_string().len())
            .max()
            .unwrap_or(1);
        writeln!(f, "            pred faked  pred real")?;
        writeln!(f, "faked    TP {:>w$}    FN {:>w$}", self.tp, self.fn_)?;
        write!(f, "real     FP {:>w$}    TN {:>w$}", self.fp, self.tn)
    }
}

/// Counts outcomes with `Faked` as the positive class.
pub fn confusion(labels: &[Label], predictions: &[Label]) -> Result<ConfusionMatrix, MetricsError> {
    if labels.len() != predictions.len() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            predictions: predictions.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&truth, &pred) in labels.iter().zip(predictions) {
        match (truth, pred) {
            (Label::Faked, Label::Faked) => cm.tp += 1,
            (Label::Real, Label::Faked) => cm.fp += 1,
            (Label::Faked, Label::Real) => cm.fn_ += 1,
            (Label::Real, Label::Real) => cm.tn += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub fall_out: f64,
    pub miss_rate: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub f1: f64,
    #[serde(skip)]
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// `(name, value)` pairs in reporting order.
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("sensitivity", self.sensitivity),
            ("specificity", self.specificity),
            ("fall_out", self.fall_out),
            ("miss_rate", self.miss_rate),
            ("precision", self.precision),
            ("accuracy", self.accuracy),
            ("balanced_accuracy", self.balanced_accuracy),
            ("f1", self.f1),
        ]
    }
}

fn ratio(num: u64, den: u64, name: &'static str) -> Result<f64, MetricsError> {
    if den == 0 {
        Err(MetricsError::Undefined(name))
    } else {
        Ok(num as f64 / den as f64)
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    let sensitivity = ratio(cm.tp, cm.tp + cm.fn_, "sensitivity")?;
    let specificity = ratio(cm.tn, cm.tn + cm.fp, "specificity")?;
    let fall_out = ratio(cm.fp, cm.fp + cm.tn, "fall_out")?;
    let miss_rate = ratio(cm.fn_, cm.fn_ + cm.tp, "miss_rate")?;
    let precision = ratio(cm.tp, cm.tp + cm.fp, "precision")?;
    let accuracy = ratio(cm.tp + cm.tn, cm.total(), "accuracy")?;
    let balanced_accuracy = (sensitivity + specificity) / 2.0;
    if precision + sensitivity == 0.0 {
        return Err(MetricsError::Undefined("f1"));
    }
    let f1 = 2.0 * precision * sensitivity / (precision + sensitivity);
    Ok(MetricsReport {
        sensitivity,
        specificity,
        fall_out,
        miss_rate,
        precision,
        accuracy,
        balanced_accuracy,
        f1,
        confusion: *cm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Scores `>= threshold` are called faked; the first point uses +inf.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub eer: f64,
}

impl RocCurve {
    /// Builds a curve from explicit `(fpr, tpr)` points, computing AUC and EER.
    pub fn from_points(points: Vec<RocPoint>) -> Self {
        let mut curve = Self {
            points,
            auc: 0.0,
            eer: 0.0,
        };
        curve.auc = auc(&curve);
        curve.eer = eer(&curve);
        curve
    }

    /// `threshold,fpr,tpr` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            out.push_str(&format!("{:?},{:?},{:?}\n", p.threshold, p.fpr, p.tpr));
        }
        out
    }
}

/// ROC of `scores` (probability of faked). Thresholds sweep the distinct
/// scores from high to low; tied scores enter as one step.
pub fn roc_curve(scores: &[f64], labels: &[Label]) -> Result<RocCurve, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            labels: labels.len(),
            predictions: scores.len(),
        });
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore(bad));
    }
    let positives = labels.iter().filter(|&&l| l == Label::Faked).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass {
            positives,
            negatives,
        });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            match labels[order[i]] {
                Label::Faked => tp += 1,
                Label::Real => fp += 1,
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    Ok(RocCurve::from_points(points))
}

/// Trapezoidal area under the `(fpr, tpr)` polyline.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Rate where the polyline crosses `fpr = 1 - tpr`, by linear
/// interpolation within the crossing segment.
pub fn eer(curve: &RocCurve) -> f64 {
    let gap = |p: &RocPoint| p.fpr + p.tpr - 1.0;
    for w in curve.points.windows(2) {
        let (d0, d1) = (gap(&w[0]), gap(&w[1]));
        if d0 <= 0.0 && d1 >= 0.0 {
            if d1 == d0 {
                return w[0].fpr;
            }
            let t = -d0 / (d1 - d0);
            return w[0].fpr + t * (w[1].fpr - w[0].fpr);
        }
    }
    // Unreachable for a curve anchored at (0,0) and (1,1).
    curve.points.last().map_or(0.5, |p| p.fpr)
}

/// Machine-readable evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub auc: f64,
    pub eer: f64,
}

impl EvaluationReport {
    pub fn new(metrics: MetricsReport, roc: &RocCurve) -> Self {
        Self {
            confusion: metrics.confusion,
            metrics,
            auc: roc.auc,
            eer: roc.eer,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Human-readable summary, metrics rounded to three decimals.
    pub fn summary(&self) -> String {
        let mut out = format!("{}\n", self.confusion);
        for (name, v) in self.metrics.named() {
            out.push_str(&format!("{name:<18} {v:.3}\n"));
        }
        out.push_str(&format!("{:<18} {:.3}\n", "auc", self.auc));
        out.push_str(&format!("{:<18} {:.3}\n", "eer", self.eer));
        out
    }
}
