//! Classification and regression metrics, and confidence summaries by
//! confusion category.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step-wise average precision. Items are ranked by score descending; equal
/// scores keep their input order, so callers wanting an id tie-break sort
/// by id first.
pub fn aupr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_pair("aupr", scores.len(), labels.len())?;
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("aupr: non-finite score".into()));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Numeric("aupr needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

/// F1 of `prob >= threshold` against the labels; 0 when nothing is
/// predicted positive and nothing is positive.
pub fn f1(probs: &[f64], labels: &[bool], threshold: f64) -> Result<f64> {
    check_pair("f1", probs.len(), labels.len())?;
    if !threshold.is_finite() {
        return Err(Error::Config("f1 threshold must be finite".into()));
    }
    let c = Counts::new(probs, labels, threshold);
    let denom = 2 * c.tp + c.fp + c.fn_;
    Ok(if denom == 0 {
        0.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    })
}

pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("pcc", x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::Empty("pcc needs at least two points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Numeric("pcc undefined: zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair("rmse", x.len(), y.len())?;
    if x.is_empty() {
        return Err(Error::Empty("rmse of an empty sample".into()));
    }
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / x.len() as f64).sqrt())
}

fn check_pair(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, (a, 1), (b, 1)));
    }
    if a == 0 {
        return Err(Error::Empty(format!("{op} of an empty sample")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    tp: usize,
    fp: usize,
    tn: usize,
    fn_: usize,
}

impl Counts {
    fn new(probs: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&p, &l) in probs.iter().zip(labels) {
            match (p >= threshold, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub count: usize,
    pub mean: Option<f64>,
    /// At [`QUANTILES`]; empty for an empty category.
    pub quantiles: Vec<f64>,
}

impl CategoryStats {
    fn from_values(mut v: Vec<f64>) -> Self {
        if v.is_empty() {
            return Self::default();
        }
        v.sort_by(f64::total_cmp);
        Self {
            count: v.len(),
            mean: Some(v.iter().sum::<f64>() / v.len() as f64),
            quantiles: QUANTILES.iter().map(|&q| quantile(&v, q)).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionSummary {
    pub threshold: f64,
    pub tp: CategoryStats,
    pub fp: CategoryStats,
    pub tn: CategoryStats,
    #[serde(rename = "fn")]
    pub fn_: CategoryStats,
    /// Mean confidence over TP ∪ TN.
    pub mean_correct: Option<f64>,
    /// Mean confidence over FP ∪ FN.
    pub mean_incorrect: Option<f64>,
}

impl ConfusionSummary {
    pub fn total(&self) -> usize {
        self.tp.count + self.fp.count + self.tn.count + self.fn_.count
    }
}

/// Confidence per confusion category at `prob >= threshold`.
pub fn confusion_confidence(
    labels: &[bool],
    probs: &[f64],
    confidences: &[f64],
    threshold: f64,
) -> Result<ConfusionSummary> {
    check_pair("confusion_confidence", labels.len(), probs.len())?;
    check_pair("confusion_confidence", labels.len(), confidences.len())?;
    let mut cats: [Vec<f64>; 4] = Default::default();
    for ((&l, &p), &c) in labels.iter().zip(probs).zip(confidences) {
        let k = match (p >= threshold, l) {
            (true, true) => 0,
            (true, false) => 1,
            (false, false) => 2,
            (false, true) => 3,
        };
        cats[k].push(c);
    }
    let mean = |a: &[f64], b: &[f64]| {
        let n = a.len() + b.len();
        (n > 0).then(|| (a.iter().sum::<f64>() + b.iter().sum::<f64>()) / n as f64)
    };
    let mean_correct = mean(&cats[0], &cats[2]);
    let mean_incorrect = mean(&cats[1], &cats[3]);
    let [tp, fp, tn, fn_] = cats;
    Ok(ConfusionSummary {
        threshold,
        tp: CategoryStats::from_values(tp),
        fp: CategoryStats::from_values(fp),
        tn: CategoryStats::from_values(tn),
        fn_: CategoryStats::from_values(fn_),
        mean_correct,
        mean_incorrect,
    })
}

/// Metrics of one evaluation. Undefined values are `None` with a reason in
/// `flags`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aupr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pcc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub flags: Vec<String>,
}

impl MetricBundle {
    pub fn classification(probs: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut b = Self {
            n: probs.len(),
            ..Default::default()
        };
        b.aupr = b.record("aupr", aupr(probs, labels));
        b.f1 = b.record("f1", f1(probs, labels, threshold));
        b
    }

    pub fn regression(pred: &[f64], target: &[f64]) -> Self {
        let mut b = Self {
            n: pred.len(),
            ..Default::default()
        };
        b.pcc = b.record("pcc", pcc(pred, target));
        b.rmse = b.record("rmse", rmse(pred, target));
        b
    }

    fn record(&mut self, name: &str, r: Result<f64>) -> Option<f64> {
        r.map_err(|e| self.flags.push(format!("{name}: {}: {e}", e.class())))
            .ok()
    }
}
