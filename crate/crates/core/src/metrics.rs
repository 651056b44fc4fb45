//! Confusion matrices and classification metrics.
//!
//! Two averaging conventions are supported:
//!
//! * [`Averaging::Macro`]: precision, recall, F1 and F2 are unweighted means of
//!   the per-class one-vs-rest values.
//! * [`Averaging::BinaryPositiveClass`]: for two classes, precision and recall
//!   are those of the positive class (index 1) while F1 and F2 stay macro
//!   averaged over both classes. The published binary dysplasia results are
//!   only reproducible under this mixed convention; for example
//!   TP=56, FP=7, FN=0, TN=255 gives recall 1.000, precision 0.889 and
//!   macro-F1 0.964, whereas the positive-class F1 would be 0.941.
//!
//! Accuracy is the plain fraction correct unless
//! [`AccuracyMode::MacroOneVsRest`] is requested.
//!
//! Ratios with an empty denominator are defined as 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are gold classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Builds a matrix from `rows[gold][pred]`.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::DegenerateMatrix("rows are not square".into()));
        }
        Ok(ConfusionMatrix {
            k,
            counts: rows.concat(),
        })
    }

    /// 2x2 matrix with class 1 as the positive class.
    pub fn binary(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionMatrix {
            k: 2,
            counts: vec![tn, fp, fn_, tp],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold * self.k + pred]
    }

    pub fn add(&mut self, gold: usize, pred: usize) {
        self.counts[gold * self.k + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    /// Gold count of class `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, c)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k.max(1)).map(<[u64]>::to_vec).collect()
    }
}

pub fn confusion(gold: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(k);
    for (&g, &p) in gold.iter().zip(pred) {
        for label in [g, p] {
            if label >= k {
                return Err(Error::LabelOutOfRange { label, k });
            }
        }
        cm.add(g, p);
    }
    Ok(cm)
}

/// F-beta from precision and recall; 0 when both are 0.
pub fn fbeta(precision: f64, recall: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidBeta(beta));
    }
    if precision == 0.0 && recall == 0.0 {
        return Ok(0.0);
    }
    let b2 = beta * beta;
    Ok((1.0 + b2) * precision * recall / (b2 * precision + recall))
}

fn ratio(num: u64, den: u64, what: &str, class: usize) -> f64 {
    if den == 0 {
        log::debug!("{what} of class {class} has an empty denominator; using 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    BinaryPositiveClass,
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    #[default]
    Plain,
    MacroOneVsRest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub averaging: Averaging,
    pub accuracy_mode: AccuracyMode,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub f2_beta: f64,
    pub auroc: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
    pub n: u64,
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.k())
        .map(|c| {
            let tp = cm.get(c, c);
            let precision = ratio(tp, cm.predicted(c), "precision", c);
            let recall = ratio(tp, cm.support(c), "recall", c);
            ClassMetrics {
                class: c,
                precision,
                recall,
                f1: fbeta(precision, recall, 1.0).expect("beta is valid"),
                f2: fbeta(precision, recall, 2.0).expect("beta is valid"),
                support: cm.support(c),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricsOptions {
    pub averaging: Averaging,
    pub accuracy_mode: AccuracyMode,
}

impl MetricsOptions {
    pub fn binary() -> Self {
        MetricsOptions {
            averaging: Averaging::BinaryPositiveClass,
            accuracy_mode: AccuracyMode::Plain,
        }
    }

    pub fn macro_avg() -> Self {
        MetricsOptions {
            averaging: Averaging::Macro,
            accuracy_mode: AccuracyMode::Plain,
        }
    }
}

/// Shared core of [`binary_report`] and [`multiclass_report`].
pub fn report_with(
    cm: &ConfusionMatrix,
    probs: Option<&[Vec<f64>]>,
    gold: &[usize],
    opts: MetricsOptions,
) -> Result<MetricsReport> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::DegenerateMatrix("matrix has no entries".into()));
    }
    if cm.k() < 2 {
        return Err(Error::DegenerateMatrix("need at least two classes".into()));
    }
    if opts.averaging == Averaging::BinaryPositiveClass && cm.k() != 2 {
        return Err(Error::DegenerateMatrix(format!(
            "positive-class averaging needs 2 classes, got {}",
            cm.k()
        )));
    }
    let per_class = per_class_metrics(cm);
    let k = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let (precision, recall) = match opts.averaging {
        Averaging::BinaryPositiveClass => (per_class[1].precision, per_class[1].recall),
        Averaging::Macro => (mean(|c| c.precision), mean(|c| c.recall)),
    };
    let accuracy = match opts.accuracy_mode {
        AccuracyMode::Plain => cm.correct() as f64 / n as f64,
        AccuracyMode::MacroOneVsRest => {
            (0..cm.k())
                .map(|c| {
                    let tp = cm.get(c, c);
                    let fp = cm.predicted(c) - tp;
                    let fn_ = cm.support(c) - tp;
                    (n - fp - fn_) as f64 / n as f64
                })
                .sum::<f64>()
                / k
        }
    };
    let auroc = match probs {
        Some(probs) => {
            check_probabilities(probs, cm.k(), gold.len())?;
            Some(match opts.averaging {
                Averaging::BinaryPositiveClass => {
                    let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
                    let positive: Vec<bool> = gold.iter().map(|&g| g == 1).collect();
                    auroc_binary(&scores, &positive)?
                }
                Averaging::Macro => auroc_macro_ovr(probs, gold)?,
            })
        }
        None => None,
    };
    Ok(MetricsReport {
        averaging: opts.averaging,
        accuracy_mode: opts.accuracy_mode,
        recall,
        precision,
        accuracy,
        f1: mean(|c| c.f1),
        f2_beta: mean(|c| c.f2),
        auroc,
        per_class,
        n,
    })
}

/// Binary report: positive-class recall and precision, plain accuracy,
/// macro F1 and F2.
pub fn binary_report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    report_with(cm, None, &[], MetricsOptions::binary())
}

/// Macro-averaged report. When `probs` is given, `gold` must hold the gold
/// class of every row and the report includes macro one-vs-rest AUROC.
pub fn multiclass_report(
    cm: &ConfusionMatrix,
    probs: Option<&[Vec<f64>]>,
    gold: &[usize],
) -> Result<MetricsReport> {
    report_with(cm, probs, gold, MetricsOptions::macro_avg())
}

fn check_probabilities(probs: &[Vec<f64>], k: usize, n: usize) -> Result<()> {
    if probs.len() != n {
        return Err(Error::MalformedProbabilities(format!(
            "{} probability rows for {n} gold labels",
            probs.len()
        )));
    }
    for (i, row) in probs.iter().enumerate() {
        if row.len() != k {
            return Err(Error::MalformedProbabilities(format!(
                "row {i} has {} entries, expected {k}",
                row.len()
            )));
        }
        if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::MalformedProbabilities(format!(
                "row {i} has a negative or non-finite entry"
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::MalformedProbabilities(format!(
                "row {i} sums to {sum}"
            )));
        }
    }
    Ok(())
}

/// Tie-aware AUROC via the Mann-Whitney U statistic with mid-ranks.
pub fn auroc_binary(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::LengthMismatch {
            gold: positive.len(),
            pred: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::MalformedProbabilities("NaN score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassPresent);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j share their mean
        let mid = (i + 1 + j) as f64 / 2.0;
        let tied_pos = order[i..j].iter().filter(|&&o| positive[o]).count();
        rank_sum_pos += mid * tied_pos as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Unweighted mean of one-vs-rest AUROCs over the classes present in `gold`.
pub fn auroc_macro_ovr(probs: &[Vec<f64>], gold: &[usize]) -> Result<f64> {
    let k = probs.first().map_or(0, Vec::len);
    check_probabilities(probs, k, gold.len())?;
    if let Some(&g) = gold.iter().find(|&&g| g >= k) {
        return Err(Error::LabelOutOfRange { label: g, k });
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..k {
        let positive: Vec<bool> = gold.iter().map(|&g| g == c).collect();
        if !positive.contains(&true) {
            log::info!("class {c} absent from gold labels; skipped in macro AUROC");
            continue;
        }
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        total += auroc_binary(&scores, &positive)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::SingleClassPresent);
    }
    Ok(total / used as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
