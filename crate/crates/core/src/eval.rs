//! Confusion matrix, per-class precision/recall/F1, macro and weighted
//! aggregation, and the fixed-width classification report.
//!
//! Reports render reals at exactly two decimals with round-half-up;
//! exported data keeps full precision.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("label lists differ in length: {true_len} actual vs {pred_len} predicted")]
    LengthMismatch { true_len: usize, pred_len: usize },
    #[error("class index {index} out of range for {m} classes")]
    IndexOutOfRange { index: usize, m: usize },
    #[error("confusion matrix holds no instances")]
    EmptyMatrix,
    #[error("total support is zero")]
    ZeroSupport,
}

/// Counts with rows = actual class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_pairs(
        y_true: &[usize],
        y_pred: &[usize],
        labels: &[String],
    ) -> Result<Self, EvalError> {
        if y_true.len() != y_pred.len() {
            return Err(EvalError::LengthMismatch {
                true_len: y_true.len(),
                pred_len: y_pred.len(),
            });
        }
        let m = labels.len();
        let mut counts = vec![vec![0u64; m]; m];
        for (&a, &p) in y_true.iter().zip(y_pred) {
            for index in [a, p] {
                if index >= m {
                    return Err(EvalError::IndexOutOfRange { index, m });
                }
            }
            counts[a][p] += 1;
        }
        Ok(ConfusionMatrix {
            labels: labels.to_vec(),
            counts,
        })
    }

    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn count(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.m()).map(|k| self.counts[k][k]).sum()
    }

    /// Row-k sum: how many instances truly belong to class k.
    pub fn support(&self, k: usize) -> u64 {
        self.counts[k].iter().sum()
    }

    pub fn true_positives(&self, k: usize) -> u64 {
        self.counts[k][k]
    }

    pub fn false_positives(&self, k: usize) -> u64 {
        (0..self.m()).map(|a| self.counts[a][k]).sum::<u64>() - self.counts[k][k]
    }

    pub fn false_negatives(&self, k: usize) -> u64 {
        self.support(k) - self.counts[k][k]
    }

    pub fn true_negatives(&self, k: usize) -> u64 {
        self.total() - self.true_positives(k) - self.false_positives(k) - self.false_negatives(k)
    }

    /// Delimited grid: header row of predicted labels, one row per
    /// actual label. Cells never contain the delimiter, so no quoting.
    pub fn to_delimited(&self, delimiter: char) -> String {
        let mut out = String::new();
        out.push_str("actual");
        for l in &self.labels {
            out.push(delimiter);
            out.push_str(l);
        }
        out.push('\n');
        for (k, row) in self.counts.iter().enumerate() {
            out.push_str(&self.labels[k]);
            for c in row {
                out.push(delimiter);
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// p = TP/(TP+FP), r = TP/(TP+FN), F = 2pr/(p+r); any zero denominator
/// makes its metric 0.
pub fn class_metrics(cm: &ConfusionMatrix, k: usize) -> ClassMetrics {
    assert!(k < cm.m(), "class index {k} out of range");
    let tp = cm.true_positives(k) as f64;
    let fp = cm.false_positives(k) as f64;
    let fn_ = cm.false_negatives(k) as f64;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = f1_score(precision, recall);
    ClassMetrics {
        precision,
        recall,
        f1,
        support: cm.support(k),
    }
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Unweighted mean of (precision, recall, f1) over classes.
pub fn macro_average(per_class: &[ClassMetrics]) -> (f64, f64, f64) {
    assert!(!per_class.is_empty(), "no classes to average");
    let m = per_class.len() as f64;
    let p = per_class.iter().map(|c| c.precision).sum::<f64>() / m;
    let r = per_class.iter().map(|c| c.recall).sum::<f64>() / m;
    let f = per_class.iter().map(|c| c.f1).sum::<f64>() / m;
    (p, r, f)
}

/// Support-weighted mean of (precision, recall, f1).
pub fn weighted_average(per_class: &[ClassMetrics]) -> Result<(f64, f64, f64), EvalError> {
    let total: u64 = per_class.iter().map(|c| c.support).sum();
    if total == 0 {
        return Err(EvalError::ZeroSupport);
    }
    let total = total as f64;
    let p = per_class
        .iter()
        .map(|c| c.precision * c.support as f64)
        .sum::<f64>()
        / total;
    let r = per_class
        .iter()
        .map(|c| c.recall * c.support as f64)
        .sum::<f64>()
        / total;
    let f = per_class
        .iter()
        .map(|c| c.f1 * c.support as f64)
        .sum::<f64>()
        / total;
    Ok((p, r, f))
}

/// Full-precision evaluation results for one model on one index set.
/// `per_class` stays last so structured-text serializers can emit the
/// scalar fields before the array of tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub labels: Vec<String>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub total_support: u64,
    pub per_class: Vec<ClassMetrics>,
}

impl EvalSummary {
    pub fn compute(cm: &ConfusionMatrix) -> Result<Self, EvalError> {
        let per_class: Vec<ClassMetrics> = (0..cm.m()).map(|k| class_metrics(cm, k)).collect();
        let (mp, mr, mf) = macro_average(&per_class);
        let (wp, wr, wf) = weighted_average(&per_class)?;
        Ok(EvalSummary {
            labels: cm.labels().to_vec(),
            per_class,
            macro_precision: mp,
            macro_recall: mr,
            macro_f1: mf,
            weighted_precision: wp,
            weighted_recall: wr,
            weighted_f1: wf,
            accuracy: accuracy(cm)?,
            total_support: cm.total(),
        })
    }
}

/// Round half away from zero to two decimals (0.125 → 0.13).
pub fn round_half_up_2dp(x: f64) -> f64 {
    (x * 100.0 + 0.5).floor() / 100.0
}

fn fmt2(x: f64) -> String {
    format!("{:.2}", round_half_up_2dp(x))
}

/// Fixed-width classification report.
///
/// Header, one row per class in schema order, a blank line, then an
/// accuracy row (value under the f1 column, total support) and the
/// macro/weighted average rows.
pub fn render_report(summary: &EvalSummary) -> String {
    const COL: usize = 10;
    let name_w = summary
        .labels
        .iter()
        .map(|l| l.len())
        .chain(["weighted avg".len()])
        .max()
        .unwrap();

    let mut out = String::new();
    out.push_str(&format!(
        "{:>name_w$} {:>COL$} {:>COL$} {:>COL$} {:>COL$}\n",
        "", "precision", "recall", "f1-score", "support"
    ));
    out.push('\n');
    for (label, c) in summary.labels.iter().zip(&summary.per_class) {
        out.push_str(&format!(
            "{:>name_w$} {:>COL$} {:>COL$} {:>COL$} {:>COL$}\n",
            label,
            fmt2(c.precision),
            fmt2(c.recall),
            fmt2(c.f1),
            c.support
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:>name_w$} {:>COL$} {:>COL$} {:>COL$} {:>COL$}\n",
        "accuracy",
        "",
        "",
        fmt2(summary.accuracy),
        summary.total_support
    ));
    out.push_str(&format!(
        "{:>name_w$} {:>COL$} {:>COL$} {:>COL$} {:>COL$}\n",
        "macro avg",
        fmt2(summary.macro_precision),
        fmt2(summary.macro_recall),
        fmt2(summary.macro_f1),
        summary.total_support
    ));
    out.push_str(&format!(
        "{:>name_w$} {:>COL$} {:>COL$} {:>COL$} {:>COL$}\n",
        "weighted avg",
        fmt2(summary.weighted_precision),
        fmt2(summary.weighted_recall),
        fmt2(summary.weighted_f1),
        summary.total_support
    ));
    out
}
