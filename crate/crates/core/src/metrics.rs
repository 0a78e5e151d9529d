//! Confusion matrices, per-class precision/recall/F1 and one-vs-rest ROC.
//!
//! For class `c`: precision = TP / (TP + FP), recall = TP / (TP + FN) and
//! F1 = 2·precision·recall / (precision + recall). Any rate whose denominator
//! is zero is reported as 0.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_predictions(predicted: &[usize], actual: &[usize], k: usize) -> Result<Self> {
        if predicted.len() != actual.len() {
            return Err(Error::dim("confusion matrix", "length", actual.len(), predicted.len()));
        }
        let mut cm = Self::new(k);
        for (&p, &a) in predicted.iter().zip(actual) {
            cm.record(a, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, actual: usize, predicted: usize) -> Result<()> {
        if actual >= self.k || predicted >= self.k {
            return Err(Error::param(format!(
                "label pair ({actual}, {predicted}) out of range for {} classes",
                self.k
            )));
        }
        self.counts[actual * self.k + predicted] += 1;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.k + predicted]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.k.max(1))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|c| self.get(c, c)).sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    pub fn false_positives(&self, c: usize) -> u64 {
        (0..self.k).filter(|&a| a != c).map(|a| self.get(a, c)).sum()
    }

    pub fn false_negatives(&self, c: usize) -> u64 {
        (0..self.k).filter(|&p| p != c).map(|p| self.get(c, p)).sum()
    }

    pub fn true_negatives(&self, c: usize) -> u64 {
        self.total() - self.true_positives(c) - self.false_positives(c) - self.false_negatives(c)
    }

    /// Number of samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| self.trace() as f64 / total as f64)
    }

    /// CSV with a header row of predicted class names and one row per true class.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let name = |c: usize| class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
        let mut out = String::from("actual\\predicted");
        for c in 0..self.k {
            let _ = write!(out, ",{}", name(c));
        }
        out.push('\n');
        for (a, row) in self.rows().enumerate() {
            out.push_str(&name(a));
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Build a confusion matrix from parallel prediction and label vectors.
pub fn confusion_matrix(predicted: &[usize], actual: &[usize], k: usize) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_predictions(predicted, actual, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * (recall * precision) / (recall + precision)
    }
}

/// Unweighted and support-weighted means of per-class metrics.
pub fn averages(per_class: &[ClassMetrics]) -> (Averages, Averages) {
    let k = per_class.len().max(1) as f64;
    let total: u64 = per_class.iter().map(|m| m.support).sum();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            per_class.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
        }
    };
    (
        Averages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        },
        Averages {
            precision: weighted(|m| m.precision),
            recall: weighted(|m| m.recall),
            f1: weighted(|m| m.f1),
        },
    )
}

pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::param("classification report of an empty confusion matrix"));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.num_classes())
        .map(|c| {
            let tp = cm.true_positives(c);
            let precision = ratio(tp, tp + cm.false_positives(c));
            let recall = ratio(tp, tp + cm.false_negatives(c));
            ClassMetrics {
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: cm.support(c),
            }
        })
        .collect();
    let (macro_avg, weighted_avg) = averages(&per_class);
    Ok(ClassificationReport {
        per_class,
        accuracy: cm.trace() as f64 / total as f64,
        macro_avg,
        weighted_avg,
        total,
    })
}

impl ClassificationReport {
    /// Plain-text table: one row per class, then accuracy, macro avg and weighted avg.
    pub fn to_text(&self, class_names: &[String]) -> String {
        let names: Vec<String> = (0..self.per_class.len())
            .map(|c| class_names.get(c).cloned().unwrap_or_else(|| c.to_string()))
            .collect();
        let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max("weighted avg".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:>width$} {:>10} {:>10} {:>10} {:>10}", "", "precision", "recall", "f1-score", "support");
        out.push('\n');
        for (name, m) in names.iter().zip(&self.per_class) {
            let _ = writeln!(
                out,
                "{name:>width$} {:>10.4} {:>10.4} {:>10.4} {:>10}",
                m.precision, m.recall, m.f1, m.support
            );
        }
        out.push('\n');
        let _ = writeln!(out, "{:>width$} {:>10} {:>10} {:>10.4} {:>10}", "accuracy", "", "", self.accuracy, self.total);
        for (label, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{label:>width$} {:>10.4} {:>10.4} {:>10.4} {:>10}",
                a.precision, a.recall, a.f1, self.total
            );
        }
        out
    }

    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("class,precision,recall,f1,support\n");
        for (c, m) in self.per_class.iter().enumerate() {
            let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
            let _ = writeln!(out, "{name},{},{},{},{}", m.precision, m.recall, m.f1, m.support);
        }
        let _ = writeln!(out, "accuracy,,,{},{}", self.accuracy, self.total);
        for (label, a) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(out, "{label},{},{},{},{}", a.precision, a.recall, a.f1, self.total);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    /// Scores >= threshold are predicted positive; the first point uses +inf.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr);
        }
        out
    }
}

/// ROC for binary labels, sweeping thresholds over the distinct scores in
/// descending order. AUC is the trapezoidal area, accumulated exactly in
/// integer arithmetic before a single division.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<RocCurve> {
    if scores.len() != positive.len() {
        return Err(Error::dim("roc", "length", positive.len(), scores.len()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: "roc scores".into(),
            index: i,
        });
    }
    let pos = positive.iter().filter(|&&p| p).count() as u64;
    let neg = positive.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::param("ROC needs at least one positive and one negative sample"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut doubled_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        doubled_area += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    let auc = doubled_area as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok(RocCurve { points, auc })
}

/// One-vs-rest ROC for `positive_class` from an `N×K` row-major score matrix.
pub fn roc_one_vs_rest(scores: &[f32], num_classes: usize, actual: &[usize], positive_class: usize) -> Result<RocCurve> {
    if num_classes == 0 || positive_class >= num_classes {
        return Err(Error::param(format!(
            "positive class {positive_class} out of range for {num_classes} classes"
        )));
    }
    if scores.len() != actual.len() * num_classes {
        return Err(Error::dim("roc", "scores", actual.len() * num_classes, scores.len()));
    }
    let s: Vec<f64> = scores
        .chunks(num_classes)
        .map(|row| row[positive_class] as f64)
        .collect();
    let labels: Vec<bool> = actual.iter().map(|&a| a == positive_class).collect();
    roc_curve(&s, &labels)
}
