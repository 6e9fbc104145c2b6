//! Confusion matrices and the scores derived from them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::ClassMap;

pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_CSV_FILE: &str = "confusion.csv";
pub const CONFUSION_PGM_FILE: &str = "confusion.pgm";

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_rows(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    /// Samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k() != self.k() {
            return Err(Error::Dimension(format!(
                "cannot add {0}×{0} confusion matrix to {1}×{1}",
                other.k(),
                self.k()
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }
}

pub fn confusion(pred: &[usize], truth: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= k || t >= k {
            return Err(Error::Data(format!("label pair ({t}, {p}) outside 0..{k}")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

fn require_samples(cm: &ConfusionMatrix) -> Result<f64> {
    match cm.total() {
        0 => Err(Error::Data("confusion matrix is empty".into())),
        n => Ok(n as f64),
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    Ok(cm.trace() as f64 / require_samples(cm)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn class_scores(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..cm.k())
        .map(|c| {
            let tp = cm.counts[c][c];
            let precision = ratio(tp, cm.predicted(c));
            let recall = ratio(tp, cm.support(c));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                precision,
                recall,
                f1,
                support: cm.support(c),
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1. Classes without support score 0.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    require_samples(cm)?;
    let scores = class_scores(cm);
    for (c, s) in scores.iter().enumerate() {
        if s.support == 0 {
            log::warn!("class {c} has no samples; its F1 counts as 0");
        }
    }
    Ok(scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64)
}

/// Accuracy that also accepts predictions one size step away within the
/// true class's shape group.
pub fn relaxed_accuracy(cm: &ConfusionMatrix, class_map: &ClassMap) -> Result<f64> {
    let n = require_samples(cm)?;
    if class_map.n_classes() != cm.k() {
        return Err(Error::Dimension(format!(
            "class map has {} classes, confusion matrix {}",
            class_map.n_classes(),
            cm.k()
        )));
    }
    let mut hits = 0u64;
    for t in 0..cm.k() {
        for p in 0..cm.k() {
            if t == p || class_map.size_neighbours(t, p) {
                hits += cm.counts[t][p];
            }
        }
    }
    Ok(hits as f64 / n)
}

/// `(false_grasp_rate, false_rest_rate)` of a rest/grasp matrix, both as
/// fractions of all samples.
pub fn phase_rates(cm: &ConfusionMatrix) -> Result<(f64, f64)> {
    if cm.k() != 2 {
        return Err(Error::Dimension(format!("phase rates need a 2×2 matrix, got {0}×{0}", cm.k())));
    }
    let n = require_samples(cm)?;
    Ok((cm.counts[0][1] as f64 / n, cm.counts[1][0] as f64 / n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub n_samples: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relaxed_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub false_grasp_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub false_rest_rate: Option<f64>,
    pub per_class: Vec<ClassScores>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// Binary rest/grasp report.
    pub fn phase(cm: ConfusionMatrix) -> Result<Self> {
        let (fg, fr) = phase_rates(&cm)?;
        Ok(MetricsReport {
            task: "phase_detection".into(),
            n_samples: cm.total(),
            accuracy: accuracy(&cm)?,
            macro_f1: macro_f1(&cm)?,
            relaxed_accuracy: None,
            false_grasp_rate: Some(fg),
            false_rest_rate: Some(fr),
            per_class: class_scores(&cm),
            confusion: cm,
        })
    }

    /// Object classification report.
    pub fn classification(cm: ConfusionMatrix, class_map: &ClassMap) -> Result<Self> {
        Ok(MetricsReport {
            task: "classification".into(),
            n_samples: cm.total(),
            accuracy: accuracy(&cm)?,
            macro_f1: macro_f1(&cm)?,
            relaxed_accuracy: Some(relaxed_accuracy(&cm, class_map)?),
            false_grasp_rate: None,
            false_rest_rate: None,
            per_class: class_scores(&cm),
            confusion: cm,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialise") + "\n"
    }
}

/// Confusion matrix as CSV with class names heading rows and columns.
pub fn confusion_csv(cm: &ConfusionMatrix, names: &[String]) -> Result<String> {
    if names.len() != cm.k() {
        return Err(Error::Dimension(format!("{} names for {} classes", names.len(), cm.k())));
    }
    let mut out = String::from("true\\pred");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (n, row) in names.iter().zip(&cm.counts) {
        out.push_str(n);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Plain-text PGM heatmap, each cell drawn as a `cell`×`cell` block scaled
/// to the largest count.
pub fn confusion_pgm(cm: &ConfusionMatrix, cell: usize) -> String {
    let k = cm.k();
    let max = cm.counts.iter().flatten().copied().max().unwrap_or(0).max(1);
    let side = k * cell;
    let mut out = format!("P2\n{side} {side}\n255\n");
    for row in &cm.counts {
        let line: Vec<String> = row
            .iter()
            .flat_map(|&v| std::iter::repeat_n(((v * 255 + max / 2) / max).to_string(), cell))
            .collect();
        let line = line.join(" ");
        for _ in 0..cell {
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

/// Writes `metrics.json`, `confusion.csv` and `confusion.pgm` into `dir`.
pub fn write_report(report: &MetricsReport, names: &[String], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = [
        (METRICS_FILE, report.to_json()),
        (CONFUSION_CSV_FILE, confusion_csv(&report.confusion, names)?),
        (CONFUSION_PGM_FILE, confusion_pgm(&report.confusion, 16)),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn perfect_and_empty() {
        let c = confusion(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(c, cm(&[&[1, 0, 0], &[0, 2, 0], &[0, 0, 1]]));
        assert_eq!(accuracy(&c).unwrap(), 1.0);
        assert_eq!(macro_f1(&c).unwrap(), 1.0);
        assert_eq!(confusion(&[], &[], 2).unwrap(), ConfusionMatrix::zeros(2));
        assert!(accuracy(&ConfusionMatrix::zeros(2)).is_err());
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        assert!(confusion(&[0, 2], &[0, 1], 2).is_err());
        assert!(confusion(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn uniform_two_by_two() {
        let c = cm(&[&[5, 5], &[5, 5]]);
        assert_eq!(accuracy(&c).unwrap(), 0.5);
        assert_eq!(macro_f1(&c).unwrap(), 0.5);
    }

    #[test]
    fn zero_support_class_scores_zero() {
        let c = cm(&[&[3, 1], &[0, 0]]);
        // class 0: P = 1, R = 0.75, F1 = 6/7; class 1: P = 0, R = 0
        assert!((macro_f1(&c).unwrap() - 3.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn phase_rate_cases() {
        assert_eq!(phase_rates(&cm(&[&[4, 0], &[0, 6]])).unwrap(), (0.0, 0.0));
        let all_rest = cm(&[&[90, 0], &[10, 0]]);
        assert_eq!(phase_rates(&all_rest).unwrap(), (0.0, 0.1));
        assert!(phase_rates(&ConfusionMatrix::zeros(3)).is_err());
    }

    #[test]
    fn csv_and_pgm_layout() {
        let c = cm(&[&[2, 1], &[0, 4]]);
        let names = vec!["rest".to_string(), "grasp".to_string()];
        assert_eq!(confusion_csv(&c, &names).unwrap(), "true\\pred,rest,grasp\nrest,2,1\ngrasp,0,4\n");
        let pgm = confusion_pgm(&c, 1);
        assert_eq!(pgm, "P2\n2 2\n255\n128 64\n0 255\n");
    }
}
