use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NUM_CLASSES;
use crate::tensor::argmax;

/// Classification quality over one split. `confusion[t][p]` counts
/// examples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub confusion: [[u64; NUM_CLASSES]; NUM_CLASSES],
    /// Recall per true class; 0 for classes absent from the split.
    pub per_class_recall: [f64; NUM_CLASSES],
}

impl Metrics {
    pub fn from_predictions(labels: &[usize], predicted: &[usize]) -> Result<Self> {
        if labels.len() != predicted.len() {
            return Err(Error::shape(
                "metrics",
                format!("{} labels vs {} predictions", labels.len(), predicted.len()),
            ));
        }
        let mut confusion = [[0u64; NUM_CLASSES]; NUM_CLASSES];
        for (i, (&t, &p)) in labels.iter().zip(predicted).enumerate() {
            if t >= NUM_CLASSES || p >= NUM_CLASSES {
                return Err(Error::Label { index: i, label: t.max(p), classes: NUM_CLASSES });
            }
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    /// Argmax (lowest index on ties) of each probability row.
    pub fn from_probabilities(labels: &[usize], probs: &[f64], classes: usize) -> Result<Self> {
        let predicted: Vec<usize> = probs.chunks_exact(classes).map(argmax).collect();
        Self::from_predictions(labels, &predicted)
    }

    pub fn from_confusion(confusion: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..NUM_CLASSES).map(|k| confusion[k][k]).sum();
        let mut per_class_recall = [0.0; NUM_CLASSES];
        for (k, r) in per_class_recall.iter_mut().enumerate() {
            let row: u64 = confusion[k].iter().sum();
            if row > 0 {
                *r = confusion[k][k] as f64 / row as f64;
            }
        }
        Metrics {
            accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
            confusion,
            per_class_recall,
        }
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// `{accuracy, confusion (row-major, 49 ints), per_class_recall}`.
    pub fn to_json(&self) -> serde_json::Value {
        let flat: Vec<u64> = self.confusion.iter().flatten().copied().collect();
        serde_json::json!({
            "accuracy": self.accuracy,
            "confusion": flat,
            "per_class_recall": self.per_class_recall,
        })
    }

    /// Plain-text report: accuracy, confusion matrix and recalls.
    pub fn render_table(&self) -> String {
        use crate::model::CLASS_NAMES;
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(s, "examples: {}", self.total());
        let _ = writeln!(s, "accuracy: {:.4}", self.accuracy);
        let _ = write!(s, "{:>10}", "true\\pred");
        for name in CLASS_NAMES {
            let _ = write!(s, "{:>9}", name);
        }
        let _ = writeln!(s, "{:>9}", "recall");
        for (k, row) in self.confusion.iter().enumerate() {
            let _ = write!(s, "{:>10}", CLASS_NAMES[k]);
            for v in row {
                let _ = write!(s, "{v:>9}");
            }
            let _ = writeln!(s, "{:>9.4}", self.per_class_recall[k]);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 3, 4, 5, 6, 3];
        let m = Metrics::from_predictions(&labels, &labels).unwrap();
        assert_eq!(m.accuracy, 1.0);
        for t in 0..7 {
            for p in 0..7 {
                assert_eq!(m.confusion[t][p] != 0, t == p);
            }
        }
    }

    #[test]
    fn ten_examples_three_errors() {
        let labels = [0, 0, 1, 2, 3, 3, 3, 4, 5, 6];
        let preds = [0, 3, 1, 2, 3, 3, 6, 4, 2, 6];
        let m = Metrics::from_predictions(&labels, &preds).unwrap();
        assert_eq!(m.accuracy, 0.7);
        let mut want = [[0u64; 7]; 7];
        for (&t, &p) in labels.iter().zip(&preds) {
            want[t][p] += 1;
        }
        assert_eq!(m.confusion, want);
        assert_eq!(m.confusion[0][3], 1);
        assert_eq!(m.confusion[3][6], 1);
        assert_eq!(m.confusion[5][2], 1);
        assert_eq!(m.confusion[3][3], 2);
        assert_eq!(m.per_class_recall[0], 0.5);
        assert!((m.per_class_recall[3] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.per_class_recall[5], 0.0);
    }

    #[test]
    fn uniform_probabilities_predict_class_zero() {
        let labels = [0, 0, 1, 2, 6];
        let probs = vec![1.0 / 7.0; 5 * 7];
        let m = Metrics::from_probabilities(&labels, &probs, 7).unwrap();
        assert_eq!(m.accuracy, 0.4);
    }

    #[test]
    fn json_shape() {
        let m = Metrics::from_predictions(&[1, 2], &[1, 1]).unwrap();
        let j = m.to_json();
        assert_eq!(j["confusion"].as_array().unwrap().len(), 49);
        assert_eq!(j["confusion"][7 + 1], 1);
        assert_eq!(j["confusion"][14 + 1], 1);
    }
}
