use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::LabeledExample;
use super::net::{argmax, ConvNetModel};
use crate::error::{invalid, Result};

/// Confusion matrix indexed `[true][predicted]` with derived scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    /// Recall per true class; `None` for classes absent from the set.
    pub per_class_recall: Vec<Option<f64>>,
    pub total: u64,
}

impl Metrics {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.is_empty() || truth.len() != predicted.len() {
            return invalid(format!(
                "{} labels vs {} predictions",
                truth.len(),
                predicted.len()
            ));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return invalid(format!("class index {} out of range for {classes} classes", t.max(p)));
            }
            confusion[t][p] += 1;
        }
        let total = truth.len() as u64;
        let trace: u64 = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class_recall = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(Self {
            accuracy: trace as f64 / total as f64,
            confusion,
            per_class_recall,
            total,
        })
    }

    pub fn classes(&self) -> usize {
        self.confusion.len()
    }

    /// Confusion matrix as CSV: a header of predicted class names, one row
    /// per true class.
    pub fn confusion_csv(&self, class_names: &[String]) -> String {
        let name = |i: usize| class_names.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut s = String::from("true\\predicted");
        for c in 0..self.classes() {
            let _ = write!(s, ",{}", name(c));
        }
        s.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            s.push_str(&name(t));
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Score `model` on `examples`; forward passes fan out over fixed-size
/// batches, so results do not depend on the worker count.
pub fn evaluate(model: &ConvNetModel, examples: &[LabeledExample]) -> Result<Metrics> {
    if examples.is_empty() {
        return invalid("cannot evaluate on an empty set");
    }
    let predicted: Vec<usize> = examples
        .par_chunks(32)
        .map(|chunk| {
            let feats: Vec<&[f64]> = chunk.iter().map(|e| e.features.as_slice()).collect();
            model
                .forward_batch(&feats)
                .map(|logits| logits.iter().map(|l| argmax(l)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let truth: Vec<usize> = examples.iter().map(|e| e.label).collect();
    Metrics::from_predictions(&truth, &predicted, model.num_classes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor_is_diagonal() {
        let t = [0, 1, 2, 2, 1, 0];
        let m = Metrics::from_predictions(&t, &t, 3).unwrap();
        assert_eq!(m.accuracy, 1.0);
        for (i, row) in m.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v == 0, i != j);
            }
        }
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let t: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let m = Metrics::from_predictions(&t, &[2; 40], 4).unwrap();
        assert!((m.accuracy - 0.25).abs() < 1e-12);
        assert_eq!(m.per_class_recall, vec![Some(0.0), Some(0.0), Some(1.0), Some(0.0)]);
        let rows: Vec<u64> = m.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(rows, vec![10; 4]);
    }

    #[test]
    fn empty_and_out_of_range_rejected() {
        assert!(Metrics::from_predictions(&[], &[], 3).is_err());
        assert!(Metrics::from_predictions(&[3], &[0], 3).is_err());
    }

    #[test]
    fn csv_shape() {
        let m = Metrics::from_predictions(&[0, 1], &[0, 0], 2).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        assert_eq!(m.confusion_csv(&names), "true\\predicted,a,b\na,1,0\nb,1,0\n");
    }
}
