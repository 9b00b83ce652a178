use std::io::Write;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::bus::EcuId;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<EcuId>,
    pub counts: Vec<Vec<u64>>,
}

/// Matrix over the sorted union of labels seen in either sequence.
pub fn confusion_matrix(truth: &[EcuId], predicted: &[EcuId]) -> Result<ConfusionMatrix, EvalError> {
    let mut classes: Vec<EcuId> = truth.iter().chain(predicted).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    confusion_matrix_over(&classes, truth, predicted)
}

/// Matrix over a fixed, ascending class list; labels outside it are an error.
pub fn confusion_matrix_over(
    classes: &[EcuId],
    truth: &[EcuId],
    predicted: &[EcuId],
) -> Result<ConfusionMatrix, EvalError> {
    if truth.len() != predicted.len() {
        return Err(EvalError::LengthMismatch {
            truth: truth.len(),
            predicted: predicted.len(),
        });
    }
    let index = |l: &EcuId| classes.binary_search(l).map_err(|_| EvalError::UnknownClass(*l));
    let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
    for (t, p) in truth.iter().zip(predicted) {
        counts[index(t)?][index(p)?] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn index_of(&self, class: EcuId) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn support(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let diag: u64 = (0..self.classes.len()).map(|i| self.counts[i][i]).sum();
        ratio(diag, self.total())
    }

    /// Element-wise sum of two matrices over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), EvalError> {
        if self.classes != other.classes {
            return Err(EvalError::ClassMismatch);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// CSV with a `true\predicted` corner cell, optionally after a `#` provenance line.
    pub fn write_csv<W: Write>(&self, mut out: W, provenance: Option<&str>) -> std::io::Result<()> {
        if let Some(p) = provenance {
            writeln!(out, "# {p}")?;
        }
        write!(out, "true\\predicted")?;
        for c in &self.classes {
            write!(out, ",{c}")?;
        }
        writeln!(out)?;
        for (c, row) in self.classes.iter().zip(&self.counts) {
            write!(out, "{c}")?;
            for n in row {
                write!(out, ",{n}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Precision, recall and F1 for the class at index `i`; 0/0 counts as 0.
pub fn precision_recall_f1(matrix: &ConfusionMatrix, i: usize) -> Prf {
    let tp = matrix.counts[i][i];
    let predicted: u64 = matrix.counts.iter().map(|row| row[i]).sum();
    let actual: u64 = matrix.counts[i].iter().sum();
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, actual);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(matrix: &ConfusionMatrix) -> f64 {
    let n = matrix.classes.len();
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|i| precision_recall_f1(matrix, i).f1).sum::<f64>() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u16]) -> Vec<EcuId> {
        v.iter().map(|&i| EcuId(i)).collect()
    }

    #[test]
    fn hand_tallied_three_class_matrix() {
        let truth = ids(&[0, 0, 1, 1, 2, 2]);
        let pred = ids(&[0, 1, 1, 1, 2, 0]);
        let m = confusion_matrix(&truth, &pred).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1, 0], vec![0, 2, 0], vec![1, 0, 1]]);
        assert_eq!(m.total(), 6);
        let p1 = precision_recall_f1(&m, 1);
        // TP 2, FP 1, FN 0.
        assert_eq!(p1.precision, 2.0 / 3.0);
        assert_eq!(p1.recall, 1.0);
        assert!((p1.f1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn single_column_and_diagonal() {
        let truth = ids(&[0, 1, 2]);
        let m = confusion_matrix(&truth, &ids(&[0, 0, 0])).unwrap();
        assert_eq!(m.counts, vec![vec![1, 0, 0], vec![1, 0, 0], vec![1, 0, 0]]);
        let zero = precision_recall_f1(&m, 2);
        assert_eq!((zero.precision, zero.recall, zero.f1), (0.0, 0.0, 0.0));
        let perfect = confusion_matrix(&truth, &truth).unwrap();
        assert_eq!(macro_f1(&perfect), 1.0);
        assert_eq!(perfect.accuracy(), 1.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            confusion_matrix(&ids(&[1]), &ids(&[1, 2])),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert!(matches!(
            confusion_matrix_over(&ids(&[1, 2]), &ids(&[3]), &ids(&[1])),
            Err(EvalError::UnknownClass(EcuId(3)))
        ));
    }

    #[test]
    fn csv_layout() {
        let m = confusion_matrix(&ids(&[1, 2]), &ids(&[1, 1])).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf, Some("seed=1")).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "# seed=1\ntrue\\predicted,ECU1,ECU2\nECU1,1,0\nECU2,1,0\n"
        );
    }
}
