//! Metrics, dataset splits and attack-campaign scoring.

mod metrics;
mod split;

pub use metrics::{confusion_matrix, confusion_matrix_over, macro_f1, precision_recall_f1, ConfusionMatrix, Prf};
pub use split::{fold_complement, stratified_kfold, train_size, train_test_split};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::EcuId;
use crate::can::Mid;
use crate::features::FeatureVector;
use crate::forest::{detect_masquerade, ForestModel, MidOwnershipMap};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{truth} true labels but {predicted} predictions")]
    LengthMismatch { truth: usize, predicted: usize },
    #[error("label {0} is not among the matrix classes")]
    UnknownClass(EcuId),
    #[error("matrices cover different classes")]
    ClassMismatch,
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    Fraction(f64),
    #[error("k-fold needs k >= 2, got {0}")]
    Folds(usize),
    #[error("class {class} has {count} sample(s); need {required}")]
    TooFewSamples {
        class: EcuId,
        count: usize,
        required: String,
    },
}

/// One labelled feature row.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub label: EcuId,
    pub mid: Mid,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub ecu: EcuId,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: String,
    pub seed: u64,
    pub samples: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub worst_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub matrix: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_matrix(matrix: ConfusionMatrix, split: impl Into<String>, seed: u64) -> Self {
        let per_class: Vec<ClassMetrics> = matrix
            .classes
            .iter()
            .enumerate()
            .map(|(i, &ecu)| {
                let m = precision_recall_f1(&matrix, i);
                ClassMetrics {
                    ecu,
                    support: matrix.support(i),
                    precision: m.precision,
                    recall: m.recall,
                    f1: m.f1,
                }
            })
            .collect();
        EvalReport {
            split: split.into(),
            seed,
            samples: matrix.total(),
            accuracy: matrix.accuracy(),
            macro_f1: macro_f1(&matrix),
            worst_f1: per_class.iter().map(|c| c.f1).fold(f64::INFINITY, f64::min),
            per_class,
            matrix,
        }
    }

    pub fn class(&self, ecu: EcuId) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.ecu == ecu)
    }
}

/// Classifies `samples` with `model`; the matrix spans the model's classes.
pub fn evaluate(
    model: &ForestModel,
    samples: &[Sample],
    split: impl Into<String>,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let feats: Vec<FeatureVector> = samples.iter().map(|s| s.features).collect();
    let predicted = model.predict_batch(&feats);
    let truth: Vec<EcuId> = samples.iter().map(|s| s.label).collect();
    let matrix = confusion_matrix_over(&model.classes, &truth, &predicted)?;
    Ok(EvalReport::from_matrix(matrix, split, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub report: EvalReport,
    /// Fraction of attack frames flagged by the masquerade check.
    pub alert_rate: f64,
    /// Per attacker: fraction of its frames attributed to it.
    pub attacker_recall: Vec<(EcuId, f64)>,
}

/// Scores an attack stream: who the model thinks sent each frame, and how many
/// frames the ownership check flags.
pub fn score_attack_campaign(
    model: &ForestModel,
    attack: &[Sample],
    map: &MidOwnershipMap,
    seed: u64,
) -> Result<CampaignReport, EvalError> {
    let feats: Vec<FeatureVector> = attack.iter().map(|s| s.features).collect();
    let predicted = model.predict_batch(&feats);
    let truth: Vec<EcuId> = attack.iter().map(|s| s.label).collect();
    let alerts = attack
        .iter()
        .zip(&predicted)
        .filter(|(s, &p)| detect_masquerade(p, s.mid, map).is_alert())
        .count();
    let matrix = confusion_matrix_over(&model.classes, &truth, &predicted)?;
    let mut attackers: Vec<EcuId> = truth.clone();
    attackers.sort_unstable();
    attackers.dedup();
    let attacker_recall = attackers
        .iter()
        .map(|&a| {
            let i = matrix.index_of(a).expect("truth labels are in the matrix");
            (a, precision_recall_f1(&matrix, i).recall)
        })
        .collect();
    let alert_rate = if attack.is_empty() {
        0.0
    } else {
        alerts as f64 / attack.len() as f64
    };
    Ok(CampaignReport {
        report: EvalReport::from_matrix(matrix, "attack campaign", seed),
        alert_rate,
        attacker_recall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn report_fields() {
        let truth = [EcuId(1), EcuId(1), EcuId(2), EcuId(2)];
        let pred = [EcuId(1), EcuId(2), EcuId(2), EcuId(2)];
        let r = EvalReport::from_matrix(confusion_matrix(&truth, &pred).unwrap(), "x", 3);
        assert_eq!(r.samples, 4);
        assert_eq!(r.accuracy, 0.75);
        let c1 = r.class(EcuId(1)).unwrap();
        assert_eq!((c1.precision, c1.recall), (1.0, 0.5));
        assert!((c1.f1 - 2.0 / 3.0).abs() < 1e-15);
        let c2 = r.class(EcuId(2)).unwrap();
        assert!((c2.f1 - 0.8).abs() < 1e-15);
        assert!((r.macro_f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
        assert_eq!(r.worst_f1, c1.f1);
    }

    proptest! {
        #[test]
        fn f1_between_precision_and_recall(
            counts in proptest::collection::vec(0u64..50, 16)
        ) {
            let m = ConfusionMatrix {
                classes: (0..4).map(EcuId).collect(),
                counts: counts.chunks(4).map(<[u64]>::to_vec).collect(),
            };
            for i in 0..4 {
                let p = precision_recall_f1(&m, i);
                prop_assert!((0.0..=1.0).contains(&p.f1));
                if p.precision + p.recall > 0.0 {
                    prop_assert!(p.f1 >= p.precision.min(p.recall) - 1e-15);
                    prop_assert!(p.f1 <= p.precision.max(p.recall) + 1e-15);
                }
            }
            let row_sum: u64 = (0..4).map(|i| m.support(i)).sum();
            prop_assert_eq!(row_sum, m.total());
        }
    }
}
