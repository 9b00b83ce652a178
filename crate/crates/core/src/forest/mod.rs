//! Random forest over feature vectors, plus the masquerade check.
//!
//! Each tree sees a bootstrap resample of the training set (kept as integer
//! weights on the distinct rows it drew) and considers `max_features` randomly
//! ordered features at every node. Tree `t` draws from the seed `seed + t`, so
//! the forest is the same no matter how trees are scheduled across threads.

mod detect;
mod tree;

pub use detect::{detect_masquerade, Decision, MidOwnershipMap, Verdict};
pub use tree::{DecisionTree, Node};

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::EcuId;
use crate::features::{FeatureVector, FEATURE_COUNT};
use crate::seed::{self, Stream};
use tree::{TrainingView, TreeParams};

pub const MODEL_FORMAT: &str = "twopoint-forest/1";

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("training set is empty")]
    Empty,
    #[error("training set holds a single class ({0}); need at least two")]
    SingleClass(EcuId),
    #[error("class {class} has {count} training sample(s); need at least 2")]
    TooFewSamples { class: EcuId, count: usize },
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("non-finite feature value in training row {0}")]
    NonFinite(usize),
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid hyperparameter: {0}")]
    Params(String),
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("model I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("model encoding: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features considered per split; `None` means ceil(sqrt(d)).
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_features: None,
            min_samples_leaf: 1,
            max_depth: None,
        }
    }
}

impl ForestParams {
    pub fn resolved_max_features(&self, n_features: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::Params("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(ForestError::Params("min_samples_leaf must be at least 1".into()));
        }
        if self.max_features == Some(0) {
            return Err(ForestError::Params("max_features must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub format: String,
    /// Free-form origin note, e.g. the config hash and seed of the training run.
    #[serde(default)]
    pub provenance: String,
    pub params: ForestParams,
    pub seed: u64,
    pub n_features: usize,
    /// Ascending; leaf counts and vote vectors are aligned with this list.
    pub classes: Vec<EcuId>,
    pub trees: Vec<DecisionTree>,
}

/// Forest output for one feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: EcuId,
    /// Fraction of trees voting for each class, in model class order.
    pub votes: Vec<(EcuId, f64)>,
}

impl Prediction {
    pub fn confidence(&self) -> f64 {
        self.votes
            .iter()
            .find(|(c, _)| *c == self.label)
            .map_or(0.0, |(_, v)| *v)
    }
}

pub fn train(
    features: &[FeatureVector],
    labels: &[EcuId],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel, ForestError> {
    let rows: Vec<&[f64]> = features.iter().map(|f| f.0.as_slice()).collect();
    train_rows(&rows, FEATURE_COUNT, labels, params, seed)
}

/// Trains on rows of arbitrary (but uniform) width.
pub fn train_rows(
    rows: &[&[f64]],
    n_features: usize,
    labels: &[EcuId],
    params: &ForestParams,
    seed: u64,
) -> Result<ForestModel, ForestError> {
    params.validate()?;
    if rows.len() != labels.len() {
        return Err(ForestError::LengthMismatch {
            features: rows.len(),
            labels: labels.len(),
        });
    }
    if rows.is_empty() {
        return Err(ForestError::Empty);
    }
    let mut per_class: BTreeMap<EcuId, usize> = BTreeMap::new();
    for &l in labels {
        *per_class.entry(l).or_default() += 1;
    }
    if per_class.len() == 1 {
        return Err(ForestError::SingleClass(labels[0]));
    }
    if let Some((&class, &count)) = per_class.iter().find(|(_, &n)| n < 2) {
        return Err(ForestError::TooFewSamples { class, count });
    }
    let classes: Vec<EcuId> = per_class.keys().copied().collect();

    let mut x = Vec::with_capacity(rows.len() * n_features);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n_features {
            return Err(ForestError::Dimension {
                expected: n_features,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite(i));
        }
        x.extend_from_slice(row);
    }
    let y: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label collected above"))
        .collect();
    let view = TrainingView {
        x: &x,
        n_features,
        y: &y,
        n_classes: classes.len(),
    };
    let tree_params = TreeParams {
        max_features: params.resolved_max_features(n_features),
        min_samples_leaf: params.min_samples_leaf,
        max_depth: params.max_depth,
    };

    let n = rows.len();
    let trees: Vec<DecisionTree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed::rng(seed::derive(seed, t), Stream::Forest);
            let mut weights = vec![0u32; n];
            for _ in 0..n {
                weights[rng.random_range(0..n)] += 1;
            }
            let drawn: Vec<(usize, u32)> = weights
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0)
                .map(|(i, &w)| (i, w))
                .collect();
            tree::grow(&view, drawn, &tree_params, &mut rng)
        })
        .collect();

    Ok(ForestModel {
        format: MODEL_FORMAT.to_owned(),
        provenance: String::new(),
        params: params.clone(),
        seed,
        n_features,
        classes,
        trees,
    })
}

impl ForestModel {
    /// Majority vote over trees; ties go to the smallest ECU id.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ForestError> {
        if x.len() != self.n_features {
            return Err(ForestError::Dimension {
                expected: self.n_features,
                got: x.len(),
            });
        }
        let mut tally = vec![0usize; self.classes.len()];
        for tree in &self.trees {
            tally[tree.vote(x)] += 1;
        }
        let mut best = 0;
        for (i, &v) in tally.iter().enumerate() {
            if v > tally[best] {
                best = i;
            }
        }
        let n = self.trees.len() as f64;
        Ok(Prediction {
            label: self.classes[best],
            votes: self
                .classes
                .iter()
                .zip(&tally)
                .map(|(&c, &v)| (c, v as f64 / n))
                .collect(),
        })
    }

    pub fn predict_batch(&self, rows: &[FeatureVector]) -> Vec<EcuId> {
        rows.par_iter()
            .map(|f| self.predict(&f.0).expect("fixed-width feature vector").label)
            .collect()
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        let bad = |m: String| Err(ForestError::Malformed(m));
        if self.format != MODEL_FORMAT {
            return bad(format!("unknown format tag {:?}", self.format));
        }
        if self.classes.is_empty() {
            return bad("no classes".into());
        }
        if !self.classes.windows(2).all(|w| w[0] < w[1]) {
            return bad("classes must be strictly ascending".into());
        }
        if self.trees.is_empty() {
            return bad("no trees".into());
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return bad(format!("tree {t} has no nodes"));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        if *feature >= self.n_features {
                            return bad(format!("tree {t} node {i}: feature {feature} out of range"));
                        }
                        if threshold.is_nan() {
                            return bad(format!("tree {t} node {i}: NaN threshold"));
                        }
                        // Children always come after their parent, which also rules out cycles.
                        for &child in [left, right] {
                            if child <= i || child >= tree.nodes.len() {
                                return bad(format!("tree {t} node {i}: bad child {child}"));
                            }
                        }
                    }
                    Node::Leaf { counts } => {
                        if counts.len() != self.classes.len() {
                            return bad(format!("tree {t} node {i}: leaf has {} counts", counts.len()));
                        }
                        if counts.iter().all(|&c| c == 0) {
                            return bad(format!("tree {t} node {i}: empty leaf"));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_writer<W: Write>(&self, out: W) -> Result<(), ForestError> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn from_reader<R: Read>(input: R) -> Result<Self, ForestError> {
        let model: ForestModel = serde_json::from_reader(input)?;
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn clusters(per_class: usize, gap: f64, seed: u64) -> (Vec<FeatureVector>, Vec<EcuId>) {
        let mut rng = seed::rng(seed, Stream::Capture);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for (k, label) in [EcuId(1), EcuId(2)].into_iter().enumerate() {
            for _ in 0..per_class {
                let mut v = [0.0; FEATURE_COUNT];
                for (j, slot) in v.iter_mut().enumerate() {
                    let centre = if j < 20 { k as f64 * gap } else { 0.0 };
                    *slot = centre + noise.sample(&mut rng);
                }
                feats.push(FeatureVector(v));
                labels.push(label);
            }
        }
        (feats, labels)
    }

    fn nearest_centroid(feats: &[FeatureVector], labels: &[EcuId]) -> usize {
        let centroid = |l: EcuId| {
            let rows: Vec<_> = feats.iter().zip(labels).filter(|(_, &y)| y == l).collect();
            let mut c = [0.0; FEATURE_COUNT];
            for (f, _) in &rows {
                for (cj, v) in c.iter_mut().zip(f.0.iter()) {
                    *cj += v / rows.len() as f64;
                }
            }
            c
        };
        let (c1, c2) = (centroid(EcuId(1)), centroid(EcuId(2)));
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        feats
            .iter()
            .zip(labels)
            .filter(|(f, &y)| {
                let pick = if dist(&f.0, &c1) <= dist(&f.0, &c2) { EcuId(1) } else { EcuId(2) };
                pick == y
            })
            .count()
    }

    #[test]
    fn separable_clusters_train_perfectly() {
        let (feats, labels) = clusters(60, 10.0, 3);
        // The nearest-centroid oracle confirms the data really is separable.
        assert_eq!(nearest_centroid(&feats, &labels), feats.len());
        let params = ForestParams {
            n_trees: 25,
            ..Default::default()
        };
        let model = train(&feats, &labels, &params, 11).unwrap();
        let predicted = model.predict_batch(&feats);
        assert_eq!(predicted, labels);
        let p = model.predict(&feats[0].0).unwrap();
        let total: f64 = p.votes.iter().map(|(_, v)| v).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let (feats, labels) = clusters(30, 1.0, 4);
        let params = ForestParams {
            n_trees: 10,
            ..Default::default()
        };
        let a = train(&feats, &labels, &params, 5).unwrap();
        let b = train(&feats, &labels, &params, 5).unwrap();
        assert_eq!(a, b);
        let c = train(&feats, &labels, &params, 6).unwrap();
        assert_ne!(a.trees, c.trees);
    }

    #[test]
    fn degenerate_training_sets() {
        let (feats, labels) = clusters(5, 10.0, 1);
        assert!(matches!(
            train(&feats[..5], &labels[..5], &ForestParams::default(), 0),
            Err(ForestError::SingleClass(EcuId(1)))
        ));
        assert!(matches!(train(&[], &[], &ForestParams::default(), 0), Err(ForestError::Empty)));
        assert!(matches!(
            train(&feats[..6], &labels[..6], &ForestParams::default(), 0),
            Err(ForestError::TooFewSamples { class: EcuId(2), count: 1 })
        ));
    }

    #[test]
    fn pure_forest_memorizes_training_rows() {
        let (feats, labels) = clusters(20, 0.3, 9);
        let params = ForestParams {
            n_trees: 1,
            ..Default::default()
        };
        let model = train(&feats, &labels, &params, 2).unwrap();
        // A single tree only sees its bootstrap rows; those it must reproduce.
        let tree = &model.trees[0];
        let mut rng = seed::rng(seed::derive(2, 0), Stream::Forest);
        let mut drawn = vec![false; feats.len()];
        for _ in 0..feats.len() {
            drawn[rng.random_range(0..feats.len())] = true;
        }
        for (i, f) in feats.iter().enumerate().filter(|(i, _)| drawn[*i]) {
            assert_eq!(model.classes[tree.vote(&f.0)], labels[i]);
        }
    }

    #[test]
    fn exact_tie_goes_to_smaller_label() {
        let leaf = |c: Vec<u32>| DecisionTree {
            nodes: vec![Node::Leaf { counts: c }],
        };
        let model = ForestModel {
            format: MODEL_FORMAT.into(),
            provenance: String::new(),
            params: ForestParams::default(),
            seed: 0,
            n_features: 2,
            classes: vec![EcuId(2), EcuId(7)],
            trees: vec![leaf(vec![0, 3]), leaf(vec![4, 0])],
        };
        model.validate().unwrap();
        let p = model.predict(&[0.0, 0.0]).unwrap();
        assert_eq!(p.label, EcuId(2));
        assert_eq!(p.votes, vec![(EcuId(2), 0.5), (EcuId(7), 0.5)]);
        assert!(matches!(
            model.predict(&[0.0]),
            Err(ForestError::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn persistence_round_trip() {
        let (feats, labels) = clusters(25, 0.5, 8);
        let params = ForestParams {
            n_trees: 8,
            ..Default::default()
        };
        let model = train(&feats, &labels, &params, 21).unwrap();
        let mut buf = Vec::new();
        model.to_writer(&mut buf).unwrap();
        let loaded = ForestModel::from_reader(buf.as_slice()).unwrap();
        assert_eq!(loaded, model);
        for f in &feats {
            assert_eq!(loaded.predict(&f.0).unwrap(), model.predict(&f.0).unwrap());
        }
    }

    #[test]
    fn malformed_models_are_rejected() {
        let json = r#"{"format":"twopoint-forest/1","params":{},"seed":0,"n_features":2,
            "classes":[1,2],"trees":[{"nodes":[{"kind":"split","feature":5,"threshold":0.0,"left":1,"right":2},
            {"kind":"leaf","counts":[1,0]},{"kind":"leaf","counts":[0,1]}]}]}"#;
        assert!(matches!(
            ForestModel::from_reader(json.as_bytes()),
            Err(ForestError::Malformed(_))
        ));
    }
}
