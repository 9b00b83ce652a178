//! CART classification tree grown on weighted samples with Gini impurity.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    /// Weighted class counts, aligned with the model's class list.
    Leaf { counts: Vec<u32> },
}

/// Root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<Node>,
}

pub(crate) struct TreeParams {
    pub max_features: usize,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
}

/// Training rows: feature matrix (row-major), class index and weight per row.
pub(crate) struct TrainingView<'a> {
    pub x: &'a [f64],
    pub n_features: usize,
    pub y: &'a [usize],
    pub n_classes: usize,
}

impl TrainingView<'_> {
    fn value(&self, row: usize, feature: usize) -> f64 {
        self.x[row * self.n_features + feature]
    }
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

fn weighted_counts(data: &TrainingView, rows: &[(usize, u32)]) -> Vec<u32> {
    let mut counts = vec![0u32; data.n_classes];
    for &(r, w) in rows {
        counts[data.y[r]] += w;
    }
    counts
}

/// Sum over classes of count^2 / total; maximising the sum over both children
/// minimises the weighted Gini impurity.
fn purity(counts: &[u64], total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    counts.iter().map(|&c| (c * c) as f64).sum::<f64>() / total as f64
}

fn best_split<R: Rng>(
    data: &TrainingView,
    rows: &[(usize, u32)],
    params: &TreeParams,
    rng: &mut R,
    features: &mut [usize],
) -> Option<Candidate> {
    features.shuffle(rng);
    let mut best: Option<Candidate> = None;
    let mut visited = 0;
    let mut found_nonconstant = false;
    let mut column: Vec<(f64, usize, u32)> = Vec::with_capacity(rows.len());
    let total_counts: Vec<u64> = {
        let mut c = vec![0u64; data.n_classes];
        for &(r, w) in rows {
            c[data.y[r]] += u64::from(w);
        }
        c
    };
    let total: u64 = total_counts.iter().sum();

    for &f in features.iter() {
        if visited >= params.max_features && found_nonconstant {
            break;
        }
        visited += 1;
        column.clear();
        column.extend(rows.iter().map(|&(r, w)| (data.value(r, f), data.y[r], w)));
        column.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if column[0].0 == column[column.len() - 1].0 {
            continue;
        }
        found_nonconstant = true;

        let mut left = vec![0u64; data.n_classes];
        let mut left_total = 0u64;
        for i in 0..column.len() - 1 {
            let (v, c, w) = column[i];
            left[c] += u64::from(w);
            left_total += u64::from(w);
            let next = column[i + 1].0;
            if next == v {
                continue;
            }
            let n_left = i + 1;
            if n_left < params.min_samples_leaf || column.len() - n_left < params.min_samples_leaf {
                continue;
            }
            let right_sq: u64 = total_counts
                .iter()
                .zip(&left)
                .map(|(t, l)| (t - l) * (t - l))
                .sum();
            let score = purity(&left, left_total) + right_sq as f64 / (total - left_total) as f64;
            if best.as_ref().is_none_or(|b| score > b.score) {
                let mut threshold = v / 2.0 + next / 2.0;
                if threshold == next || !threshold.is_finite() {
                    threshold = v;
                }
                best = Some(Candidate {
                    feature: f,
                    threshold,
                    score,
                });
            }
        }
    }
    best
}

pub(crate) fn grow<R: Rng>(
    data: &TrainingView,
    rows: Vec<(usize, u32)>,
    params: &TreeParams,
    rng: &mut R,
) -> DecisionTree {
    let mut nodes: Vec<Node> = Vec::new();
    let mut features: Vec<usize> = (0..data.n_features).collect();
    // (node slot, rows, depth)
    let mut pending = vec![(0usize, rows, 0usize)];
    nodes.push(Node::Leaf { counts: Vec::new() });

    while let Some((slot, rows, depth)) = pending.pop() {
        let counts = weighted_counts(data, &rows);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        let depth_capped = params.max_depth.is_some_and(|d| depth >= d);
        let too_small = rows.len() < 2 * params.min_samples_leaf;
        let split = if pure || depth_capped || too_small {
            None
        } else {
            best_split(data, &rows, params, rng, &mut features)
        };
        match split {
            None => nodes[slot] = Node::Leaf { counts },
            Some(c) => {
                let (l, r): (Vec<_>, Vec<_>) = rows
                    .into_iter()
                    .partition(|&(row, _)| data.value(row, c.feature) <= c.threshold);
                let left = nodes.len();
                let right = left + 1;
                nodes.push(Node::Leaf { counts: Vec::new() });
                nodes.push(Node::Leaf { counts: Vec::new() });
                nodes[slot] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                };
                pending.push((right, r, depth + 1));
                pending.push((left, l, depth + 1));
            }
        }
    }
    DecisionTree { nodes }
}

impl DecisionTree {
    pub fn leaf_counts(&self, x: &[f64]) -> &[u32] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Class index with the most weight in the reached leaf; ties go to the lower index.
    pub fn vote(&self, x: &[f64]) -> usize {
        let counts = self.leaf_counts(x);
        let mut best = 0;
        for (i, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = i;
            }
        }
        best
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }
}
