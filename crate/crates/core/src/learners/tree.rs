//! CART classification trees with Gini impurity.
//!
//! Trees are grown until every leaf is pure or no feature can separate its
//! samples. Candidate splits are compared exactly (weighted Gini as a
//! rational number), ties going to the lowest feature index and then the
//! lowest threshold.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Row-major training matrix with binary labels (`true` = failed).
pub(crate) struct Samples<'a> {
    pub data: &'a [f64],
    pub dim: usize,
    pub labels: &'a [bool],
}

impl Samples<'_> {
    fn value(&self, row: usize, feature: usize) -> f64 {
        self.data[row * self.dim + feature]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) enum Node {
    Leaf {
        /// Share of failed samples that reached the leaf.
        failed: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
    dim: usize,
}

/// Which features to inspect at a node.
pub(crate) enum FeaturePolicy<'r, R: Rng> {
    All,
    /// Draw features at random until `max_features` have been inspected and
    /// a valid split has been found (or all features are exhausted).
    Sample { max_features: usize, rng: &'r mut R },
}

/// Weighted Gini of a split scaled by `m / 2`:
/// `lf (nl - lf) / nl + rf (nr - rf) / nr`, kept as an exact fraction.
#[derive(Clone, Copy)]
struct Impurity {
    num: u128,
    den: u128,
}

impl Impurity {
    fn of(nl: u64, lf: u64, nr: u64, rf: u64) -> Self {
        let (nl, lf, nr, rf) = (nl as u128, lf as u128, nr as u128, rf as u128);
        Impurity {
            num: lf * (nl - lf) * nr + rf * (nr - rf) * nl,
            den: nl * nr,
        }
    }

    fn cmp(&self, other: &Impurity) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

struct Candidate {
    impurity: Impurity,
    feature: usize,
    threshold: f64,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        self.impurity
            .cmp(&other.impurity)
            .then(self.feature.cmp(&other.feature))
            .then(self.threshold.total_cmp(&other.threshold))
            == Ordering::Less
    }
}

fn best_split_on(samples: &Samples, rows: &[usize], feature: usize, buf: &mut Vec<(f64, bool)>) -> Option<Candidate> {
    buf.clear();
    buf.extend(rows.iter().map(|&r| (samples.value(r, feature), samples.labels[r])));
    buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    if buf[0].0 == buf[buf.len() - 1].0 {
        return None;
    }
    let m = buf.len() as u64;
    let total_failed = buf.iter().filter(|(_, y)| *y).count() as u64;
    let mut left_failed = 0u64;
    let mut best: Option<Candidate> = None;
    for i in 0..buf.len() - 1 {
        left_failed += buf[i].1 as u64;
        let (lo, hi) = (buf[i].0, buf[i + 1].0);
        if lo == hi {
            continue;
        }
        let nl = i as u64 + 1;
        let impurity = Impurity::of(nl, left_failed, m - nl, total_failed - left_failed);
        let mut threshold = lo + (hi - lo) / 2.0;
        if threshold >= hi {
            threshold = lo;
        }
        let cand = Candidate {
            impurity,
            feature,
            threshold,
        };
        // Thresholds rise with i, so only strictly lower impurity wins here.
        if best
            .as_ref()
            .is_none_or(|b| cand.impurity.cmp(&b.impurity) == Ordering::Less)
        {
            best = Some(cand);
        }
    }
    best
}

impl DecisionTree {
    pub(crate) fn grow<R: Rng>(samples: &Samples, rows: Vec<usize>, mut policy: FeaturePolicy<R>) -> Self {
        let mut nodes = Vec::new();
        let mut buf = Vec::new();
        let mut features: Vec<usize> = (0..samples.dim).collect();
        // (node slot, rows reaching it)
        let mut stack = vec![(0usize, rows)];
        nodes.push(Node::Leaf { failed: 0.0 });
        while let Some((slot, rows)) = stack.pop() {
            let failed = rows.iter().filter(|&&r| samples.labels[r]).count();
            let share = failed as f64 / rows.len() as f64;
            if failed == 0 || failed == rows.len() {
                nodes[slot] = Node::Leaf { failed: share };
                continue;
            }

            let mut best: Option<Candidate> = None;
            match &mut policy {
                FeaturePolicy::All => {
                    for f in 0..samples.dim {
                        if let Some(c) = best_split_on(samples, &rows, f, &mut buf) {
                            if best.as_ref().is_none_or(|b| c.better_than(b)) {
                                best = Some(c);
                            }
                        }
                    }
                }
                FeaturePolicy::Sample { max_features, rng } => {
                    for i in 0..features.len() {
                        if i >= *max_features && best.is_some() {
                            break;
                        }
                        let j = rng.gen_range(i..features.len());
                        features.swap(i, j);
                        if let Some(c) = best_split_on(samples, &rows, features[i], &mut buf) {
                            if best.as_ref().is_none_or(|b| c.better_than(b)) {
                                best = Some(c);
                            }
                        }
                    }
                }
            }

            let Some(best) = best else {
                nodes[slot] = Node::Leaf { failed: share };
                continue;
            };
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                .into_iter()
                .partition(|&r| samples.value(r, best.feature) <= best.threshold);
            let left = nodes.len();
            nodes.push(Node::Leaf { failed: 0.0 });
            let right = nodes.len();
            nodes.push(Node::Leaf { failed: 0.0 });
            nodes[slot] = Node::Split {
                feature: best.feature,
                threshold: best.threshold,
                left,
                right,
            };
            stack.push((right, right_rows));
            stack.push((left, left_rows));
        }
        DecisionTree {
            nodes,
            dim: samples.dim,
        }
    }

    /// Share of failed training samples in the leaf reached by `x`.
    pub fn failed_probability(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { failed } => return *failed,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn predict_failed(&self, x: &[f64]) -> bool {
        self.failed_probability(x) > 0.5
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn tree(data: &[f64], dim: usize, labels: &[bool]) -> DecisionTree {
        let samples = Samples { data, dim, labels };
        DecisionTree::grow::<ChaCha8Rng>(&samples, (0..labels.len()).collect(), FeaturePolicy::All)
    }

    #[test]
    fn single_threshold_split() {
        let data: Vec<f64> = (0..10).map(f64::from).collect();
        let labels: Vec<bool> = (0..10).map(|i| i > 5).collect();
        let t = tree(&data, 1, &labels);
        assert_eq!(t.n_nodes(), 3);
        assert_eq!(
            t.nodes[0],
            Node::Split { feature: 0, threshold: 5.5, left: 1, right: 2 }
        );
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // Both features separate the labels perfectly.
        let data = [0.0, 0.0, 1.0, 1.0];
        let labels = [false, true];
        let t = tree(&data, 2, &labels);
        assert!(matches!(t.nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn xor_needs_zero_gain_split() {
        let data = [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let labels = [false, true, true, false];
        let t = tree(&data, 2, &labels);
        for (i, &y) in labels.iter().enumerate() {
            assert_eq!(t.predict_failed(&data[2 * i..2 * i + 2]), y);
        }
    }

    #[test]
    fn duplicate_points_with_mixed_labels_make_an_impure_leaf() {
        let data = [1.0, 1.0, 1.0];
        let labels = [true, false, false];
        let t = tree(&data, 1, &labels);
        assert_eq!(t.n_nodes(), 1);
        assert!((t.failed_probability(&[1.0]) - 1.0 / 3.0).abs() < 1e-15);
        assert!(!t.predict_failed(&[1.0]));
    }

    #[test]
    fn exact_half_leaf_predicts_completed() {
        let t = tree(&[2.0, 2.0], 1, &[true, false]);
        assert_eq!(t.failed_probability(&[2.0]), 0.5);
        assert!(!t.predict_failed(&[2.0]));
    }
}
