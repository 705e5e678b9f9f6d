use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{DecisionTree, FeaturePolicy, Samples};

/// Bagged CART trees with per-split feature subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Tree `i` draws from ChaCha8 stream `i` of `seed`, so the forest does
    /// not depend on how trees are scheduled across threads.
    pub(crate) fn fit(samples: &Samples, n_trees: usize, seed: u64) -> Self {
        let n = samples.labels.len();
        let max_features = ((samples.dim as f64).sqrt().floor() as usize).max(1);
        let trees = (0..n_trees)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let rows: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                DecisionTree::grow(
                    samples,
                    rows,
                    FeaturePolicy::Sample {
                        max_features,
                        rng: &mut rng,
                    },
                )
            })
            .collect();
        RandomForest { trees }
    }

    /// Mean of the per-tree failed probabilities.
    pub fn failed_probability(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.failed_probability(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict_failed(&self, x: &[f64]) -> bool {
        self.failed_probability(x) > 0.5
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}
