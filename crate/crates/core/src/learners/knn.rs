//! Instance-based k-nearest-neighbour classification.
//!
//! The model is just the reference set. Among equally distant references the
//! one inserted earlier ranks first; a tied vote falls back to the majority
//! label of the whole reference set (and to `Completed` if that ties too).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::distance::{cached_norm, cosine_with_norms, minkowski_distance};
use super::Distance;
use crate::encoding::FeatureVector;
use crate::trace::ExitOutcome;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Reference {
    vector: FeatureVector,
    outcome: ExitOutcome,
    squared_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    k: usize,
    distance: Distance,
    p: u32,
    dim: usize,
    refs: Vec<Reference>,
    failed_refs: usize,
}

#[derive(PartialEq)]
struct Ranked {
    distance: f64,
    position: usize,
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.position.cmp(&other.position))
    }
}

impl KnnModel {
    pub(crate) fn new(k: usize, distance: Distance, p: u32, dim: usize) -> Self {
        KnnModel {
            k,
            distance,
            p,
            dim,
            refs: Vec::new(),
            failed_refs: 0,
        }
    }

    pub(crate) fn push(&mut self, vector: FeatureVector, outcome: ExitOutcome) {
        let squared_norm = cached_norm(vector.values());
        if outcome.is_failed() {
            self.failed_refs += 1;
        }
        self.refs.push(Reference {
            vector,
            outcome,
            squared_norm,
        });
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Copy keeping only the references whose position satisfies `keep`;
    /// relative insertion order is preserved.
    pub fn retained(&self, mut keep: impl FnMut(usize) -> bool) -> KnnModel {
        let mut out = KnnModel::new(self.k, self.distance, self.p, self.dim);
        for (i, r) in self.refs.iter().enumerate() {
            if keep(i) {
                out.push(r.vector.clone(), r.outcome);
            }
        }
        out
    }

    pub fn references(&self) -> impl Iterator<Item = (&FeatureVector, ExitOutcome)> {
        self.refs.iter().map(|r| (&r.vector, r.outcome))
    }

    fn distance_to(&self, x: &[f64], x_norm: f64, r: &Reference) -> f64 {
        match self.distance {
            Distance::Cosine => cosine_with_norms(x, r.vector.values(), x_norm, r.squared_norm),
            Distance::Minkowski => minkowski_distance(x, r.vector.values(), self.p),
        }
    }

    /// Positions of the `k` nearest references, nearest first.
    pub fn neighbours(&self, x: &[f64]) -> Vec<usize> {
        let x_norm = cached_norm(x);
        let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(self.k + 1);
        for (position, r) in self.refs.iter().enumerate() {
            let cand = Ranked {
                distance: self.distance_to(x, x_norm, r),
                position,
            };
            if heap.len() < self.k {
                heap.push(cand);
            } else if heap.peek().is_some_and(|worst| cand < *worst) {
                heap.pop();
                heap.push(cand);
            }
        }
        heap.into_sorted_vec().into_iter().map(|r| r.position).collect()
    }

    fn reference_majority(&self) -> ExitOutcome {
        if 2 * self.failed_refs > self.refs.len() {
            ExitOutcome::Failed
        } else {
            ExitOutcome::Completed
        }
    }

    pub fn predict(&self, x: &[f64]) -> ExitOutcome {
        let neighbours = self.neighbours(x);
        let failed = neighbours
            .iter()
            .filter(|&&i| self.refs[i].outcome.is_failed())
            .count();
        let completed = neighbours.len() - failed;
        match failed.cmp(&completed) {
            Ordering::Greater => ExitOutcome::Failed,
            Ordering::Less => ExitOutcome::Completed,
            Ordering::Equal => self.reference_majority(),
        }
    }
}
