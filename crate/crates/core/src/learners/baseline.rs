use std::sync::atomic::{AtomicU64, Ordering};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::trace::ExitOutcome;

/// Most frequent training label; ties go to `Completed`.
pub(crate) fn majority_label(outcomes: &[ExitOutcome]) -> ExitOutcome {
    let failed = outcomes.iter().filter(|o| o.is_failed()).count();
    if 2 * failed > outcomes.len() {
        ExitOutcome::Failed
    } else {
        ExitOutcome::Completed
    }
}

/// Uniform draws over the distinct training labels.
///
/// Draw `i` comes from ChaCha8 stream `i` of the seed, so a prediction only
/// depends on how many predictions came before it.
#[derive(Debug)]
pub struct RandomBaseline {
    labels: Vec<ExitOutcome>,
    seed: u64,
    position: AtomicU64,
}

impl RandomBaseline {
    pub(crate) fn new(outcomes: &[ExitOutcome], seed: u64) -> Self {
        let mut labels: Vec<ExitOutcome> = outcomes.to_vec();
        labels.sort();
        labels.dedup();
        RandomBaseline {
            labels,
            seed,
            position: AtomicU64::new(0),
        }
    }

    pub fn position(&self) -> u64 {
        self.position.load(Ordering::SeqCst)
    }

    pub fn next(&self) -> ExitOutcome {
        let pos = self.position.fetch_add(1, Ordering::SeqCst);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(pos);
        let draw = rng.next_u64() % self.labels.len() as u64;
        self.labels[draw as usize]
    }
}

impl Clone for RandomBaseline {
    fn clone(&self) -> Self {
        RandomBaseline {
            labels: self.labels.clone(),
            seed: self.seed,
            position: AtomicU64::new(self.position()),
        }
    }
}

impl PartialEq for RandomBaseline {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.seed == other.seed && self.position() == other.position()
    }
}

#[derive(Serialize, Deserialize)]
struct RandomState {
    labels: Vec<ExitOutcome>,
    seed: u64,
    position: u64,
}

impl Serialize for RandomBaseline {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RandomState {
            labels: self.labels.clone(),
            seed: self.seed,
            position: self.position(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RandomBaseline {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let state = RandomState::deserialize(d)?;
        if state.labels.is_empty() {
            return Err(serde::de::Error::custom("random baseline without labels"));
        }
        Ok(RandomBaseline {
            labels: state.labels,
            seed: state.seed,
            position: AtomicU64::new(state.position),
        })
    }
}
