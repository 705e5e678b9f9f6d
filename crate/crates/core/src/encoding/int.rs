use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EncodingError, Encoding, FeatureVector};
use crate::trace::JobRecord;

/// Non-numerical features that get dictionary ids. Submit time is
/// integerized as epoch seconds instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CategoricalFeature {
    Name,
    Command,
    Account,
    Dependency,
    RequestedNodes,
    Partition,
    Qos,
}

impl CategoricalFeature {
    pub const ALL: [CategoricalFeature; 7] = [
        CategoricalFeature::Name,
        CategoricalFeature::Command,
        CategoricalFeature::Account,
        CategoricalFeature::Dependency,
        CategoricalFeature::RequestedNodes,
        CategoricalFeature::Partition,
        CategoricalFeature::Qos,
    ];

    fn index(self) -> usize {
        self as usize
    }

    /// The raw string value of this feature for a job; empty means missing.
    pub fn value_of(self, job: &JobRecord) -> String {
        match self {
            CategoricalFeature::Name => job.name.clone(),
            CategoricalFeature::Command => job.command.clone(),
            CategoricalFeature::Account => job.account.clone(),
            CategoricalFeature::Dependency => job.dependency.clone(),
            CategoricalFeature::RequestedNodes => {
                let mut nodes = job.requested_nodes.clone();
                nodes.sort();
                nodes.join(";")
            }
            CategoricalFeature::Partition => job.partition.clone(),
            CategoricalFeature::Qos => job.qos.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct Vocabulary {
    ids: HashMap<String, u32>,
    values: Vec<String>,
}

/// Per-feature string → id maps with dense ids `1..=M` in first-seen order.
/// Id `0` is reserved for unseen and missing values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalDictionary {
    vocab: Vec<Vocabulary>,
}

impl CategoricalDictionary {
    pub fn id(&self, feature: CategoricalFeature, value: &str) -> u32 {
        self.vocab[feature.index()]
            .ids
            .get(value)
            .copied()
            .unwrap_or(0)
    }

    pub fn lookup(&self, feature: CategoricalFeature, id: u32) -> Option<&str> {
        let idx = id.checked_sub(1)? as usize;
        self.vocab[feature.index()].values.get(idx).map(String::as_str)
    }

    pub fn len(&self, feature: CategoricalFeature) -> usize {
        self.vocab[feature.index()].values.len()
    }
}

pub fn fit_int_encoder(jobs: &[JobRecord]) -> Result<CategoricalDictionary, EncodingError> {
    fit_int_encoder_iter(jobs.iter())
}

pub(crate) fn fit_int_encoder_iter<'a>(
    jobs: impl Iterator<Item = &'a JobRecord>,
) -> Result<CategoricalDictionary, EncodingError> {
    let mut vocab = vec![Vocabulary::default(); CategoricalFeature::ALL.len()];
    let mut any = false;
    for job in jobs {
        any = true;
        for feature in CategoricalFeature::ALL {
            let value = feature.value_of(job);
            if value.is_empty() {
                continue;
            }
            let v = &mut vocab[feature.index()];
            if !v.ids.contains_key(&value) {
                v.values.push(value.clone());
                v.ids.insert(value, v.values.len() as u32);
            }
        }
    }
    if !any {
        return Err(EncodingError::EmptyTraining);
    }
    Ok(CategoricalDictionary { vocab })
}

/// 15-dimensional encoding in feature-table order.
pub fn encode_int(job: &JobRecord, dict: &CategoricalDictionary) -> FeatureVector {
    use CategoricalFeature as C;
    let cat = |f: C| f64::from(dict.id(f, &f.value_of(job)));
    let values = vec![
        cat(C::Name),
        cat(C::Command),
        cat(C::Account),
        f64::from(job.user_id),
        cat(C::Dependency),
        f64::from(job.group_id),
        cat(C::RequestedNodes),
        f64::from(job.num_tasks_per_socket.unwrap_or(0)),
        cat(C::Partition),
        f64::from(job.time_limit.unwrap_or(0)),
        cat(C::Qos),
        f64::from(job.num_cpu),
        f64::from(job.num_nodes),
        f64::from(job.num_gpus),
        job.submit_time.timestamp() as f64,
    ];
    FeatureVector::new(values, Encoding::Int).expect("INT encoding is 15 finite values")
}
