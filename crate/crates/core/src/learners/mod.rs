//! The six predictors behind one fit/predict contract.
//!
//! | kind       | model                                                     |
//! |------------|-----------------------------------------------------------|
//! | `Dt`       | CART, Gini, grown to purity                               |
//! | `Rf`       | 100 bagged CART trees, `floor(sqrt(d))` features/split    |
//! | `Lr`       | standardised, L2 = 1.0, L-BFGS to `|grad| < 1e-6`         |
//! | `Knn`      | k = 5, cosine or Minkowski (p = 2) distance               |
//! | `Majority` | most frequent training label                              |
//! | `Random`   | uniform over the distinct training labels                 |

mod baseline;
mod distance;
mod forest;
mod knn;
mod logistic;
mod tree;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use baseline::RandomBaseline;
pub use distance::{cosine_distance, minkowski_distance};
pub use forest::RandomForest;
pub use knn::KnnModel;
pub use logistic::{minimize as lbfgs_minimize, LbfgsOutcome, LogisticObjective, LogisticRegression};
pub use tree::DecisionTree;

use crate::encoding::FeatureVector;
use crate::trace::ExitOutcome;

/// Leading tag of serialised models.
pub const MODEL_FORMAT: &str = "hfo-model-v1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearnError {
    #[error("cannot fit on an empty training set")]
    EmptyTraining,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("{vectors} vectors but {outcomes} outcomes")]
    LengthMismatch { vectors: usize, outcomes: usize },
    #[error("invalid classifier spec: {0}")]
    InvalidSpec(String),
    #[error("operation requires a KNN model")]
    NotKnn,
    #[error("model blob: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dt,
    Rf,
    Lr,
    Knn,
    Majority,
    Random,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Dt,
        ModelKind::Rf,
        ModelKind::Lr,
        ModelKind::Knn,
        ModelKind::Majority,
        ModelKind::Random,
    ];

    pub fn is_supervised(self) -> bool {
        matches!(self, ModelKind::Dt | ModelKind::Rf | ModelKind::Lr)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dt => "dt",
            ModelKind::Rf => "rf",
            ModelKind::Lr => "lr",
            ModelKind::Knn => "knn",
            ModelKind::Majority => "majority",
            ModelKind::Random => "random",
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown model `{s}`"))
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distance {
    Cosine,
    Minkowski,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ModelKind,
    pub k: usize,
    pub distance: Distance,
    pub p: u32,
    pub seed: u64,
    pub n_trees: usize,
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl ClassifierSpec {
    pub fn new(kind: ModelKind) -> Self {
        ClassifierSpec {
            kind,
            k: 5,
            distance: Distance::Minkowski,
            p: 2,
            seed: 0,
            n_trees: 100,
            l2: 1.0,
            max_iter: 1000,
            tol: 1e-6,
        }
    }

    pub fn knn(distance: Distance) -> Self {
        ClassifierSpec {
            distance,
            ..ClassifierSpec::new(ModelKind::Knn)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), LearnError> {
        if self.k == 0 {
            return Err(LearnError::InvalidSpec("k must be >= 1".into()));
        }
        if self.p == 0 {
            return Err(LearnError::InvalidSpec("p must be >= 1".into()));
        }
        if self.n_trees == 0 {
            return Err(LearnError::InvalidSpec("forest needs at least one tree".into()));
        }
        if !(self.l2 >= 0.0 && self.tol > 0.0) {
            return Err(LearnError::InvalidSpec("l2 must be >= 0 and tol > 0".into()));
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.kind == ModelKind::Knn && self.k.is_multiple_of(2) {
            out.push(format!("k = {} is even; tied votes fall back to the reference majority", self.k));
        }
        out
    }

    /// Short row label, e.g. `RF`, `MWD`, `CD`, `Majority`.
    pub fn label(&self) -> String {
        match self.kind {
            ModelKind::Dt => "DT".into(),
            ModelKind::Rf => "RF".into(),
            ModelKind::Lr => "LR".into(),
            ModelKind::Knn => match self.distance {
                Distance::Cosine => "CD".into(),
                Distance::Minkowski if self.p == 2 => "MWD".into(),
                Distance::Minkowski => format!("MWD{}", self.p),
            },
            ModelKind::Majority => "Majority".into(),
            ModelKind::Random => "Random".into(),
        }
    }
}

/// Parallel vectors and labels with a uniform dimension.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    vectors: Vec<FeatureVector>,
    outcomes: Vec<ExitOutcome>,
}

impl TrainingSet {
    pub fn new(vectors: Vec<FeatureVector>, outcomes: Vec<ExitOutcome>) -> Result<Self, LearnError> {
        if vectors.len() != outcomes.len() {
            return Err(LearnError::LengthMismatch {
                vectors: vectors.len(),
                outcomes: outcomes.len(),
            });
        }
        if let Some(first) = vectors.first() {
            if let Some(bad) = vectors.iter().find(|v| v.dim() != first.dim()) {
                return Err(LearnError::Dimension {
                    expected: first.dim(),
                    found: bad.dim(),
                });
            }
        }
        Ok(TrainingSet { vectors, outcomes })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.vectors.first().map(FeatureVector::dim)
    }

    pub fn vectors(&self) -> &[FeatureVector] {
        &self.vectors
    }

    pub fn outcomes(&self) -> &[ExitOutcome] {
        &self.outcomes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "lowercase")]
pub enum ModelState {
    Dt(DecisionTree),
    Rf(RandomForest),
    Lr(LogisticRegression),
    Knn(KnnModel),
    Majority(ExitOutcome),
    Random(RandomBaseline),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ClassifierSpec,
    pub dim: usize,
    pub state: ModelState,
}

pub fn fit(spec: &ClassifierSpec, train: &TrainingSet) -> Result<FittedModel, LearnError> {
    spec.validate()?;
    let dim = train.dim().ok_or(LearnError::EmptyTraining)?;
    let outcomes = train.outcomes();
    let failed: Vec<bool> = outcomes.iter().map(|o| o.is_failed()).collect();
    let state = match spec.kind {
        ModelKind::Dt | ModelKind::Rf => {
            let data: Vec<f64> = train.vectors().iter().flat_map(|v| v.values().iter().copied()).collect();
            let samples = tree::Samples {
                data: &data,
                dim,
                labels: &failed,
            };
            if spec.kind == ModelKind::Dt {
                ModelState::Dt(DecisionTree::grow::<rand_chacha::ChaCha8Rng>(
                    &samples,
                    (0..failed.len()).collect(),
                    tree::FeaturePolicy::All,
                ))
            } else {
                ModelState::Rf(RandomForest::fit(&samples, spec.n_trees, spec.seed))
            }
        }
        ModelKind::Lr => {
            let rows: Vec<&[f64]> = train.vectors().iter().map(FeatureVector::values).collect();
            ModelState::Lr(LogisticRegression::fit(&rows, &failed, spec.l2, spec.max_iter, spec.tol))
        }
        ModelKind::Knn => {
            let mut model = KnnModel::new(spec.k, spec.distance, spec.p, dim);
            for (v, o) in train.vectors().iter().zip(outcomes) {
                model.push(v.clone(), *o);
            }
            ModelState::Knn(model)
        }
        ModelKind::Majority => ModelState::Majority(baseline::majority_label(outcomes)),
        ModelKind::Random => ModelState::Random(RandomBaseline::new(outcomes, spec.seed)),
    };
    Ok(FittedModel {
        spec: spec.clone(),
        dim,
        state,
    })
}

impl FittedModel {
    fn check_dim(&self, found: usize) -> Result<(), LearnError> {
        if found != self.dim {
            return Err(LearnError::Dimension {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<ExitOutcome, LearnError> {
        self.check_dim(x.dim())?;
        let x = x.values();
        let failed = match &self.state {
            ModelState::Dt(t) => t.predict_failed(x),
            ModelState::Rf(f) => f.predict_failed(x),
            ModelState::Lr(m) => m.predict_failed(x),
            ModelState::Knn(m) => return Ok(m.predict(x)),
            ModelState::Majority(label) => return Ok(*label),
            ModelState::Random(r) => return Ok(r.next()),
        };
        Ok(if failed {
            ExitOutcome::Failed
        } else {
            ExitOutcome::Completed
        })
    }

    pub fn as_knn(&self) -> Option<&KnnModel> {
        match &self.state {
            ModelState::Knn(m) => Some(m),
            _ => None,
        }
    }

    /// Wraps a reference set back into a model with this model's spec.
    pub fn with_knn(&self, knn: KnnModel) -> FittedModel {
        FittedModel {
            spec: self.spec.clone(),
            dim: self.dim,
            state: ModelState::Knn(knn),
        }
    }

    pub fn to_json(&self) -> Result<String, LearnError> {
        #[derive(Serialize)]
        struct Blob<'a> {
            format: &'static str,
            #[serde(flatten)]
            model: &'a FittedModel,
        }
        serde_json::to_string(&Blob {
            format: MODEL_FORMAT,
            model: self,
        })
        .map_err(|e| LearnError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, LearnError> {
        #[derive(Deserialize)]
        struct Blob {
            format: String,
            #[serde(flatten)]
            model: FittedModel,
        }
        let blob: Blob = serde_json::from_str(text).map_err(|e| LearnError::Format(e.to_string()))?;
        if blob.format != MODEL_FORMAT {
            return Err(LearnError::Format(format!("unsupported format `{}`", blob.format)));
        }
        Ok(blob.model)
    }
}

/// New KNN model whose reference set is the old one followed by `newly_finished`.
pub fn extend_reference_set(
    model: &FittedModel,
    newly_finished: &[(FeatureVector, ExitOutcome)],
) -> Result<FittedModel, LearnError> {
    let knn = model.as_knn().ok_or(LearnError::NotKnn)?;
    let mut next = knn.clone();
    for (v, o) in newly_finished {
        model.check_dim(v.dim())?;
        next.push(v.clone(), *o);
    }
    Ok(model.with_knn(next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::ExitOutcome::{Completed, Failed};

    fn set(points: &[(&[f64], ExitOutcome)]) -> TrainingSet {
        TrainingSet::new(
            points.iter().map(|(v, _)| FeatureVector::raw(v.to_vec())).collect(),
            points.iter().map(|(_, o)| *o).collect(),
        )
        .unwrap()
    }

    fn separable() -> TrainingSet {
        let pts: Vec<(Vec<f64>, ExitOutcome)> = (0..20)
            .map(|i| {
                let x0 = f64::from(i) / 2.0;
                let x1 = f64::from((i * 7) % 5);
                (vec![x0, x1], if x0 > 5.0 { Failed } else { Completed })
            })
            .collect();
        TrainingSet::new(
            pts.iter().map(|(v, _)| FeatureVector::raw(v.clone())).collect(),
            pts.iter().map(|(_, o)| *o).collect(),
        )
        .unwrap()
    }

    #[test]
    fn majority_predicts_the_frequent_label() {
        let mut pts: Vec<(&[f64], ExitOutcome)> = vec![(&[0.0], Completed); 9];
        pts.push((&[1.0], Failed));
        let m = fit(&ClassifierSpec::new(ModelKind::Majority), &set(&pts)).unwrap();
        for x in [0.0, 1.0, 5.0] {
            assert_eq!(m.predict(&FeatureVector::raw(vec![x])).unwrap(), Completed);
        }
    }

    #[test]
    fn tree_fits_separable_data_exactly() {
        let train = separable();
        let m = fit(&ClassifierSpec::new(ModelKind::Dt), &train).unwrap();
        for (v, o) in train.vectors().iter().zip(train.outcomes()) {
            assert_eq!(m.predict(v).unwrap(), *o);
        }
    }

    #[test]
    fn empty_and_mismatched_inputs_are_rejected() {
        let empty = TrainingSet::default();
        for kind in ModelKind::ALL {
            assert_eq!(fit(&ClassifierSpec::new(kind), &empty).unwrap_err(), LearnError::EmptyTraining);
        }
        assert!(matches!(
            TrainingSet::new(vec![FeatureVector::raw(vec![1.0]), FeatureVector::raw(vec![1.0, 2.0])], vec![Completed, Failed]),
            Err(LearnError::Dimension { expected: 1, found: 2 })
        ));
        assert!(matches!(
            TrainingSet::new(vec![FeatureVector::raw(vec![1.0])], vec![]),
            Err(LearnError::LengthMismatch { .. })
        ));
        let m = fit(&ClassifierSpec::new(ModelKind::Majority), &separable()).unwrap();
        assert_eq!(
            m.predict(&FeatureVector::raw(vec![1.0])),
            Err(LearnError::Dimension { expected: 2, found: 1 })
        );
    }

    #[test]
    fn knn_k1_returns_label_of_identical_point() {
        let train = separable();
        let spec = ClassifierSpec { k: 1, ..ClassifierSpec::knn(Distance::Minkowski) };
        let m = fit(&spec, &train).unwrap();
        for (v, o) in train.vectors().iter().zip(train.outcomes()) {
            assert_eq!(m.predict(v).unwrap(), *o);
        }
    }

    #[test]
    fn knn_extension_is_by_value() {
        let train = set(&[(&[0.0, 0.0], Completed), (&[10.0, 10.0], Completed)]);
        let spec = ClassifierSpec { k: 1, ..ClassifierSpec::knn(Distance::Minkowski) };
        let m = fit(&spec, &train).unwrap();
        let q = FeatureVector::raw(vec![5.0, 5.0]);
        let same = extend_reference_set(&m, &[]).unwrap();
        assert_eq!(same.predict(&q).unwrap(), m.predict(&q).unwrap());

        let ext = extend_reference_set(&m, &[(q.clone(), Failed)]).unwrap();
        assert_eq!(ext.predict(&q).unwrap(), Failed);
        assert_eq!(m.predict(&q).unwrap(), Completed);
        assert_eq!(m.as_knn().unwrap().len(), 2);
        assert_eq!(ext.as_knn().unwrap().len(), 3);

        let not_knn = fit(&ClassifierSpec::new(ModelKind::Dt), &train).unwrap();
        assert_eq!(extend_reference_set(&not_knn, &[]).unwrap_err(), LearnError::NotKnn);
        assert!(matches!(
            extend_reference_set(&m, &[(FeatureVector::raw(vec![1.0]), Failed)]),
            Err(LearnError::Dimension { .. })
        ));
    }

    #[test]
    fn knn_distance_ties_prefer_earlier_references() {
        // Both references are at distance 1 from the query.
        let train = set(&[(&[1.0], Failed), (&[-1.0], Completed)]);
        let spec = ClassifierSpec { k: 1, ..ClassifierSpec::knn(Distance::Minkowski) };
        let m = fit(&spec, &train).unwrap();
        assert_eq!(m.predict(&FeatureVector::raw(vec![0.0])).unwrap(), Failed);
        let swapped = set(&[(&[-1.0], Completed), (&[1.0], Failed)]);
        let m = fit(&spec, &swapped).unwrap();
        assert_eq!(m.predict(&FeatureVector::raw(vec![0.0])).unwrap(), Completed);
    }

    #[test]
    fn knn_tied_vote_uses_reference_majority() {
        let train = set(&[
            (&[0.0], Failed),
            (&[0.1], Completed),
            (&[5.0], Failed),
            (&[6.0], Failed),
        ]);
        let spec = ClassifierSpec { k: 2, ..ClassifierSpec::knn(Distance::Minkowski) };
        assert_eq!(spec.warnings().len(), 1);
        let m = fit(&spec, &train).unwrap();
        assert_eq!(m.predict(&FeatureVector::raw(vec![0.05])).unwrap(), Failed);
    }

    #[test]
    fn random_baseline_is_uniform_and_seeded() {
        let mut pts: Vec<(&[f64], ExitOutcome)> = vec![(&[0.0], Completed); 89];
        pts.extend(vec![(&[0.0][..], Failed); 11]);
        let spec = ClassifierSpec::new(ModelKind::Random).with_seed(9);
        let a = fit(&spec, &set(&pts)).unwrap();
        let b = fit(&spec, &set(&pts)).unwrap();
        let x = FeatureVector::raw(vec![0.0]);
        let draws: Vec<_> = (0..4000).map(|_| a.predict(&x).unwrap()).collect();
        let again: Vec<_> = (0..4000).map(|_| b.predict(&x).unwrap()).collect();
        assert_eq!(draws, again);
        let failed = draws.iter().filter(|o| o.is_failed()).count() as f64 / 4000.0;
        assert!((failed - 0.5).abs() < 0.03, "{failed}");

        let only_completed = fit(&spec, &set(&[(&[0.0], Completed)])).unwrap();
        assert!((0..50).all(|_| only_completed.predict(&x).unwrap() == Completed));
    }

    #[test]
    fn models_round_trip_through_json() {
        let train = separable();
        for kind in ModelKind::ALL {
            let spec = ClassifierSpec { n_trees: 5, ..ClassifierSpec::new(kind) };
            let m = fit(&spec, &train).unwrap();
            let text = m.to_json().unwrap();
            assert!(text.starts_with("{\"format\":\"hfo-model-v1\""), "{text}");
            let back = FittedModel::from_json(&text).unwrap();
            assert_eq!(back, m);
        }
        assert!(FittedModel::from_json("{\"format\":\"other\"}").is_err());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let train = separable();
        let bad = ClassifierSpec { k: 0, ..ClassifierSpec::knn(Distance::Cosine) };
        assert!(matches!(fit(&bad, &train), Err(LearnError::InvalidSpec(_))));
        let bad = ClassifierSpec { p: 0, ..ClassifierSpec::knn(Distance::Minkowski) };
        assert!(matches!(fit(&bad, &train), Err(LearnError::InvalidSpec(_))));
    }

    #[test]
    fn labels_follow_table_naming() {
        assert_eq!(ClassifierSpec::knn(Distance::Minkowski).label(), "MWD");
        assert_eq!(ClassifierSpec::knn(Distance::Cosine).label(), "CD");
        assert_eq!(ClassifierSpec::new(ModelKind::Rf).label(), "RF");
        assert_eq!("KNN".parse::<ModelKind>().unwrap(), ModelKind::Knn);
    }
}
