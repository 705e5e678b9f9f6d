//! Offline and online evaluation protocols.
//!
//! Offline: jobs sorted by `(submit_time, job_id)`, the first `floor(split * n)`
//! train a single model and the rest are scored.
//!
//! Online: the first test boundary is `T0 = earliest submit + alpha`. Jobs
//! submitted at or after `T0` fall into fixed `omega`-day batches. Before a
//! batch with boundary `Tb`, supervised models (and the INT dictionaries)
//! are refit on the jobs submitted in `[Tb - alpha, Tb)` that ended before
//! `Tb`. KNN instead extends its reference set before every test job `j` with
//! the jobs that ended before `j` was submitted, evicting references
//! submitted before `j.submit - alpha` unless eviction is off.

use std::collections::{BTreeMap, HashSet};
use std::time::{Duration as StdDuration, Instant};

use chrono::{DateTime, Duration, NaiveDate, Utc};
use log::{info, warn};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::encoding::{
    encode_int, fit_int_encoder_iter, render_job_string, CategoricalDictionary, Embedder, Encoding, EncodingError,
    FeatureVector, HashEmbedder,
};
use crate::eval::{aggregate_monthly, ConfusionCounts, EvalError};
use crate::generator::{generate, GeneratorConfig};
use crate::learners::{fit, ClassifierSpec, FittedModel, KnnModel, LearnError, ModelKind, TrainingSet};
pub use crate::report::{EvalReport, ReportConfig, Setting, TimingStats, WindowMembership};
use crate::report::model_string;
use crate::trace::{relabel, ExitOutcome, JobRecord, LabeledJob, Relabeled};

const EMBED_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("leakage check failed: {0}")]
    Leakage(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineConfig {
    pub split_fraction: f64,
    pub verify: bool,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            split_fraction: 0.7,
            verify: false,
        }
    }
}

/// Moves the training boundary of one online batch, for checking that the
/// verifier notices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFault {
    /// Ordinal among the non-empty test batches.
    pub batch: usize,
    pub shift: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineConfig {
    pub alpha_days: u32,
    pub omega_days: u32,
    pub knn_evict: bool,
    pub membership: WindowMembership,
    pub verify: bool,
    pub fault: Option<BoundaryFault>,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            alpha_days: 30,
            omega_days: 1,
            knn_evict: true,
            membership: WindowMembership::Submit,
            verify: false,
            fault: None,
        }
    }
}

impl OnlineConfig {
    fn validate(&self) -> Result<Vec<String>, HarnessError> {
        if self.alpha_days == 0 || self.omega_days == 0 {
            return Err(HarnessError::Config("alpha and omega must be at least one day".into()));
        }
        let mut warnings = Vec::new();
        if self.alpha_days < self.omega_days {
            warnings.push(format!(
                "alpha ({}) is shorter than omega ({}); training windows will not cover whole batches",
                self.alpha_days, self.omega_days
            ));
        }
        Ok(warnings)
    }
}

/// A classifier, an encoding and, for SB, the embedder behind it.
#[derive(Clone, Copy)]
pub struct Pipeline<'e> {
    pub spec: &'e ClassifierSpec,
    pub encoding: Encoding,
    pub embedder: &'e dyn Embedder,
}

impl<'e> Pipeline<'e> {
    /// SB vectors come from the built-in hash embedder.
    pub fn new(spec: &'e ClassifierSpec, encoding: Encoding) -> Self {
        Pipeline {
            spec,
            encoding,
            embedder: &HashEmbedder,
        }
    }

    pub fn with_embedder(self, embedder: &'e dyn Embedder) -> Self {
        Pipeline { embedder, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub job_id: u64,
    pub predicted: ExitOutcome,
    pub actual: ExitOutcome,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: EvalReport,
    /// Scored test jobs in scoring order.
    pub predictions: Vec<Prediction>,
    /// The model used for the last scored job.
    pub final_model: Option<FittedModel>,
}

/// Labeled jobs in `(submit_time, job_id)` order plus bookkeeping.
struct Prepared {
    labeled: Vec<LabeledJob>,
    unfinished: Vec<JobRecord>,
    excluded: usize,
}

impl Prepared {
    fn new(records: &[JobRecord]) -> Self {
        let mut labeled = Vec::new();
        let mut unfinished = Vec::new();
        let mut excluded = 0;
        for r in records {
            if !r.is_finished() {
                unfinished.push(r.clone());
                continue;
            }
            match relabel(r.clone()) {
                Ok(Relabeled::Labeled(job)) => labeled.push(job),
                Ok(Relabeled::Excluded(_)) => excluded += 1,
                Err(_) => unfinished.push(r.clone()),
            }
        }
        labeled.sort_by_key(|j| (j.record.submit_time, j.record.job_id));
        Prepared {
            labeled,
            unfinished,
            excluded,
        }
    }

    fn submit(&self, i: usize) -> DateTime<Utc> {
        self.labeled[i].record.submit_time
    }

    fn end(&self, i: usize) -> DateTime<Utc> {
        self.labeled[i].end_time()
    }

    fn notes(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.excluded > 0 {
            out.push(format!("{} cancelled/node-fail jobs dropped before evaluation", self.excluded));
        }
        out
    }
}

/// Encodes jobs by index, caching SB vectors for the whole run.
struct Encoder<'e> {
    encoding: Encoding,
    embedder: &'e dyn Embedder,
    sb: Vec<Option<FeatureVector>>,
}

impl<'e> Encoder<'e> {
    fn new(encoding: Encoding, embedder: &'e dyn Embedder, n: usize) -> Result<Self, HarnessError> {
        if encoding == Encoding::Raw {
            return Err(HarnessError::Config("the harness encodes jobs as INT or SB".into()));
        }
        Ok(Encoder {
            encoding,
            embedder,
            sb: vec![None; n],
        })
    }

    fn encode(
        &mut self,
        jobs: &[LabeledJob],
        idx: &[usize],
        dict: Option<&CategoricalDictionary>,
    ) -> Result<Vec<FeatureVector>, HarnessError> {
        match self.encoding {
            Encoding::Int => {
                let dict = dict.expect("INT encoding needs a fitted dictionary");
                Ok(idx.iter().map(|&i| encode_int(&jobs[i].record, dict)).collect())
            }
            _ => {
                let mut missing: Vec<usize> = idx.iter().copied().filter(|&i| self.sb[i].is_none()).collect();
                missing.sort_unstable();
                missing.dedup();
                for chunk in missing.chunks(EMBED_CHUNK) {
                    let texts: Vec<String> = chunk
                        .iter()
                        .map(|&i| render_job_string(&jobs[i].record).into_string())
                        .collect();
                    let vectors = self.embedder.embed_batch(&texts)?;
                    if vectors.len() != texts.len() {
                        return Err(EncodingError::EmbedderUnavailable(format!(
                            "{} vectors for {} texts",
                            vectors.len(),
                            texts.len()
                        ))
                        .into());
                    }
                    for (&i, v) in chunk.iter().zip(vectors) {
                        self.sb[i] = Some(FeatureVector::new(v, Encoding::Sb)?);
                    }
                }
                Ok(idx.iter().map(|&i| self.sb[i].clone().expect("embedded above")).collect())
            }
        }
    }
}

fn fit_dictionary(
    encoding: Encoding,
    jobs: &[LabeledJob],
    idx: &[usize],
) -> Result<Option<CategoricalDictionary>, HarnessError> {
    match encoding {
        Encoding::Int => Ok(Some(fit_int_encoder_iter(idx.iter().map(|&i| &jobs[i].record))?)),
        _ => Ok(None),
    }
}

/// Per-batch seed, independent of how many batches ran before.
fn batch_seed(seed: u64, batch: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(batch);
    rng.next_u64()
}

fn predict_all(model: &FittedModel, xs: &[FeatureVector]) -> Result<Vec<ExitOutcome>, LearnError> {
    if model.spec.kind == ModelKind::Random {
        // The random stream is positional, so draws must happen in order.
        xs.iter().map(|x| model.predict(x)).collect()
    } else {
        xs.par_iter().map(|x| model.predict(x)).collect()
    }
}

/// Independent re-check of the temporal constraints, enabled by `verify`.
struct LeakageChecker {
    alpha: Duration,
    membership: WindowMembership,
    evict: bool,
    scored: HashSet<u64>,
}

impl LeakageChecker {
    fn new(config: &OnlineConfig) -> Self {
        LeakageChecker {
            alpha: Duration::days(i64::from(config.alpha_days)),
            membership: config.membership,
            evict: config.knn_evict,
            scored: HashSet::new(),
        }
    }

    fn window<'a>(&self, tb: DateTime<Utc>, jobs: impl Iterator<Item = &'a LabeledJob>) -> Result<(), HarnessError> {
        for job in jobs {
            let (id, submit, end) = (job.record.job_id, job.record.submit_time, job.end_time());
            if end >= tb {
                return Err(HarnessError::Leakage(format!(
                    "training job {id} ended at {end}, not before the test boundary {tb}"
                )));
            }
            let inside = match self.membership {
                WindowMembership::Submit => submit >= tb - self.alpha && submit < tb,
                WindowMembership::End => end >= tb - self.alpha,
            };
            if !inside {
                return Err(HarnessError::Leakage(format!(
                    "training job {id} lies outside the window ending at {tb}"
                )));
            }
        }
        Ok(())
    }

    fn batch<'a>(
        &self,
        tb: DateTime<Utc>,
        omega: Duration,
        jobs: impl Iterator<Item = &'a LabeledJob>,
    ) -> Result<(), HarnessError> {
        for job in jobs {
            let s = job.record.submit_time;
            if s < tb || s >= tb + omega {
                return Err(HarnessError::Leakage(format!(
                    "test job {} submitted at {s} outside batch [{tb}, {})",
                    job.record.job_id,
                    tb + omega
                )));
            }
        }
        Ok(())
    }

    fn references<'a>(&self, query: &LabeledJob, refs: impl Iterator<Item = &'a LabeledJob>) -> Result<(), HarnessError> {
        let at = query.record.submit_time;
        for r in refs {
            if r.end_time() >= at {
                return Err(HarnessError::Leakage(format!(
                    "reference job {} ended at {}, not before job {} was submitted at {at}",
                    r.record.job_id,
                    r.end_time(),
                    query.record.job_id
                )));
            }
            if self.evict && r.record.submit_time < at - self.alpha {
                return Err(HarnessError::Leakage(format!(
                    "reference job {} is older than the window of job {}",
                    r.record.job_id, query.record.job_id
                )));
            }
        }
        Ok(())
    }

    fn scored(&mut self, job_id: u64) -> Result<(), HarnessError> {
        if !self.scored.insert(job_id) {
            return Err(HarnessError::Leakage(format!("job {job_id} scored twice")));
        }
        Ok(())
    }

    fn finish(&self, eligible: usize, skipped: usize) -> Result<(), HarnessError> {
        if self.scored.len() + skipped != eligible {
            return Err(HarnessError::Leakage(format!(
                "{} scored + {skipped} skipped != {eligible} test jobs",
                self.scored.len()
            )));
        }
        Ok(())
    }
}

#[derive(Default)]
struct Tally {
    daily: BTreeMap<NaiveDate, ConfusionCounts>,
    predictions: Vec<Prediction>,
    train: StdDuration,
    trained_batches: u64,
    infer: StdDuration,
    skipped: u64,
    warnings: Vec<String>,
}

impl Tally {
    fn record(&mut self, job: &LabeledJob, predicted: ExitOutcome) {
        self.daily
            .entry(job.record.submit_time.date_naive())
            .or_default()
            .record(predicted, job.outcome);
        self.predictions.push(Prediction {
            job_id: job.record.job_id,
            predicted,
            actual: job.outcome,
        });
    }

    fn into_result(
        self,
        pipeline: &Pipeline,
        setting: Setting,
        config: ReportConfig,
        train_days: f64,
        final_model: Option<FittedModel>,
    ) -> Result<RunResult, HarnessError> {
        let daily: Vec<(NaiveDate, ConfusionCounts)> = self.daily.into_iter().collect();
        let agg = aggregate_monthly(&daily)?;
        let scored = self.predictions.len().max(1) as f64;
        let train_s_per_day = (pipeline.spec.kind != ModelKind::Knn && train_days > 0.0)
            .then(|| self.train.as_secs_f64() / train_days);
        let mut warnings = self.warnings;
        warnings.extend(agg.warnings);
        let report = EvalReport {
            model: model_string(pipeline.spec),
            encoding: pipeline.encoding,
            setting,
            config,
            monthly: agg.months,
            monthly_mean: agg.mean,
            pooled: agg.pooled,
            timing: TimingStats {
                train_s_per_day,
                infer_s_per_job: self.infer.as_secs_f64() / scored,
            },
            skipped: self.skipped,
            warnings,
        };
        Ok(RunResult {
            report,
            predictions: self.predictions,
            final_model,
        })
    }
}

/// Single chronological train/test split.
///
/// The training time is reported per day of training data.
pub fn run_offline(records: &[JobRecord], pipeline: Pipeline, config: &OfflineConfig) -> Result<RunResult, HarnessError> {
    pipeline.spec.validate()?;
    if !(config.split_fraction > 0.0 && config.split_fraction < 1.0) {
        return Err(HarnessError::Config(format!(
            "split fraction {} is not in (0, 1)",
            config.split_fraction
        )));
    }
    let prep = Prepared::new(records);
    let n = prep.labeled.len();
    let n_train = (config.split_fraction * n as f64).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(HarnessError::Config(format!(
            "split {} of {n} labeled jobs leaves one side empty",
            config.split_fraction
        )));
    }
    let jobs = &prep.labeled;
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..n).collect();
    if config.verify {
        let last_train = train_idx.iter().map(|&i| prep.submit(i)).max();
        let first_test = test_idx.iter().map(|&i| prep.submit(i)).min();
        if last_train > first_test {
            return Err(HarnessError::Leakage("a test job was submitted before a training job".into()));
        }
    }

    let mut tally = Tally {
        skipped: prep.unfinished.len() as u64,
        warnings: prep.notes(),
        ..Tally::default()
    };
    tally.warnings.extend(pipeline.spec.warnings());
    let mut encoder = Encoder::new(pipeline.encoding, pipeline.embedder, n)?;

    let t = Instant::now();
    let dict = fit_dictionary(pipeline.encoding, jobs, &train_idx)?;
    let vectors = encoder.encode(jobs, &train_idx, dict.as_ref())?;
    let outcomes = train_idx.iter().map(|&i| jobs[i].outcome).collect();
    let model = fit(pipeline.spec, &TrainingSet::new(vectors, outcomes)?)?;
    tally.train = t.elapsed();
    let span = prep.submit(n_train - 1) - prep.submit(0);
    let train_days = (span.num_seconds() as f64 / 86_400.0).max(1.0);

    let t = Instant::now();
    let xs = encoder.encode(jobs, &test_idx, dict.as_ref())?;
    let predicted = predict_all(&model, &xs)?;
    tally.infer = t.elapsed();
    for (&i, p) in test_idx.iter().zip(predicted) {
        tally.record(&jobs[i], p);
    }
    let config = ReportConfig {
        alpha: None,
        omega: None,
        split: Some(config.split_fraction),
        seed: pipeline.spec.seed,
        knn_evict: None,
        window_membership: None,
    };
    tally.into_result(&pipeline, Setting::Offline, config, train_days, Some(model))
}

/// Test batches: `(ordinal, nominal boundary, job indices)`.
fn batches(prep: &Prepared, first: usize, t0: DateTime<Utc>, omega: Duration) -> Vec<(u64, DateTime<Utc>, Vec<usize>)> {
    let mut out: Vec<(u64, DateTime<Utc>, Vec<usize>)> = Vec::new();
    let width = omega.num_seconds();
    for i in first..prep.labeled.len() {
        let b = ((prep.submit(i) - t0).num_seconds() / width) as u64;
        match out.last_mut() {
            Some((last, _, idx)) if *last == b => idx.push(i),
            _ => out.push((b, t0 + omega * b as i32, vec![i])),
        }
    }
    out
}

/// Rolling retrain-and-test evaluation.
pub fn run_online(records: &[JobRecord], pipeline: Pipeline, config: &OnlineConfig) -> Result<RunResult, HarnessError> {
    pipeline.spec.validate()?;
    let config_warnings = config.validate()?;
    let prep = Prepared::new(records);
    let earliest = records
        .iter()
        .map(|r| r.submit_time)
        .min()
        .ok_or_else(|| HarnessError::Config("empty trace".into()))?;
    let latest = records.iter().map(|r| r.submit_time).max().unwrap_or(earliest);
    let alpha = Duration::days(i64::from(config.alpha_days));
    let omega = Duration::days(i64::from(config.omega_days));
    let t0 = earliest + alpha;
    if latest < t0 {
        return Err(HarnessError::Config(format!(
            "trace spans less than alpha = {} days",
            config.alpha_days
        )));
    }
    let first_test = prep.labeled.partition_point(|j| j.record.submit_time < t0);
    let eligible = prep.labeled.len() - first_test;
    let batches = batches(&prep, first_test, t0, omega);

    let mut tally = Tally {
        skipped: prep.unfinished.iter().filter(|r| r.submit_time >= t0).count() as u64,
        warnings: prep.notes(),
        ..Tally::default()
    };
    tally.warnings.extend(config_warnings);
    tally.warnings.extend(pipeline.spec.warnings());
    let unfinished_skipped = tally.skipped as usize;
    let mut checker = config.verify.then(|| LeakageChecker::new(config));
    let mut encoder = Encoder::new(pipeline.encoding, pipeline.embedder, prep.labeled.len())?;

    let mut by_end: Vec<usize> = (0..prep.labeled.len()).collect();
    by_end.sort_by_key(|&i| (prep.end(i), prep.labeled[i].record.job_id));

    let shift_for = |ordinal: usize| {
        config
            .fault
            .filter(|f| f.batch == ordinal)
            .map_or(Duration::zero(), |f| f.shift)
    };
    // Jobs with submit in [lo, hi) (or end, depending on membership) and end < hi.
    let window = |hi: DateTime<Utc>| -> Vec<usize> {
        let lo = hi - alpha;
        match config.membership {
            WindowMembership::Submit => {
                let a = prep.labeled.partition_point(|j| j.record.submit_time < lo);
                let b = prep.labeled.partition_point(|j| j.record.submit_time < hi);
                (a..b).filter(|&i| prep.end(i) < hi).collect()
            }
            WindowMembership::End => {
                let a = by_end.partition_point(|&i| prep.end(i) < lo);
                let b = by_end.partition_point(|&i| prep.end(i) < hi);
                by_end[a..b].to_vec()
            }
        }
    };

    let final_model = if pipeline.spec.kind == ModelKind::Knn {
        online_knn(&prep, &pipeline, config, &batches, &by_end, &mut encoder, &mut tally, &mut checker, &shift_for, &window)?
    } else {
        online_supervised(&prep, &pipeline, omega, &batches, &mut encoder, &mut tally, &mut checker, &shift_for, &window)?
    };

    if let Some(checker) = &checker {
        checker.finish(eligible, tally.skipped as usize - unfinished_skipped)?;
        info!("leakage checks passed for {} test jobs", tally.predictions.len());
    }
    let report_config = ReportConfig {
        alpha: Some(config.alpha_days),
        omega: Some(config.omega_days),
        split: None,
        seed: pipeline.spec.seed,
        knn_evict: (pipeline.spec.kind == ModelKind::Knn).then_some(config.knn_evict),
        window_membership: Some(config.membership),
    };
    let train_days = (tally.trained_batches * u64::from(config.omega_days)) as f64;
    tally.into_result(&pipeline, Setting::Online, report_config, train_days, final_model)
}

#[allow(clippy::too_many_arguments)]
fn online_supervised(
    prep: &Prepared,
    pipeline: &Pipeline,
    omega: Duration,
    batches: &[(u64, DateTime<Utc>, Vec<usize>)],
    encoder: &mut Encoder,
    tally: &mut Tally,
    checker: &mut Option<LeakageChecker>,
    shift_for: &dyn Fn(usize) -> Duration,
    window: &dyn Fn(DateTime<Utc>) -> Vec<usize>,
) -> Result<Option<FittedModel>, HarnessError> {
    let jobs = &prep.labeled;
    let mut last_model = None;
    for (ordinal, (b, tb, test)) in batches.iter().enumerate() {
        let train = window(*tb + shift_for(ordinal));
        if train.is_empty() {
            let msg = format!("batch {} skipped: empty training window before {tb}", tb.date_naive());
            warn!("{msg}");
            tally.warnings.push(msg);
            tally.skipped += test.len() as u64;
            continue;
        }
        if let Some(c) = checker.as_ref() {
            c.batch(*tb, omega, test.iter().map(|&i| &jobs[i]))?;
            c.window(*tb, train.iter().map(|&i| &jobs[i]))?;
        }

        let t = Instant::now();
        let dict = fit_dictionary(pipeline.encoding, jobs, &train)?;
        let vectors = encoder.encode(jobs, &train, dict.as_ref())?;
        let outcomes = train.iter().map(|&i| jobs[i].outcome).collect();
        let spec = ClassifierSpec {
            seed: batch_seed(pipeline.spec.seed, *b),
            ..pipeline.spec.clone()
        };
        let model = fit(&spec, &TrainingSet::new(vectors, outcomes)?)?;
        tally.train += t.elapsed();
        tally.trained_batches += 1;

        let t = Instant::now();
        let xs = encoder.encode(jobs, test, dict.as_ref())?;
        let predicted = predict_all(&model, &xs)?;
        tally.infer += t.elapsed();
        for (&i, p) in test.iter().zip(predicted) {
            if let Some(c) = checker.as_mut() {
                c.scored(jobs[i].record.job_id)?;
            }
            tally.record(&jobs[i], p);
        }
        last_model = Some(model);
    }
    Ok(last_model)
}

#[allow(clippy::too_many_arguments)]
fn online_knn(
    prep: &Prepared,
    pipeline: &Pipeline,
    config: &OnlineConfig,
    batches: &[(u64, DateTime<Utc>, Vec<usize>)],
    by_end: &[usize],
    encoder: &mut Encoder,
    tally: &mut Tally,
    checker: &mut Option<LeakageChecker>,
    shift_for: &dyn Fn(usize) -> Duration,
    window: &dyn Fn(DateTime<Utc>) -> Vec<usize>,
) -> Result<Option<FittedModel>, HarnessError> {
    let jobs = &prep.labeled;
    let spec = pipeline.spec;
    let alpha = Duration::days(i64::from(config.alpha_days));
    let omega = Duration::days(i64::from(config.omega_days));
    let dim = match pipeline.encoding {
        Encoding::Int => crate::encoding::INT_DIM,
        _ => crate::encoding::SB_DIM,
    };
    let mut model = KnnModel::new(spec.k, spec.distance, spec.p, dim);
    let mut ref_jobs: Vec<usize> = Vec::new();
    let mut next_ref = 0;
    let mut dict: Option<CategoricalDictionary> = None;
    let mut empty_reference = 0u64;

    for (ordinal, (_, tb, test)) in batches.iter().enumerate() {
        let shift = shift_for(ordinal);
        if let Some(c) = checker.as_ref() {
            c.batch(*tb, omega, test.iter().map(|&i| &jobs[i]))?;
        }
        let t = Instant::now();
        if pipeline.encoding == Encoding::Int {
            let train = window(*tb + shift);
            if train.is_empty() {
                let msg = format!("batch {} skipped: no jobs to fit the INT dictionary", tb.date_naive());
                warn!("{msg}");
                tally.warnings.push(msg);
                tally.skipped += test.len() as u64;
                continue;
            }
            dict = fit_dictionary(pipeline.encoding, jobs, &train)?;
            // Re-encode the surviving references under the new dictionary.
            let vectors = encoder.encode(jobs, &ref_jobs, dict.as_ref())?;
            let mut fresh = KnnModel::new(spec.k, spec.distance, spec.p, dim);
            for (v, &i) in vectors.into_iter().zip(&ref_jobs) {
                fresh.push(v, jobs[i].outcome);
            }
            model = fresh;
        }
        let queries = encoder.encode(jobs, test, dict.as_ref())?;
        tally.infer += t.elapsed();

        for (&j, x) in test.iter().zip(queries) {
            let t = Instant::now();
            let at = prep.submit(j);
            let cutoff = at + shift;
            let lower = at - alpha;
            let mut arrived = Vec::new();
            while next_ref < by_end.len() && prep.end(by_end[next_ref]) < cutoff {
                let i = by_end[next_ref];
                next_ref += 1;
                if !config.knn_evict || prep.submit(i) >= lower {
                    arrived.push(i);
                }
            }
            if !arrived.is_empty() {
                let vectors = encoder.encode(jobs, &arrived, dict.as_ref())?;
                for (v, &i) in vectors.into_iter().zip(&arrived) {
                    model.push(v, jobs[i].outcome);
                }
                ref_jobs.extend(arrived);
            }
            if config.knn_evict && ref_jobs.iter().any(|&i| prep.submit(i) < lower) {
                let keep: Vec<bool> = ref_jobs.iter().map(|&i| prep.submit(i) >= lower).collect();
                model = model.retained(|pos| keep[pos]);
                ref_jobs.retain(|&i| prep.submit(i) >= lower);
            }
            if model.is_empty() {
                tally.skipped += 1;
                empty_reference += 1;
                tally.infer += t.elapsed();
                continue;
            }
            if let Some(c) = checker.as_mut() {
                c.references(&jobs[j], ref_jobs.iter().map(|&i| &jobs[i]))?;
                c.scored(jobs[j].record.job_id)?;
            }
            let predicted = model.predict(x.values());
            tally.infer += t.elapsed();
            tally.record(&jobs[j], predicted);
        }
    }
    if empty_reference > 0 {
        tally
            .warnings
            .push(format!("{empty_reference} jobs skipped: no reference jobs had finished yet"));
    }
    Ok(knn_as_fitted(spec, model))
}

fn knn_as_fitted(spec: &ClassifierSpec, model: KnnModel) -> Option<FittedModel> {
    if model.is_empty() {
        return None;
    }
    let dim = model.dim();
    Some(FittedModel {
        spec: spec.clone(),
        dim,
        state: crate::learners::ModelState::Knn(model),
    })
}

/// Offline versus online failed-class F1 for one model/encoding pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftRow {
    pub label: String,
    pub offline_failed_f1: f64,
    pub online_failed_f1: f64,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct DriftComparison {
    pub rows: Vec<DriftRow>,
    pub reports: Vec<(EvalReport, EvalReport)>,
}

/// Runs every pipeline in both settings on the same trace. Each side uses its
/// headline aggregate: pooled offline, monthly mean online.
pub fn compare_settings(
    records: &[JobRecord],
    pipelines: &[Pipeline],
    offline: &OfflineConfig,
    online: &OnlineConfig,
) -> Result<DriftComparison, HarnessError> {
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for p in pipelines {
        let off = run_offline(records, *p, offline)?.report;
        let on = run_online(records, *p, online)?.report;
        let (a, b) = (off.headline().failed.f1, on.headline().failed.f1);
        rows.push(DriftRow {
            label: on.row_label(),
            offline_failed_f1: a,
            online_failed_f1: b,
            delta: b - a,
        });
        reports.push((off, on));
    }
    Ok(DriftComparison { rows, reports })
}

/// Generates a drifting trace and compares the two settings on it.
pub fn inject_drift_experiment(
    config: &GeneratorConfig,
    pipelines: &[Pipeline],
    offline: &OfflineConfig,
    online: &OnlineConfig,
) -> Result<DriftComparison, HarnessError> {
    if config.drift_schedule.is_empty() {
        return Err(HarnessError::Config("drift experiment needs at least one drift point".into()));
    }
    let trace = generate(config).map_err(|e| HarnessError::Config(e.0))?;
    compare_settings(&trace.jobs, pipelines, offline, online)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::Distance;
    use crate::trace::tests::record;
    use crate::trace::OriginalState;

    fn job(id: u64, submit_h: i64, run_h: i64, exit: u32) -> JobRecord {
        let mut r = record(id, exit, if exit == 0 { OriginalState::Completed } else { OriginalState::Failed });
        let base = r.submit_time;
        r.submit_time = base + Duration::hours(submit_h);
        r.start_time = Some(r.submit_time);
        r.end_time = Some(r.submit_time + Duration::hours(run_h));
        r.name = format!("job{id}");
        r
    }

    /// Four days of two jobs each, one failing per day; some run overnight.
    fn small_trace() -> Vec<JobRecord> {
        let mut out = Vec::new();
        for d in 0..6 {
            out.push(job(2 * d as u64 + 1, d * 24 + 1, 2, 0));
            out.push(job(2 * d as u64 + 2, d * 24 + 3, 30, 1));
        }
        out
    }

    fn online(alpha: u32) -> OnlineConfig {
        OnlineConfig {
            alpha_days: alpha,
            verify: true,
            ..OnlineConfig::default()
        }
    }

    #[test]
    fn offline_split_counts() {
        let trace: Vec<JobRecord> = (0..10).map(|i| job(i + 1, i as i64, 1, (i % 3 == 0) as u32)).collect();
        let spec = ClassifierSpec::new(ModelKind::Majority);
        let res = run_offline(&trace, Pipeline::new(&spec, Encoding::Int), &OfflineConfig::default()).unwrap();
        assert_eq!(res.predictions.len(), 3);
        assert_eq!(
            res.predictions.iter().map(|p| p.job_id).collect::<Vec<_>>(),
            vec![8, 9, 10]
        );
        assert_eq!(res.report.config.split, Some(0.7));
        assert_eq!(res.report.config.alpha, None);
    }

    #[test]
    fn offline_rejects_empty_sides() {
        let spec = ClassifierSpec::new(ModelKind::Majority);
        let one = vec![job(1, 0, 1, 0)];
        assert!(matches!(
            run_offline(&one, Pipeline::new(&spec, Encoding::Int), &OfflineConfig::default()),
            Err(HarnessError::Config(_))
        ));
        let two = vec![job(1, 0, 1, 0), job(2, 1, 1, 0)];
        let cfg = OfflineConfig {
            split_fraction: 0.3,
            verify: false,
        };
        assert!(matches!(
            run_offline(&two, Pipeline::new(&spec, Encoding::Int), &cfg),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn online_windows_exclude_jobs_running_past_the_boundary() {
        // alpha = 1 day: T0 = day 1 at 01:00.
        let trace = small_trace();
        let spec = ClassifierSpec::new(ModelKind::Majority);
        let res = run_online(&trace, Pipeline::new(&spec, Encoding::Int), &online(1)).unwrap();
        // Day 0's failing job ends 33h after the start and misses the first
        // window, leaving only a completed job: the first batch is predicted
        // Completed throughout.
        assert_eq!(res.predictions[0].predicted, ExitOutcome::Completed);
        assert_eq!(res.predictions.len() as u64 + res.report.skipped, 10);
    }

    #[test]
    fn online_counts_batches_and_skips() {
        let mut trace = small_trace();
        let mut open = job(99, 5 * 24 + 5, 1, 0);
        open.end_time = None;
        open.exit_code = None;
        open.original_state = None;
        trace.push(open);
        let spec = ClassifierSpec::new(ModelKind::Dt);
        let res = run_online(&trace, Pipeline::new(&spec, Encoding::Int), &online(1)).unwrap();
        assert_eq!(res.report.skipped as usize + res.predictions.len(), 11);
        assert_eq!(res.report.config.knn_evict, None);
    }

    #[test]
    fn boundary_fault_is_caught() {
        let trace = small_trace();
        for spec in [ClassifierSpec::new(ModelKind::Dt), ClassifierSpec::knn(Distance::Minkowski)] {
            let mut cfg = online(2);
            cfg.fault = Some(BoundaryFault {
                batch: 1,
                shift: Duration::days(1),
            });
            let res = run_online(&trace, Pipeline::new(&spec, Encoding::Sb), &cfg);
            assert!(matches!(res, Err(HarnessError::Leakage(_))), "{spec:?}: {res:?}");
        }
    }

    #[test]
    fn knn_needs_finished_references() {
        let trace = small_trace();
        let spec = ClassifierSpec::knn(Distance::Cosine);
        let res = run_online(&trace, Pipeline::new(&spec, Encoding::Sb), &online(1)).unwrap();
        assert_eq!(res.report.timing.train_s_per_day, None);
        assert_eq!(res.report.config.knn_evict, Some(true));
        assert_eq!(res.predictions.len() as u64 + res.report.skipped, 10);
    }

    #[test]
    fn short_trace_is_a_config_error() {
        let spec = ClassifierSpec::new(ModelKind::Majority);
        assert!(matches!(
            run_online(&small_trace(), Pipeline::new(&spec, Encoding::Int), &online(30)),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn raw_encoding_is_rejected() {
        let spec = ClassifierSpec::new(ModelKind::Majority);
        assert!(matches!(
            run_offline(&small_trace(), Pipeline::new(&spec, Encoding::Raw), &OfflineConfig::default()),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn batch_seeds_differ() {
        assert_ne!(batch_seed(1, 0), batch_seed(1, 1));
        assert_eq!(batch_seed(1, 7), batch_seed(1, 7));
    }
}
