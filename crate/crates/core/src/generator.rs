//! Deterministic synthetic workload generator.
//!
//! Jobs arrive in per-user submission batches that share a name stem and a
//! command script. Whether a job fails is driven by a failure rule: each rule
//! marks a set of `(user, partition, time limit)` combinations as failure
//! prone, chosen so that they carry roughly the target failure mass. A
//! `label_noise` fraction of outcomes instead follows a monthly background
//! rate, which is how the per-month failure rate is steered to its target.
//! Switching rules at month boundaries (the drift schedule) changes which
//! jobs fail without changing what the jobs look like.
//!
//! The random stream is ChaCha8 seeded from `seed`; the algorithm name is
//! recorded in [`GeneratorStats::prng`].

use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;

use chrono::{DateTime, Datelike, Duration, Months, TimeZone, Utc};
use fnv::FnvHasher;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{JobRecord, Month, OriginalState};

pub const PRNG_NAME: &str = "ChaCha8Rng";

const PARTITIONS: [&str; 4] = [
    "m100_usr_prod",
    "m100_usr_dbg",
    "m100_all_serial",
    "m100_fua_prod",
];
const QOS: [&str; 3] = ["normal", "m100_qos_dbg", "m100_qos_bprod"];
const TIME_LIMITS: [Option<u32>; 7] = [
    Some(30),
    Some(60),
    Some(120),
    Some(240),
    Some(480),
    Some(1440),
    None,
];
/// Run-time cap for jobs without a time limit, in minutes.
const UNLIMITED_RUN_MINUTES: f64 = 48.0 * 60.0;
/// Probability that a job reuses its batch's random draws for its outcome.
const BATCH_OUTCOME_SHARE: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid generator config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftPoint {
    /// Zero-based month offset from the trace start at which the rule applies.
    pub month_index: u32,
    pub rule_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_users: u32,
    pub months: u32,
    pub jobs_per_day_mean: f64,
    pub batch_size_mean: f64,
    pub overall_fail_rate: f64,
    pub monthly_fail_rate_jitter: f64,
    /// Rule switches; months before the first entry use rule 0.
    pub drift_schedule: Vec<DriftPoint>,
    pub discrepancy_rate: f64,
    /// Fraction of outcomes drawn from the monthly background rate instead
    /// of the failure rule. 0 makes failure a function of the features.
    pub label_noise: f64,
    pub cancelled_rate: f64,
    pub node_fail_rate: f64,
    pub start: DateTime<Utc>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 42,
            n_users: 60,
            months: 6,
            jobs_per_day_mean: 200.0,
            batch_size_mean: 5.0,
            overall_fail_rate: 0.11,
            monthly_fail_rate_jitter: 0.02,
            drift_schedule: Vec::new(),
            discrepancy_rate: 0.07,
            label_noise: 0.3,
            cancelled_rate: 0.08,
            node_fail_rate: 0.001,
            start: Utc.with_ymd_and_hms(2020, 5, 1, 0, 0, 0).unwrap(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError(msg));
        if self.n_users < 1 {
            return fail("n_users must be >= 1".into());
        }
        if self.months < 2 {
            return fail("months must be >= 2".into());
        }
        if !(self.jobs_per_day_mean.is_finite() && self.jobs_per_day_mean > 0.0) {
            return fail("jobs_per_day_mean must be positive".into());
        }
        if !(self.batch_size_mean.is_finite() && self.batch_size_mean >= 1.0) {
            return fail("batch_size_mean must be >= 1".into());
        }
        if !(self.overall_fail_rate > 0.0 && self.overall_fail_rate < 1.0) {
            return fail(format!(
                "overall_fail_rate must be in (0, 1), got {}",
                self.overall_fail_rate
            ));
        }
        if !(self.monthly_fail_rate_jitter.is_finite() && self.monthly_fail_rate_jitter >= 0.0) {
            return fail("monthly_fail_rate_jitter must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.discrepancy_rate) {
            return fail("discrepancy_rate must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return fail("label_noise must be in [0, 1)".into());
        }
        if !(self.cancelled_rate >= 0.0
            && self.node_fail_rate >= 0.0
            && self.cancelled_rate + self.node_fail_rate < 1.0)
        {
            return fail("cancelled_rate + node_fail_rate must be in [0, 1)".into());
        }
        if let Some(p) = self.drift_schedule.iter().find(|p| p.month_index >= self.months) {
            return fail(format!(
                "drift point at month {} is outside the {}-month trace",
                p.month_index, self.months
            ));
        }
        Ok(())
    }

    pub fn horizon(&self) -> DateTime<Utc> {
        self.start + Months::new(self.months)
    }

    /// Rule active in the given zero-based month.
    pub fn rule_for_month(&self, month_index: u32) -> u32 {
        self.drift_schedule
            .iter()
            .filter(|p| p.month_index <= month_index)
            .max_by_key(|p| p.month_index)
            .map_or(0, |p| p.rule_id)
    }

    fn month_index(&self, t: DateTime<Utc>) -> u32 {
        let months = (t.year() - self.start.year()) * 12 + t.month() as i32 - self.start.month() as i32;
        months.clamp(0, self.months as i32 - 1) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthStats {
    pub month: Month,
    pub rule_id: u32,
    pub target_fail_rate: f64,
    /// Share of the month's jobs that the active rule marks failure prone.
    pub rule_mass: f64,
    pub labeled_jobs: usize,
    pub failed_jobs: usize,
    pub realized_fail_rate: f64,
}

/// Ground-truth bookkeeping emitted alongside a generated trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorStats {
    pub prng: String,
    pub seed: u64,
    pub jobs: usize,
    pub unfinished: usize,
    pub cancelled: usize,
    pub node_fail: usize,
    /// Finished, non-excluded jobs by exit-code outcome.
    pub labeled_completed: usize,
    pub labeled_failed: usize,
    pub injected_discrepancies: usize,
    /// Every finished record with a non-completed state and exit code 0.
    pub not_completed_exit_zero: usize,
    /// Every finished record with a completed state and non-zero exit code.
    pub completed_exit_nonzero: usize,
    pub monthly: Vec<MonthStats>,
}

impl GeneratorStats {
    pub fn realized_fail_rate(&self) -> f64 {
        let total = self.labeled_completed + self.labeled_failed;
        if total == 0 {
            0.0
        } else {
            self.labeled_failed as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedTrace {
    pub jobs: Vec<JobRecord>,
    pub stats: GeneratorStats,
}

struct UserProfile {
    user_id: u32,
    group_id: u32,
    account: String,
    partitions: Vec<&'static str>,
    time_limits: Vec<Option<u32>>,
    qos: &'static str,
    gpu_user: bool,
}

struct Draft {
    batch: usize,
    record: JobRecord,
    /// Shared uniforms of the batch (noise coin, noise draw).
    batch_draws: (f64, f64),
}

/// Produces a synthetic trace; a pure function of `config`.
pub fn generate(config: &GeneratorConfig) -> Result<GeneratedTrace, ConfigError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let users = make_users(config, &mut rng);
    let mut drafts = submit_batches(config, &users, &mut rng);

    drafts.sort_by_key(|d| d.record.submit_time);
    for (i, d) in drafts.iter_mut().enumerate() {
        d.record.job_id = i as u64 + 1;
    }
    add_dependencies(&mut drafts, &mut rng);

    let months = config.months as usize;
    let month_of: Vec<u32> = drafts
        .iter()
        .map(|d| config.month_index(d.record.submit_time))
        .collect();
    let rules: Vec<u32> = (0..config.months).map(|m| config.rule_for_month(m)).collect();
    let prone = failure_prone_combos(config, &drafts, &month_of, &rules);

    let mut month_jobs = vec![0usize; months];
    let mut month_prone = vec![0usize; months];
    for (d, &m) in drafts.iter().zip(&month_of) {
        month_jobs[m as usize] += 1;
        if prone.contains(rules[m as usize], &combo_of(&d.record)) {
            month_prone[m as usize] += 1;
        }
    }
    let targets = monthly_targets(config, &rules, &mut rng);
    let rule_mass: Vec<f64> = (0..months)
        .map(|m| month_prone[m] as f64 / month_jobs[m].max(1) as f64)
        .collect();
    let noise = config.label_noise;
    let background: Vec<f64> = (0..months)
        .map(|m| {
            if noise > 0.0 {
                ((targets[m] - (1.0 - noise) * rule_mass[m]) / noise).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();

    let horizon = config.horizon();
    let mut stats = GeneratorStats {
        prng: PRNG_NAME.to_string(),
        seed: config.seed,
        jobs: drafts.len(),
        unfinished: 0,
        cancelled: 0,
        node_fail: 0,
        labeled_completed: 0,
        labeled_failed: 0,
        injected_discrepancies: 0,
        not_completed_exit_zero: 0,
        completed_exit_nonzero: 0,
        monthly: Vec::new(),
    };
    let mut month_failed = vec![0usize; months];
    let mut month_labeled = vec![0usize; months];
    let wait_short = Exp::new(1.0 / 20.0).unwrap();
    let wait_long = Exp::new(1.0 / 360.0).unwrap();
    let fail_fast = Exp::new(1.0_f64 / 10.0).unwrap();

    let mut jobs = Vec::with_capacity(drafts.len());
    for (d, &m) in drafts.into_iter().zip(&month_of) {
        let m = m as usize;
        let mut job = d.record;
        let (noise_coin, noise_draw) = if rng.gen::<f64>() < BATCH_OUTCOME_SHARE {
            d.batch_draws
        } else {
            (rng.gen(), rng.gen())
        };
        let failed = if noise_coin < noise {
            noise_draw < background[m]
        } else {
            prone.contains(rules[m], &combo_of(&job))
        };

        let wait = if rng.gen::<f64>() < 0.1 {
            wait_long.sample(&mut rng)
        } else {
            wait_short.sample(&mut rng)
        };
        let start = job.submit_time + Duration::seconds((wait * 60.0) as i64);
        let limit = job.time_limit.map_or(UNLIMITED_RUN_MINUTES, f64::from);
        let mut hit_limit = false;
        let run_minutes = if failed {
            if job.time_limit.is_some() && rng.gen::<f64>() < 0.25 {
                hit_limit = true;
                limit
            } else {
                fail_fast.sample(&mut rng).min(limit)
            }
        } else {
            rng.gen_range(0.05..0.95) * limit
        };
        let end = start + Duration::seconds((run_minutes * 60.0).max(1.0) as i64);

        let exit_code = if failed {
            if rng.gen::<f64>() < 0.8 {
                1
            } else {
                rng.gen_range(2..=255)
            }
        } else {
            0
        };
        let mut state = if !failed {
            OriginalState::Completed
        } else if hit_limit {
            OriginalState::Timeout
        } else if rng.gen::<f64>() < 0.06 {
            OriginalState::OutOfMemory
        } else {
            OriginalState::Failed
        };
        let excluded_draw: f64 = rng.gen();
        if excluded_draw < config.cancelled_rate {
            state = OriginalState::Cancelled;
        } else if excluded_draw < config.cancelled_rate + config.node_fail_rate {
            state = OriginalState::NodeFail;
        }
        let inject = rng.gen::<f64>() < config.discrepancy_rate;
        let replacement = *[
            OriginalState::Failed,
            OriginalState::Timeout,
            OriginalState::Timeout,
            OriginalState::OutOfMemory,
            OriginalState::Preempted,
        ]
        .choose(&mut rng)
        .unwrap();

        if end > horizon {
            stats.unfinished += 1;
            job.start_time = (start <= horizon).then_some(start);
            job.end_time = None;
            job.exit_code = None;
            job.original_state = None;
            jobs.push(job);
            continue;
        }
        if !state.is_excluded() && inject {
            stats.injected_discrepancies += 1;
            state = if exit_code == 0 {
                replacement
            } else {
                OriginalState::Completed
            };
        }
        match state {
            OriginalState::Cancelled => stats.cancelled += 1,
            OriginalState::NodeFail => stats.node_fail += 1,
            _ => {
                month_labeled[m] += 1;
                if failed {
                    stats.labeled_failed += 1;
                    month_failed[m] += 1;
                } else {
                    stats.labeled_completed += 1;
                }
            }
        }
        if exit_code == 0 && state != OriginalState::Completed {
            stats.not_completed_exit_zero += 1;
        }
        if exit_code != 0 && state == OriginalState::Completed {
            stats.completed_exit_nonzero += 1;
        }
        job.start_time = Some(start);
        job.end_time = Some(end);
        job.exit_code = Some(exit_code);
        job.original_state = Some(state);
        jobs.push(job);
    }

    stats.monthly = (0..months)
        .map(|m| MonthStats {
            month: Month::of(config.start + Months::new(m as u32)),
            rule_id: rules[m],
            target_fail_rate: targets[m],
            rule_mass: rule_mass[m],
            labeled_jobs: month_labeled[m],
            failed_jobs: month_failed[m],
            realized_fail_rate: month_failed[m] as f64 / month_labeled[m].max(1) as f64,
        })
        .collect();
    Ok(GeneratedTrace { jobs, stats })
}

fn make_users(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Vec<UserProfile> {
    let n_groups = (config.n_users / 4).max(1);
    (0..config.n_users)
        .map(|u| {
            let group = u % n_groups;
            let mut partitions: Vec<&'static str> = PARTITIONS.to_vec();
            partitions.shuffle(rng);
            partitions.truncate(rng.gen_range(1..=2));
            let mut time_limits = TIME_LIMITS.to_vec();
            time_limits.shuffle(rng);
            time_limits.truncate(rng.gen_range(1..=3));
            UserProfile {
                user_id: 1000 + u,
                group_id: 500 + group,
                account: format!("acct_prj{group:03}"),
                partitions,
                time_limits,
                qos: QOS[rng.gen_range(0..QOS.len())],
                gpu_user: rng.gen::<f64>() < 0.7,
            }
        })
        .collect()
}

fn submit_batches(
    config: &GeneratorConfig,
    users: &[UserProfile],
    rng: &mut ChaCha8Rng,
) -> Vec<Draft> {
    // Heavy-tailed user activity.
    let weights: Vec<f64> = (0..users.len())
        .map(|_| (rng.gen_range(-1.5f64..1.5)).exp())
        .collect();
    let pick_user = WeightedIndex::new(&weights).unwrap();
    let horizon = config.horizon();
    let days = (horizon - config.start).num_days().max(1);
    let batches_per_day = Poisson::new(config.jobs_per_day_mean / config.batch_size_mean).unwrap();
    let extra_size = (config.batch_size_mean > 1.0)
        .then(|| Poisson::new(config.batch_size_mean - 1.0).unwrap());
    let gap = Exp::new(1.0 / 60.0).unwrap();

    let mut drafts = Vec::new();
    let mut batch = 0usize;
    for day in 0..days {
        let day_start = config.start + Duration::days(day);
        let n_batches = batches_per_day.sample(rng) as usize;
        for _ in 0..n_batches {
            batch += 1;
            let user = &users[pick_user.sample(rng)];
            let size = 1 + extra_size.map_or(0, |p| p.sample(rng) as usize);
            let partition = *user.partitions.choose(rng).unwrap();
            let time_limit = *user.time_limits.choose(rng).unwrap();
            let num_nodes = *[1u32, 1, 1, 2, 4].choose(rng).unwrap();
            let serial = partition == "m100_all_serial";
            let (num_nodes, num_cpu, num_gpus) = if serial {
                (1, rng.gen_range(1..=4), 0)
            } else if user.gpu_user {
                (num_nodes, 32 * num_nodes, 4 * num_nodes)
            } else {
                (num_nodes, rng.gen_range(1..=32) * num_nodes, 0)
            };
            let num_tasks_per_socket = (rng.gen::<f64>() < 0.3).then(|| rng.gen_range(1..=16));
            let requested_nodes = if rng.gen::<f64>() < 0.05 {
                (0..num_nodes)
                    .map(|_| format!("r{:03}n{:02}", rng.gen_range(200..260), rng.gen_range(1..20)))
                    .collect()
            } else {
                Vec::new()
            };
            let qos = if rng.gen::<f64>() < 0.9 { user.qos } else { "normal" };
            let mut t = day_start + Duration::seconds(rng.gen_range(0..86_400));
            for i in 0..size {
                if t >= horizon {
                    break;
                }
                drafts.push(Draft {
                    batch,
                    record: JobRecord {
                        job_id: 0,
                        name: format!("job{batch}_{i}"),
                        command: format!("run_job{batch}.sh"),
                        account: user.account.clone(),
                        user_id: user.user_id,
                        dependency: String::new(),
                        group_id: user.group_id,
                        requested_nodes: requested_nodes.clone(),
                        num_tasks_per_socket,
                        partition: partition.to_string(),
                        time_limit,
                        qos: qos.to_string(),
                        num_cpu,
                        num_nodes,
                        num_gpus,
                        submit_time: t,
                        start_time: None,
                        end_time: None,
                        exit_code: None,
                        original_state: None,
                    },
                    batch_draws: (0.0, 0.0),
                });
                t += Duration::seconds(1 + gap.sample(rng) as i64);
            }
            let draws = (rng.gen(), rng.gen());
            for d in drafts.iter_mut().rev().take_while(|d| d.batch == batch) {
                d.batch_draws = draws;
            }
        }
    }
    drafts
}

/// A few batches chain on the previous job of the same batch.
fn add_dependencies(drafts: &mut [Draft], rng: &mut ChaCha8Rng) {
    let mut last_in_batch: HashMap<usize, u64> = HashMap::new();
    for d in drafts.iter_mut() {
        if let Some(&prev) = last_in_batch.get(&d.batch) {
            if d.batch % 10 == 0 && rng.gen::<f64>() < 0.8 {
                d.record.dependency = format!("afterok:{prev}");
            }
        }
        last_in_batch.insert(d.batch, d.record.job_id);
    }
}

type Combo = (u32, String, Option<u32>);

fn combo_of(job: &JobRecord) -> Combo {
    (job.user_id, job.partition.clone(), job.time_limit)
}

fn combo_key(seed: u64, rule: u32, combo: &Combo) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(seed);
    h.write_u32(rule);
    h.write_u32(combo.0);
    h.write(combo.1.as_bytes());
    h.write_u32(combo.2.map_or(u32::MAX, |v| v));
    h.finish()
}

struct ProneSets(BTreeMap<u32, std::collections::HashSet<Combo>>);

impl ProneSets {
    fn contains(&self, rule: u32, combo: &Combo) -> bool {
        self.0.get(&rule).is_some_and(|s| s.contains(combo))
    }
}

/// For each rule, greedily marks combos (in a rule-specific pseudo-random
/// order) until they hold the target failure share of the rule's jobs.
fn failure_prone_combos(
    config: &GeneratorConfig,
    drafts: &[Draft],
    month_of: &[u32],
    rules: &[u32],
) -> ProneSets {
    let mut mass: BTreeMap<u32, BTreeMap<Combo, usize>> = BTreeMap::new();
    for (d, &m) in drafts.iter().zip(month_of) {
        *mass
            .entry(rules[m as usize])
            .or_default()
            .entry(combo_of(&d.record))
            .or_default() += 1;
    }
    let mut sets = BTreeMap::new();
    for (rule, combos) in mass {
        let total: usize = combos.values().sum();
        let target = config.overall_fail_rate * total as f64;
        let mut ordered: Vec<(u64, Combo, usize)> = combos
            .into_iter()
            .map(|(c, n)| (combo_key(config.seed, rule, &c), c, n))
            .collect();
        ordered.sort();
        let mut chosen = std::collections::HashSet::new();
        let mut acc = 0.0;
        for (_, combo, n) in ordered {
            if acc >= target {
                break;
            }
            if acc + n as f64 / 2.0 <= target {
                acc += n as f64;
                chosen.insert(combo);
            }
        }
        sets.insert(rule, chosen);
    }
    ProneSets(sets)
}

/// Monthly failure-rate targets: overall rate plus jitter, with the two
/// months around every rule switch pinned to opposite extremes so the rate
/// visibly jumps at the switch.
fn monthly_targets(config: &GeneratorConfig, rules: &[u32], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rules.len();
    let mut eps: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    for m in 1..n {
        if rules[m] != rules[m - 1] {
            let sign = if eps[m - 1] >= 0.0 { 1.0 } else { -1.0 };
            eps[m - 1] = sign;
            eps[m] = -sign;
        }
    }
    let mean = eps.iter().sum::<f64>() / n as f64;
    eps.iter()
        .map(|e| {
            (config.overall_fail_rate + config.monthly_fail_rate_jitter * (e - mean)).clamp(0.001, 0.999)
        })
        .collect()
}
