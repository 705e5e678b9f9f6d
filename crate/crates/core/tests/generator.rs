use chrono::{Months, TimeZone, Utc};
use hfo_core::generator::{generate, DriftPoint, GeneratorConfig};
use hfo_core::trace::{audit_labels, monthly_distribution, relabel, ExitOutcome, OriginalState, Relabeled};

fn large() -> GeneratorConfig {
    GeneratorConfig {
        seed: 11,
        months: 3,
        jobs_per_day_mean: 560.0,
        ..GeneratorConfig::default()
    }
}

#[test]
fn realized_fail_rate_hits_the_target() {
    let trace = generate(&large()).unwrap();
    assert!(trace.jobs.len() >= 50_000, "{} jobs", trace.jobs.len());

    // Recount from the emitted records instead of trusting the bookkeeping.
    let (mut failed, mut labeled) = (0usize, 0usize);
    for job in trace.jobs.iter().filter(|j| j.is_finished()) {
        if let Relabeled::Labeled(l) = relabel(job.clone()).unwrap() {
            labeled += 1;
            failed += usize::from(l.outcome == ExitOutcome::Failed);
        }
    }
    let rate = failed as f64 / labeled as f64;
    assert!((0.10..=0.12).contains(&rate), "fail rate {rate}");
    assert!((trace.stats.realized_fail_rate() - rate).abs() < 1e-12);
}

#[test]
fn audit_agrees_with_generator_bookkeeping() {
    let cfg = GeneratorConfig {
        seed: 3,
        months: 2,
        jobs_per_day_mean: 80.0,
        ..GeneratorConfig::default()
    };
    let trace = generate(&cfg).unwrap();
    let stats = &trace.stats;
    let audit = audit_labels(&trace.jobs).unwrap();
    assert_eq!(audit.total + audit.unfinished, trace.jobs.len());
    assert_eq!(audit.unfinished, stats.unfinished);
    assert_eq!(audit.not_completed_exit_zero, stats.not_completed_exit_zero);
    assert_eq!(audit.completed_exit_nonzero, stats.completed_exit_nonzero);
    assert!(stats.injected_discrepancies > 0);
    let count = |s: OriginalState| audit.by_state.get(&s).map_or(0, |a| a.count);
    assert_eq!(count(OriginalState::Cancelled), stats.cancelled);
    assert_eq!(count(OriginalState::NodeFail), stats.node_fail);

    let labeled: Vec<_> = trace
        .jobs
        .iter()
        .filter(|j| j.is_finished())
        .filter_map(|j| match relabel(j.clone()).unwrap() {
            Relabeled::Labeled(l) => Some(l),
            Relabeled::Excluded(_) => None,
        })
        .collect();
    assert_eq!(labeled.len(), stats.labeled_completed + stats.labeled_failed);
    let monthly = monthly_distribution(&labeled);
    let total: usize = monthly.iter().map(|m| m.completed + m.failed).sum();
    assert_eq!(total, labeled.len());
}

#[test]
fn drift_moves_the_monthly_rate_across_the_switch() {
    let cfg = GeneratorConfig {
        seed: 5,
        months: 5,
        jobs_per_day_mean: 120.0,
        monthly_fail_rate_jitter: 0.02,
        drift_schedule: vec![DriftPoint {
            month_index: 3,
            rule_id: 1,
        }],
        ..GeneratorConfig::default()
    };
    let trace = generate(&cfg).unwrap();
    let months = &trace.stats.monthly;
    assert_eq!(months[2].rule_id, 0);
    assert_eq!(months[3].rule_id, 1);
    let jump = (months[3].realized_fail_rate - months[2].realized_fail_rate).abs();
    assert!(jump >= cfg.monthly_fail_rate_jitter, "jump {jump}");
}

#[test]
fn every_job_falls_inside_the_horizon() {
    let cfg = GeneratorConfig {
        seed: 9,
        months: 2,
        jobs_per_day_mean: 50.0,
        start: Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap(),
        ..GeneratorConfig::default()
    };
    let trace = generate(&cfg).unwrap();
    let horizon = cfg.start + Months::new(2);
    for job in &trace.jobs {
        assert!(job.submit_time >= cfg.start && job.submit_time < horizon);
        assert!(job.end_time.is_none_or(|e| e <= horizon));
        job.validate().unwrap();
    }
    assert!(trace.stats.unfinished > 0, "some jobs should straddle the horizon");
}
