//! Experiment suite: golden files, report invariants, stochastic convergence.

use palmgrip_core::harness::{
    closed_form_success, golden_outputs, render_report, run_suite, HarnessError, ReportFormat,
    ReportSummary, SuiteConfig,
};
use palmgrip_core::model::{builtin_objects, FingerType, Outcome};
use palmgrip_core::sequencer::SequenceStage;
use palmgrip_core::world::{Mode, World};

const GOLDEN_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/golden");

#[test]
fn golden_files_are_byte_identical() {
    for (name, text) in golden_outputs().unwrap() {
        let committed = std::fs::read_to_string(format!("{GOLDEN_DIR}/{name}")).unwrap();
        assert!(
            committed == text,
            "{name} differs; regenerate with `palmgrip golden` and review"
        );
    }
}

#[test]
fn deterministic_runs_repeat_exactly() {
    let a = golden_outputs().unwrap();
    let b = golden_outputs().unwrap();
    assert_eq!(a, b);
}

#[test]
fn histogram_totals_equal_failure_events() {
    let world = World::builtin(Mode::Stochastic);
    let cfg = SuiteConfig {
        repetitions: 40,
        seed: 11,
        ..Default::default()
    };
    let report = run_suite(&world, &cfg).unwrap();
    assert_eq!(report.pairs.len(), 10);
    for pair in &report.pairs {
        assert_eq!(pair.trials.len(), 40);
        let events: u32 = pair
            .trials
            .iter()
            .map(|t| {
                t.stage_outcomes
                    .iter()
                    .filter(|r| r.outcome == Outcome::Failed)
                    .count() as u32
            })
            .sum();
        assert_eq!(pair.stage_failure_histogram.values().sum::<u32>(), events);
        let rate = pair.trials.iter().filter(|t| t.overall_success).count() as f64 / 40.0;
        assert_eq!(pair.overall_success_rate, rate);
    }
}

#[test]
fn suite_is_independent_of_thread_scheduling() {
    let world = World::builtin(Mode::Stochastic);
    let cfg = SuiteConfig {
        repetitions: 50,
        seed: 99,
        ..Default::default()
    };
    let a = run_suite(&world, &cfg).unwrap();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let b = pool.install(|| run_suite(&world, &cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn stochastic_rates_approach_closed_form() {
    // the acceptance gate runs 10^4 repetitions; 2000 keeps this quick with
    // a wider band (3.5 standard errors at p = 0.5 is about 0.04)
    let world = World::builtin(Mode::Stochastic);
    let cfg = SuiteConfig {
        repetitions: 2000,
        seed: 5,
        ..Default::default()
    };
    let report = run_suite(&world, &cfg).unwrap();
    for pair in &report.pairs {
        let expect = closed_form_success(&world, &cfg.plan(&pair.object, pair.finger_type));
        assert!(
            (pair.overall_success_rate - expect).abs() <= 0.04,
            "{} {}: {} vs {expect}",
            pair.object.name,
            pair.finger_type,
            pair.overall_success_rate
        );
    }
}

#[test]
fn retries_raise_closed_form_success() {
    let world = World::builtin(Mode::Stochastic);
    let egg = builtin_objects().into_iter().next().unwrap();
    let base = SuiteConfig::default();
    let once = closed_form_success(&world, &base.plan(&egg, FingerType::Printed));
    let twice = closed_form_success(
        &world,
        &SuiteConfig {
            retries: 2,
            ..base.clone()
        }
        .plan(&egg, FingerType::Printed),
    );
    assert!(twice >= once);
}

#[test]
fn table_lists_objects_in_order_with_masses() {
    let world = World::builtin(Mode::Deterministic);
    let report = run_suite(
        &world,
        &SuiteConfig {
            repetitions: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let table = render_report(&report, ReportFormat::Table).unwrap();
    let header = table.lines().next().unwrap();
    let mut at = 0;
    for label in [
        "styrofoam_egg (1 g)",
        "cylindrical_container (33 g)",
        "glove (40 g)",
        "tape (50 g)",
        "tennis_ball (62 g)",
    ] {
        let pos = header[at..]
            .find(label)
            .unwrap_or_else(|| panic!("{label} in {header}"));
        at += pos + label.len();
    }
}

#[test]
fn csv_round_trip_is_idempotent() {
    let world = World::builtin(Mode::Stochastic);
    let report = run_suite(
        &world,
        &SuiteConfig {
            repetitions: 7,
            seed: 3,
            ..Default::default()
        },
    )
    .unwrap();
    let csv = render_report(&report, ReportFormat::Csv).unwrap();
    let parsed = ReportSummary::parse_csv(&csv).unwrap();
    assert_eq!(parsed.to_csv(), csv);
    assert_eq!(ReportSummary::parse_csv(&parsed.to_csv()).unwrap(), parsed);
}

#[test]
fn json_report_parses_back() {
    let world = World::builtin(Mode::Deterministic);
    let report = run_suite(&world, &SuiteConfig::default()).unwrap();
    let json = render_report(&report, ReportFormat::Json).unwrap();
    let back: palmgrip_core::ExperimentReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, report);
}

#[test]
fn zero_repetitions_rejected() {
    let world = World::builtin(Mode::Deterministic);
    let err = run_suite(
        &world,
        &SuiteConfig {
            repetitions: 0,
            ..Default::default()
        },
    )
    .unwrap_err();
    assert!(matches!(err, HarnessError::ZeroRepetitions));
}

#[test]
fn glove_failures_are_at_rotation() {
    let world = World::builtin(Mode::Deterministic);
    let report = run_suite(&world, &SuiteConfig::default()).unwrap();
    for ft in FingerType::ALL {
        let p = report.pair("glove", ft).unwrap();
        assert_eq!(p.successes(), 0);
        assert_eq!(p.failures_at(SequenceStage::RotatePalm), 5);
    }
}
