use blockflow_bench::{
    export_results, load_grid, measure_plan, results_csv, run_benchmark, trim_per_side, trimmed_mean, BenchError,
    Builtin, MeasureConfig, ModelSource, ProfileSource, Scenario, CSV_HEADER,
};
use blockflow_core::costalloc::{Allocation, CostProfile};
use blockflow_core::model::{Kind, RandomSpec};
use blockflow_core::node::{Pattern, SyncPolicy};
use blockflow_core::planner::{build_plan, Step};
use blockflow_core::reference::{four_chain, waiting_time_model, WaitingTimeWeights};
use blockflow_runtime::Pinning;
use proptest::prelude::*;

fn cheap_profile() -> CostProfile {
    CostProfile {
        cycles_per_kind: Kind::ALL.into_iter().map(|k| (k, 0)).collect(),
        cycles_per_weight_unit: 1,
        comm_cycles_per_message: 1_000,
        ..CostProfile::default()
    }
}

fn scenario(id: &str, pattern: Pattern, reps: usize) -> Scenario {
    Scenario {
        id: id.into(),
        model: ModelSource::Random(RandomSpec::new(12, 2, 2, 0.2, 5)),
        profile: ProfileSource::Inline(cheap_profile()),
        n_cores: 2,
        virtual_cores: Some(4),
        pattern,
        reps,
        warmup: 3,
        pinning: Some(Pinning::Off),
        stimulus_gap_ns: Some(0),
    }
}

#[test]
fn every_pattern_produces_the_requested_samples() {
    let patterns = [
        Pattern::TimerDriven { period_ns: 1_000_000 },
        Pattern::EventAll,
        Pattern::EventTrigger {
            trigger_topic: "in01_topic".into(),
        },
        Pattern::EventTimeSync {
            policy: SyncPolicy::Approximate,
            slop_ns: 1_000,
            queue_size: 4,
        },
    ];
    for p in patterns {
        let r = run_benchmark(&scenario("s", p.clone(), 20)).unwrap_or_else(|e| panic!("{}: {e}", p.label()));
        assert_eq!(r.samples_ns.len(), 20, "{}", p.label());
        assert_eq!(r.kept, 16);
        assert!(r.min_ns as f64 <= r.trimmed_mean_ns && r.trimmed_mean_ns <= r.max_ns as f64);
        assert_eq!(r.pattern, p.label());
    }
}

#[test]
fn unknown_trigger_topic_is_rejected() {
    let s = scenario(
        "t",
        Pattern::EventTrigger {
            trigger_topic: "nope".into(),
        },
        1,
    );
    assert!(matches!(run_benchmark(&s), Err(BenchError::InvalidScenario(_))));
}

#[test]
fn oracle_mismatch_is_reported() {
    let g = four_chain(10);
    let plan = build_plan(&g, &Allocation::sequential(&g)).unwrap();
    let m = measure_plan(
        &plan,
        &cheap_profile(),
        &Pattern::EventAll,
        &MeasureConfig {
            reps: 2,
            warmup: 0,
            pinning: Pinning::Off,
            gap_ns: Some(0),
        },
    )
    .unwrap();
    let mut runs = m.runs.clone();
    blockflow_bench::check_oracle(&g, &runs).unwrap();
    let out = runs[0].outputs.values_mut().next().unwrap();
    *out += 1.0;
    assert!(matches!(
        blockflow_bench::check_oracle(&g, &runs),
        Err(BenchError::OracleMismatch(_))
    ));
}

#[test]
fn deadlocked_plan_is_reported() {
    let g = waiting_time_model(WaitingTimeWeights::default());
    let mut plan = build_plan(&g, &blockflow_core::reference::waiting_time_two_workers()).unwrap();
    // Move the receive onto the sending worker, ahead of its own send.
    for w in &mut plan.workers {
        w.steps.retain(|s| !matches!(s, Step::Recv(_)));
        if let Some(i) = w.steps.iter().position(|s| matches!(s, Step::Send(_))) {
            w.steps.insert(i, Step::Recv(0));
        }
    }
    let r = measure_plan(
        &plan,
        &cheap_profile(),
        &Pattern::EventAll,
        &MeasureConfig {
            reps: 1,
            warmup: 0,
            pinning: Pinning::Off,
            gap_ns: None,
        },
    );
    assert!(matches!(r, Err(BenchError::DeadlockedPlan(_))), "{r:?}");
}

#[test]
fn csv_rows_are_sorted_and_written_atomically() {
    let a = run_benchmark(&scenario("b", Pattern::EventAll, 5)).unwrap();
    let b = run_benchmark(&scenario("a", Pattern::EventAll, 5)).unwrap();
    let text = results_csv(&[a.clone(), b.clone()]).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
    assert!(lines.next().unwrap().starts_with("a,"));
    assert!(lines.next().unwrap().starts_with("b,"));
    assert!(lines.next().is_none());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    export_results(&[a, b], &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 1, "temp file left behind: {names:?}");

    assert_eq!(export_results(&[], &dir.path().join("empty.csv")), Err(BenchError::EmptyInput));
    assert!(!dir.path().join("empty.csv").exists());
}

#[test]
fn grid_paths_resolve_against_the_grid_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("m")).unwrap();
    std::fs::write(
        dir.path().join("m/model.xml"),
        blockflow_core::model::serialize_model(&four_chain(5)),
    )
    .unwrap();
    std::fs::write(dir.path().join("m/profile.json"), cheap_profile().to_json()).unwrap();
    let grid = serde_json::json!({"scenarios": [{
        "id": "file",
        "model": {"file": "m/model.xml"},
        "profile": "m/profile.json",
        "n_cores": 1,
        "pattern": "event_all",
        "reps": 3,
        "warmup": 0,
        "pinning": "off"
    }]});
    let path = dir.path().join("grid.json");
    std::fs::write(&path, grid.to_string()).unwrap();
    let scenarios = load_grid(&path).unwrap();
    let r = run_benchmark(&scenarios[0]).unwrap();
    assert_eq!(r.samples_ns.len(), 3);
    assert_eq!(r.model, four_chain(5).name);

    std::fs::write(&path, r#"[{"id": "x"}]"#).unwrap();
    assert!(matches!(load_grid(&path), Err(BenchError::InvalidScenario(_))));
}

#[test]
fn builtin_models_load() {
    for b in [
        Builtin::FourChain { weight: 3 },
        Builtin::ParallelChains { chains: 3, weight: 3 },
        Builtin::WaitingTime,
    ] {
        ModelSource::Builtin(b).load().unwrap();
    }
}

/// Independent trimmed mean: with an 80% keep fraction exactly `n / 10`
/// samples go from each end (integer arithmetic, no floats involved).
fn oracle_trimmed_mean_80(samples: &[u32]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_unstable();
    let k = s.len() / 10;
    let kept = &s[k..s.len() - k];
    kept.iter().map(|&x| x as u64).sum::<u64>() as f64 / kept.len() as f64
}

proptest! {
    #[test]
    fn trimmed_mean_matches_integer_oracle(samples in prop::collection::vec(0u32..1_000_000, 1..400)) {
        let f: Vec<f64> = samples.iter().map(|&x| f64::from(x)).collect();
        let got = trimmed_mean(&f, 0.8).unwrap();
        let want = oracle_trimmed_mean_80(&samples);
        prop_assert!((got - want).abs() <= want.abs() * 1e-12, "{got} vs {want}");
        prop_assert_eq!(trim_per_side(samples.len(), 0.8), samples.len() / 10);
    }

    #[test]
    fn trimmed_mean_is_order_independent(mut samples in prop::collection::vec(-1e6f64..1e6, 1..100)) {
        let a = trimmed_mean(&samples, 0.8).unwrap();
        samples.reverse();
        prop_assert_eq!(a.to_bits(), trimmed_mean(&samples, 0.8).unwrap().to_bits());
    }
}
