use std::time::Duration;

use blockflow_core::costalloc::{allocate_cores, annotate_costs, fold_allocation_capped, Allocation, CostProfile};
use blockflow_core::model::{BlockGraph, SequentialSim};
use blockflow_core::node::{NodeConfig, Pattern};
use blockflow_core::planner::{build_plan, estimate_makespan_ns, ExecutionPlan, PlanError};
use blockflow_runtime::clock::now_ns;
use blockflow_runtime::{run_node, Bus, NodeHandle, NodeStats, Pinning, Publisher, RunResult, RuntimeError};
use serde::{Deserialize, Serialize};

use crate::stats::{trim_per_side, trimmed_mean};
use crate::{BenchError, Scenario};

/// Fraction of samples averaged: the central 80%.
pub const KEEP_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub scenario: String,
    pub model: String,
    pub cores: usize,
    pub virtual_cores: usize,
    pub pattern: String,
    pub reps: usize,
    pub samples_ns: Vec<u64>,
    pub trimmed_mean_ns: f64,
    /// Samples that entered the trimmed mean.
    pub kept: usize,
    pub min_ns: u64,
    pub max_ns: u64,
    pub mean_ns: f64,
    pub coalesced: u64,
    pub drops: u64,
}

#[derive(Debug, Clone)]
pub struct MeasureConfig {
    pub reps: usize,
    pub warmup: usize,
    pub pinning: Pinning,
    pub gap_ns: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Measurement {
    pub samples_ns: Vec<u64>,
    pub stats: NodeStats,
    /// Every completed run, warmup included, all oracle-checked.
    pub runs: Vec<RunResult>,
    pub estimated_ns: f64,
}

impl Measurement {
    pub fn trimmed_mean_ns(&self) -> Result<f64, BenchError> {
        let s: Vec<f64> = self.samples_ns.iter().map(|&x| x as f64).collect();
        trimmed_mean(&s, KEEP_FRACTION)
    }
}

/// Allocation for `virtual_cores`, folded onto `n_cores`.
pub fn allocate(g: &BlockGraph, p: &CostProfile, n_cores: usize, virtual_cores: usize) -> Result<Allocation, BenchError> {
    let costs = annotate_costs(g, p);
    let a = allocate_cores(g, &costs, p, virtual_cores)?.allocation;
    Ok(fold_allocation_capped(&a, n_cores, p.max_workers_per_core)?)
}

/// Builds the plan for a scenario and measures it.
pub fn run_benchmark(s: &Scenario) -> Result<BenchResult, BenchError> {
    s.validate()?;
    let g = s.model.load()?;
    let p = s.profile.load()?;
    let a = allocate(&g, &p, s.n_cores, s.virtual_cores())?;
    let plan = build_plan(&g, &a)?;
    let m = measure_plan(
        &plan,
        &p,
        &s.pattern,
        &MeasureConfig {
            reps: s.reps,
            warmup: s.warmup,
            pinning: s.pinning.unwrap_or(Pinning::On),
            gap_ns: s.stimulus_gap_ns,
        },
    )
    .map_err(|e| match e {
        BenchError::OracleMismatch(msg) => BenchError::OracleMismatch(format!("{}: {msg}", s.id)),
        other => other,
    })?;

    let n = m.samples_ns.len();
    Ok(BenchResult {
        scenario: s.id.clone(),
        model: g.name.clone(),
        cores: s.n_cores,
        virtual_cores: s.virtual_cores(),
        pattern: s.pattern.label().to_string(),
        reps: s.reps,
        trimmed_mean_ns: m.trimmed_mean_ns()?,
        kept: n - 2 * trim_per_side(n, KEEP_FRACTION),
        min_ns: m.samples_ns.iter().copied().min().unwrap_or(0),
        max_ns: m.samples_ns.iter().copied().max().unwrap_or(0),
        mean_ns: m.samples_ns.iter().sum::<u64>() as f64 / n.max(1) as f64,
        coalesced: m.stats.coalesced_triggers,
        drops: m.stats.queue_drops,
        samples_ns: m.samples_ns,
    })
}

/// Deterministic, finite stimulus value.
fn stimulus(rep: usize, topic: usize) -> f64 {
    ((rep * 31 + topic * 7) % 97) as f64 * 0.5 - 12.0
}

struct Driver<'a> {
    node: &'a NodeHandle,
    pubs: Vec<Publisher>,
    timeout: Duration,
    gap: Duration,
}

impl Driver<'_> {
    fn settle(&self) -> Result<(), BenchError> {
        if self.node.wait_idle(self.timeout) {
            Ok(())
        } else {
            Err(BenchError::Timeout(format!(
                "node did not settle within {:?}: {:?}",
                self.timeout,
                self.node.stats()
            )))
        }
    }

    fn send(&mut self, topic: usize, rep: usize, stamp: Option<u64>) -> Result<(), BenchError> {
        let v = stimulus(rep, topic);
        let p = &mut self.pubs[topic];
        match stamp {
            Some(s) => p.publish_stamped(s, vec![v]),
            None => p.publish(vec![v]),
        }
        .map(drop)
        .map_err(RuntimeError::from)
        .map_err(BenchError::from)
    }
}

/// Runs `warmup + reps` stimulated runs of `plan` and returns the latency
/// of the last `reps`. Every run is checked against the sequential oracle.
pub fn measure_plan(
    plan: &ExecutionPlan,
    profile: &CostProfile,
    pattern: &Pattern,
    cfg: &MeasureConfig,
) -> Result<Measurement, BenchError> {
    if cfg.reps == 0 {
        return Err(BenchError::InvalidScenario("reps must be ≥ 1".into()));
    }
    let g = &plan.model;
    let costs = annotate_costs(g, profile);
    let estimated_ns = estimate_makespan_ns(plan, &costs, profile).map_err(|e| match e {
        PlanError::DeadlockedPlan(at) => BenchError::DeadlockedPlan(at),
        other => other.into(),
    })?;

    let mut nc = NodeConfig::bind_all(pattern.clone(), g);
    if let Pattern::EventTimeSync { queue_size, .. } = pattern {
        nc.queue_depth = nc.queue_depth.max(*queue_size);
    }
    let topics: Vec<String> = nc.input_topics.keys().cloned().collect();
    if let Pattern::EventTrigger { trigger_topic } = pattern {
        if !topics.contains(trigger_topic) {
            return Err(BenchError::InvalidScenario(format!(
                "trigger topic `{trigger_topic}` is not an input; inputs are {topics:?}"
            )));
        }
    }
    let bus = Bus::new();
    let node = run_node(&bus, plan, &nc, profile, cfg.pinning).map_err(|e| match e {
        RuntimeError::PlanDeadlocked(at) => BenchError::DeadlockedPlan(at),
        other => other.into(),
    })?;
    let mut driver = Driver {
        node: &node,
        pubs: topics.iter().map(|t| bus.publisher(t)).collect(),
        timeout: Duration::from_secs(10).max(Duration::from_nanos((estimated_ns * 1000.0) as u64)),
        gap: Duration::from_nanos(cfg.gap_ns.unwrap_or((2.0 * estimated_ns).round() as u64)),
    };
    let total = cfg.warmup + cfg.reps;

    let primed = match pattern {
        Pattern::TimerDriven { period_ns } => {
            for t in 0..topics.len() {
                driver.send(t, 0, None)?;
            }
            let runs_timeout = Duration::from_nanos(period_ns.saturating_mul(total as u64 * 2)) + driver.timeout;
            let before = node.stats().runs;
            if !node.wait_for_runs(before + total as u64, runs_timeout) {
                return Err(BenchError::Timeout(format!("timer node: {:?}", node.stats())));
            }
            before as usize
        }
        Pattern::EventAll => {
            // Latch every input once; the first arrivals see incomplete
            // snapshots and are skipped.
            for t in 0..topics.len() {
                driver.send(t, 0, None)?;
                driver.settle()?;
            }
            let primed = node.stats().runs as usize;
            for rep in 0..total {
                driver.send(rep % topics.len(), rep + 1, None)?;
                driver.settle()?;
                std::thread::sleep(driver.gap);
            }
            primed
        }
        Pattern::EventTrigger { trigger_topic } => {
            let trigger = topics.iter().position(|t| t == trigger_topic).expect("checked above");
            for t in (0..topics.len()).filter(|&t| t != trigger) {
                driver.send(t, 0, None)?;
            }
            driver.settle()?;
            for rep in 0..total {
                driver.send(trigger, rep + 1, None)?;
                driver.settle()?;
                std::thread::sleep(driver.gap);
            }
            0
        }
        Pattern::EventTimeSync { .. } => {
            for rep in 0..total {
                let stamp = now_ns();
                for t in 0..topics.len() {
                    driver.send(t, rep + 1, Some(stamp))?;
                }
                driver.settle()?;
                std::thread::sleep(driver.gap);
            }
            0
        }
    };

    let stats = node.stop();
    let runs = node.results();
    check_oracle(g, &runs)?;
    let start = primed + cfg.warmup;
    if runs.len() < start + cfg.reps {
        return Err(BenchError::InvalidScenario(format!(
            "only {} runs completed, expected {}",
            runs.len(),
            start + cfg.reps
        )));
    }
    let samples_ns = runs[start..start + cfg.reps].iter().map(RunResult::latency_ns).collect();
    Ok(Measurement {
        samples_ns,
        stats,
        runs,
        estimated_ns,
    })
}

/// Replays the consumed snapshots sequentially; any bit difference fails.
pub fn check_oracle(g: &BlockGraph, runs: &[RunResult]) -> Result<(), BenchError> {
    let mut sim = SequentialSim::new(g)?;
    for r in runs {
        let expected = sim.step(&r.snapshot)?;
        for (port, want) in &expected {
            let got = r.outputs.get(port).copied();
            if got.map(f64::to_bits) != Some(want.to_bits()) {
                return Err(BenchError::OracleMismatch(format!(
                    "run {} of `{}`: {port} = {got:?}, sequential execution gives {want:?} (snapshot {:?})",
                    r.run_index, g.name, r.snapshot
                )));
            }
        }
    }
    Ok(())
}
