//! `blockflow`: every pipeline stage as a subcommand, each producing an
//! inspectable artifact for the next.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use blockflow_bench::{check_oracle, export_results, load_grid, run_benchmark, write_atomic, BenchError};
use blockflow_core::costalloc::{
    allocate_cores, allocation_metrics, annotate_costs, fold_allocation_capped, AllocError, Allocation, CostProfile,
    DEFAULT_MAX_WORKERS_PER_CORE,
};
use blockflow_core::model::{
    generate_random_model, parse_model, serialize_model, validate_graph, BlockGraph, ModelError, RandomSpec,
};
use blockflow_core::node::{NodeConfig, NodeConfigError};
use blockflow_core::planner::{build_plan, emit_scaffold, estimate_makespan_ns, ExecutionPlan, PlanError};
use blockflow_runtime::clock::now_ns;
use blockflow_runtime::{run_node, Bus, Pinning, RuntimeError};
use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Parser, Debug)]
#[command(name = "blockflow", version, about = "Parallelize block-diagram models onto pinned worker threads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and check a model file.
    Validate { model: PathBuf },
    /// Write a seeded random model.
    Generate {
        #[arg(long)]
        blocks: usize,
        #[arg(long, default_value_t = 1)]
        inports: usize,
        #[arg(long, default_value_t = 1)]
        outports: usize,
        #[arg(long, default_value_t = 0.1)]
        density: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        weight_min: u64,
        #[arg(long, default_value_t = 1000)]
        weight_max: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign blocks to cores, optionally folding `--virtual` cores onto `--cores`.
    Allocate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        cores: usize,
        #[arg(long = "virtual")]
        virtual_cores: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn an allocation into per-worker step lists.
    Plan {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        alloc: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the node's pseudo-code scaffold (needs `--node`).
        #[arg(long, requires = "node")]
        scaffold: Option<PathBuf>,
        #[arg(long)]
        node: Option<PathBuf>,
    },
    /// Run a node live, feeding every input topic at a fixed rate.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        node: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        duration_s: f64,
        /// Input publication rate.
        #[arg(long, default_value_t = 20.0)]
        rate_hz: f64,
    },
    /// Run a scenario grid and write one CSV row per scenario.
    Bench {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Node(#[from] NodeConfigError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Bench(#[from] BenchError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn load_model(path: &Path) -> Result<BlockGraph, CliError> {
    Ok(parse_model(&read(path)?)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Validate { model } => validate(&model),
        Command::Generate {
            blocks,
            inports,
            outports,
            density,
            seed,
            weight_min,
            weight_max,
            out,
        } => {
            let spec = RandomSpec {
                compute_weight_range: (weight_min, weight_max),
                ..RandomSpec::new(blocks, inports, outports, density, seed)
            };
            let g = generate_random_model(&spec)?;
            write(&out, &serialize_model(&g))?;
            eprintln!("wrote {} ({} blocks, {} edges)", out.display(), g.blocks().len(), g.edges().len());
            Ok(())
        }
        Command::Allocate {
            model,
            profile,
            cores,
            virtual_cores,
            out,
        } => allocate(&model, &profile, cores, virtual_cores, &out),
        Command::Plan {
            model,
            alloc,
            out,
            scaffold,
            node,
        } => plan(&model, &alloc, &out, scaffold.as_deref(), node.as_deref()),
        Command::Run {
            plan,
            node,
            profile,
            duration_s,
            rate_hz,
        } => run(&plan, &node, &profile, duration_s, rate_hz),
        Command::Bench { grid, out } => bench(&grid, &out),
    }
}

fn validate(path: &Path) -> Result<(), CliError> {
    let g = load_model(path)?;
    let report = validate_graph(&g);
    if !report.is_ok() {
        return Err(ModelError::Invalid(report).into());
    }
    println!(
        "OK: model `{}`: {} blocks ({} inports, {} outports), {} edges",
        g.name,
        g.blocks().len(),
        g.inports().len(),
        g.outports().len(),
        g.edges().len()
    );
    Ok(())
}

fn allocate(model: &Path, profile: &Path, cores: usize, virtual_cores: Option<usize>, out: &Path) -> Result<(), CliError> {
    if cores == 0 {
        return Err(CliError::Usage("--cores must be at least 1".into()));
    }
    let v = virtual_cores.unwrap_or(cores);
    if v < cores {
        return Err(CliError::Usage(format!("--virtual {v} is below --cores {cores}")));
    }
    if v.div_ceil(cores) > DEFAULT_MAX_WORKERS_PER_CORE {
        return Err(CliError::Usage(format!(
            "--virtual {v} on {cores} cores needs {} workers per core; the limit is {DEFAULT_MAX_WORKERS_PER_CORE}",
            v.div_ceil(cores)
        )));
    }
    let g = load_model(model)?;
    let p = CostProfile::load(profile)?;
    let costs = annotate_costs(&g, &p);
    let schedule = allocate_cores(&g, &costs, &p, v)?;
    let a: Allocation = if v == cores {
        schedule.allocation
    } else {
        fold_allocation_capped(&schedule.allocation, cores, p.max_workers_per_core)?
    };
    let m = allocation_metrics(&g, &costs, &a);
    write(out, &a.to_json())?;
    eprintln!(
        "wrote {}: {} cores, workers per core {:?}, modeled makespan {} cycles, load imbalance {:.3}, {} cross-core edges",
        out.display(),
        a.n_cores,
        a.n_workers_per_core,
        schedule.makespan,
        m.load_imbalance,
        m.cross_core_edges
    );
    Ok(())
}

fn plan(model: &Path, alloc: &Path, out: &Path, scaffold: Option<&Path>, node: Option<&Path>) -> Result<(), CliError> {
    let g = load_model(model)?;
    let a = Allocation::from_json(&read(alloc)?)?;
    let plan = build_plan(&g, &a)?;
    let scaffold_text = match (scaffold, node) {
        (Some(_), Some(node)) => Some(emit_scaffold(&plan, &NodeConfig::from_json(&read(node)?)?)?),
        _ => None,
    };
    write(out, &plan.to_json())?;
    if let (Some(path), Some(text)) = (scaffold, scaffold_text) {
        write(path, &text)?;
    }
    for r in &plan.reassigned {
        eprintln!("note: {r:?}");
    }
    eprintln!(
        "wrote {}: {} workers, {} channels",
        out.display(),
        plan.workers.len(),
        plan.channels.len()
    );
    Ok(())
}

fn run(plan: &Path, node: &Path, profile: &Path, duration_s: f64, rate_hz: f64) -> Result<(), CliError> {
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(CliError::Usage("--duration-s must be positive".into()));
    }
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(CliError::Usage("--rate-hz must be positive".into()));
    }
    let plan = ExecutionPlan::from_json(&read(plan)?)?;
    let nc = NodeConfig::from_json(&read(node)?)?;
    let p = CostProfile::load(profile)?;
    let est = estimate_makespan_ns(&plan, &annotate_costs(&plan.model, &p), &p)?;

    let bus = Bus::new();
    let handle = run_node(&bus, &plan, &nc, &p, Pinning::On)?;
    let mut pubs: Vec<_> = nc.input_topics.keys().map(|t| bus.publisher(t)).collect();
    let period = Duration::from_secs_f64(1.0 / rate_hz);
    let start = Instant::now();
    let end = start + Duration::from_secs_f64(duration_s);
    let mut k = 0u64;
    while Instant::now() < end {
        // Same stamp on every topic so time-synchronized nodes match.
        let stamp = now_ns();
        for (i, p) in pubs.iter_mut().enumerate() {
            p.publish_stamped(stamp, vec![(k as f64) * 0.5 + i as f64]).map_err(RuntimeError::from)?;
        }
        k += 1;
        let next = start + period.mul_f64(k as f64);
        std::thread::sleep(next.min(end).saturating_duration_since(Instant::now()));
    }
    handle.wait_idle(Duration::from_secs(5));
    let stats = handle.stop();
    let results = handle.results();
    for w in &stats.warnings {
        eprintln!("warning: {w}");
    }
    check_oracle(&plan.model, &results)?;
    println!("{}", stats.to_json());
    eprintln!(
        "{} runs, all outputs match sequential execution (estimated makespan {:.3} ms)",
        results.len(),
        est / 1e6
    );
    Ok(())
}

fn bench(grid: &Path, out: &Path) -> Result<(), CliError> {
    let scenarios = load_grid(grid)?;
    let mut results = Vec::with_capacity(scenarios.len());
    for s in &scenarios {
        let r = run_benchmark(s)?;
        eprintln!(
            "{}: trimmed mean {:.3} ms over {} of {} samples",
            r.scenario,
            r.trimmed_mean_ns / 1e6,
            r.kept,
            r.reps
        );
        results.push(r);
    }
    export_results(&results, out)?;
    eprintln!("wrote {} ({} rows)", out.display(), results.len());
    Ok(())
}
