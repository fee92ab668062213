//! Worker threads executing a plan's step lists, one run at a time.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use blockflow_core::costalloc::{annotate_costs, CostProfile};
use blockflow_core::model::{BlockKind, InputMap, OutputMap};
use blockflow_core::planner::{ExecutionPlan, Step};

use crate::clock::{now_ns, sleep_until, spin_for};
use crate::pin::pin_current_thread;

use super::lock;

/// Where a block input comes from during a run.
#[derive(Debug, Clone, Copy)]
enum Src {
    /// Inport value from the run snapshot (indexed by block).
    Snapshot(usize),
    /// Value computed, received, or (for a Delay) restored on this worker.
    Local(usize),
}

#[derive(Debug, Clone)]
enum Op {
    Compute {
        block: usize,
        kind: BlockKind,
        inputs: Vec<Src>,
        spin_ns: u64,
    },
    Send {
        channel: usize,
        value: usize,
        latency_ns: u64,
    },
    Recv {
        channel: usize,
        value: usize,
    },
}

/// A worker's steps resolved to block indices, plus the state it owns.
#[derive(Debug, Clone)]
struct Program {
    core: usize,
    ops: Vec<Op>,
    /// Delay blocks computed here, with their state carried across runs.
    delays: Vec<(usize, f64)>,
    /// Outports collected from this worker.
    outputs: Vec<(String, Src)>,
}

fn compile(plan: &ExecutionPlan, profile: &CostProfile) -> Vec<Program> {
    let g = &plan.model;
    let costs = annotate_costs(g, profile);
    let sources = g.input_sources();
    let src_of = |i: usize| match g.blocks()[i].kind {
        BlockKind::Inport => Src::Snapshot(i),
        _ => Src::Local(i),
    };
    let idx = |id: &str| g.index_of(id).expect("plan blocks exist in its model");

    let mut programs: Vec<Program> = plan
        .workers
        .iter()
        .map(|w| {
            let mut delays = Vec::new();
            let ops = w
                .steps
                .iter()
                .map(|s| match s {
                    Step::Compute(b) => {
                        let block = idx(b);
                        let kind = g.blocks()[block].kind;
                        if let BlockKind::Delay { initial } = kind {
                            delays.push((block, initial));
                        }
                        Op::Compute {
                            block,
                            kind,
                            inputs: sources[block].iter().map(|&s| src_of(s)).collect(),
                            spin_ns: profile.cycles_to_ns(costs.get(b).copied().unwrap_or(0)).round() as u64,
                        }
                    }
                    Step::Send(c) => {
                        let ch = &plan.channels[*c];
                        let latency = if ch.crosses_cores() {
                            profile.cycles_to_ns(profile.comm_cycles_per_message).round() as u64
                        } else {
                            0
                        };
                        Op::Send {
                            channel: *c,
                            value: idx(&ch.edge.0),
                            latency_ns: latency,
                        }
                    }
                    Step::Recv(c) => Op::Recv {
                        channel: *c,
                        value: idx(&plan.channels[*c].edge.0),
                    },
                })
                .collect();
            Program {
                core: w.core,
                ops,
                delays,
                outputs: Vec::new(),
            }
        })
        .collect();

    for (outport, lane) in &plan.outport_bindings {
        let o = idx(outport);
        let (Some(w), Some(&src)) = (plan.worker_of(*lane), sources[o].first()) else {
            continue;
        };
        programs[w].outputs.push((outport.clone(), src_of(src)));
    }
    programs
}

#[derive(Debug, Default)]
struct Slot {
    /// `(value, ready_at_ns)`.
    queue: Mutex<VecDeque<(f64, u64)>>,
    cv: Condvar,
}

/// Everything one run shares between its workers.
#[derive(Debug)]
struct RunCtx {
    snapshot: Vec<f64>,
    channels: Vec<Slot>,
    capacities: Vec<usize>,
    outputs: Mutex<OutputMap>,
    remaining: Mutex<usize>,
    done: Condvar,
}

#[derive(Debug, Default)]
struct Gate {
    epoch: u64,
    ctx: Option<Arc<RunCtx>>,
    shutdown: bool,
}

#[derive(Debug, Default)]
struct Start {
    gate: Mutex<Gate>,
    cv: Condvar,
}

/// Pinned worker threads waiting for start notifications.
pub(super) struct WorkerPool {
    start: Arc<Start>,
    handles: Vec<JoinHandle<()>>,
    n_blocks: usize,
    inports: Vec<(String, usize)>,
    capacities: Vec<usize>,
}

impl WorkerPool {
    /// Spawns one thread per plan worker. Pinning failures are returned as
    /// warnings and leave the thread unpinned.
    pub(super) fn spawn(plan: &ExecutionPlan, profile: &CostProfile, pin: bool) -> (Self, Vec<String>) {
        let start = Arc::new(Start::default());
        let warnings = Arc::new(Mutex::new(Vec::new()));
        let n_blocks = plan.model.blocks().len();
        let handles = compile(plan, profile)
            .into_iter()
            .enumerate()
            .map(|(i, program)| {
                let start = start.clone();
                let warnings = warnings.clone();
                let (ready_tx, ready_rx) = std::sync::mpsc::channel();
                let handle = std::thread::Builder::new()
                    .name(format!("thread{}", i + 1))
                    .spawn(move || {
                        if pin {
                            if let Err(e) = pin_current_thread(program.core) {
                                lock(&warnings).push(format!("thread{}: {e}; running unpinned", i + 1));
                            }
                        }
                        let _ = ready_tx.send(());
                        worker_loop(program, n_blocks, &start);
                    })
                    .expect("spawn worker thread");
                // Wait for pinning to settle so warnings are complete on return.
                let _ = ready_rx.recv();
                handle
            })
            .collect();
        let inports = plan
            .model
            .inports()
            .into_iter()
            .map(|id| (id.to_string(), plan.model.index_of(id).expect("inport exists")))
            .collect();
        let capacities = plan.channels.iter().map(|c| c.capacity).collect();
        let warnings = std::mem::take(&mut *lock(&warnings));
        (
            Self {
                start,
                handles,
                n_blocks,
                inports,
                capacities,
            },
            warnings,
        )
    }

    /// Runs every worker once on `snapshot` and returns the outport values.
    /// The snapshot must hold a value for every inport.
    pub(super) fn run(&self, snapshot: &InputMap) -> OutputMap {
        let mut values = vec![f64::NAN; self.n_blocks];
        for (id, i) in &self.inports {
            values[*i] = snapshot[id];
        }
        let ctx = Arc::new(RunCtx {
            snapshot: values,
            channels: self.capacities.iter().map(|_| Slot::default()).collect(),
            capacities: self.capacities.clone(),
            outputs: Mutex::new(BTreeMap::new()),
            remaining: Mutex::new(self.handles.len()),
            done: Condvar::new(),
        });
        {
            let mut gate = lock(&self.start.gate);
            gate.epoch += 1;
            gate.ctx = Some(ctx.clone());
        }
        self.start.cv.notify_all();

        let remaining = lock(&ctx.remaining);
        drop(ctx.done.wait_while(remaining, |r| *r > 0).unwrap_or_else(|e| e.into_inner()));
        lock(&self.start.gate).ctx = None;
        let outputs = std::mem::take(&mut *lock(&ctx.outputs));
        outputs
    }

    pub(super) fn shutdown(&mut self) {
        lock(&self.start.gate).shutdown = true;
        self.start.cv.notify_all();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }

    pub(super) fn inport_ids(&self) -> impl Iterator<Item = &str> {
        self.inports.iter().map(|(id, _)| id.as_str())
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn worker_loop(mut program: Program, n_blocks: usize, start: &Start) {
    let mut seen = 0;
    let mut local = vec![f64::NAN; n_blocks];
    loop {
        let ctx = {
            let gate = lock(&start.gate);
            let gate = start
                .cv
                .wait_while(gate, |g| g.epoch == seen && !g.shutdown)
                .unwrap_or_else(|e| e.into_inner());
            if gate.epoch == seen {
                return;
            }
            seen = gate.epoch;
            gate.ctx.clone().expect("a started run has a context")
        };
        execute(&mut program, &mut local, &ctx);
        let mut remaining = lock(&ctx.remaining);
        *remaining -= 1;
        if *remaining == 0 {
            ctx.done.notify_all();
        }
    }
}

fn execute(program: &mut Program, local: &mut [f64], ctx: &RunCtx) {
    let read = |local: &[f64], s: Src| match s {
        Src::Snapshot(i) => ctx.snapshot[i],
        Src::Local(i) => local[i],
    };
    // Delay outputs for this run are the state left by the previous one.
    for &(d, state) in &program.delays {
        local[d] = state;
    }
    let mut args = Vec::new();
    for op in &program.ops {
        match op {
            Op::Compute {
                block,
                kind,
                inputs,
                spin_ns,
            } => {
                spin_for(*spin_ns);
                args.clear();
                args.extend(inputs.iter().map(|&s| read(local, s)));
                if let BlockKind::Delay { .. } = kind {
                    let slot = program.delays.iter_mut().find(|(d, _)| d == block).expect("delay registered");
                    slot.1 = args[0];
                } else {
                    local[*block] = kind.apply(&args);
                }
            }
            Op::Send {
                channel,
                value,
                latency_ns,
            } => {
                let slot = &ctx.channels[*channel];
                let cap = ctx.capacities[*channel];
                let q = lock(&slot.queue);
                let mut q = slot.cv.wait_while(q, |q| q.len() >= cap).unwrap_or_else(|e| e.into_inner());
                q.push_back((local[*value], now_ns() + latency_ns));
                drop(q);
                slot.cv.notify_all();
            }
            Op::Recv { channel, value } => {
                let slot = &ctx.channels[*channel];
                let q = lock(&slot.queue);
                let mut q = slot.cv.wait_while(q, |q| q.is_empty()).unwrap_or_else(|e| e.into_inner());
                let (v, ready_at) = q.pop_front().expect("woken with a message");
                drop(q);
                slot.cv.notify_all();
                // Emulated link latency: block this worker only.
                sleep_until(ready_at);
                local[*value] = v;
            }
        }
    }
    let mut outputs = lock(&ctx.outputs);
    for (outport, src) in &program.outputs {
        outputs.insert(outport.clone(), read(local, *src));
    }
}
