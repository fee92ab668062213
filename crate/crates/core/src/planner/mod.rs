//! Per-worker execution plans with explicit channel operations.

mod deadlock;
mod makespan;
mod scaffold;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costalloc::{Allocation, Placement};
use crate::model::{parse_model, serialize_model, topological_order, BlockGraph, BlockKind, ModelError};
use crate::node::NodeConfigError;

pub use deadlock::{check_deadlock_free, DeadlockCheck};
pub use makespan::{estimate_makespan, estimate_makespan_ns};
pub use scaffold::emit_scaffold;

/// A worker lane, `(core, worker)`.
pub type Lane = Placement;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "(StepTag, StepArg)", try_from = "(StepTag, StepArg)")]
pub enum Step {
    Compute(String),
    Send(usize),
    Recv(usize),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum StepTag {
    Compute,
    Send,
    Recv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum StepArg {
    Channel(usize),
    Block(String),
}

impl From<Step> for (StepTag, StepArg) {
    fn from(s: Step) -> Self {
        match s {
            Step::Compute(b) => (StepTag::Compute, StepArg::Block(b)),
            Step::Send(c) => (StepTag::Send, StepArg::Channel(c)),
            Step::Recv(c) => (StepTag::Recv, StepArg::Channel(c)),
        }
    }
}

impl TryFrom<(StepTag, StepArg)> for Step {
    type Error = String;

    fn try_from(v: (StepTag, StepArg)) -> Result<Self, Self::Error> {
        match v {
            (StepTag::Compute, StepArg::Block(b)) => Ok(Step::Compute(b)),
            (StepTag::Send, StepArg::Channel(c)) => Ok(Step::Send(c)),
            (StepTag::Recv, StepArg::Channel(c)) => Ok(Step::Recv(c)),
            (tag, arg) => Err(format!("step {tag:?} cannot take argument {arg:?}")),
        }
    }
}

/// One-way link carrying the value of one cross-worker edge per run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub id: usize,
    /// `(src block, dst block)`.
    pub edge: (String, String),
    pub port: u32,
    pub from: Lane,
    pub to: Lane,
    pub capacity: usize,
}

impl Channel {
    pub fn crosses_cores(&self) -> bool {
        self.from.core != self.to.core
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerPlan {
    pub core: usize,
    pub worker: usize,
    pub steps: Vec<Step>,
}

impl WorkerPlan {
    pub fn lane(&self) -> Lane {
        Lane::new(self.core, self.worker)
    }
}

/// A block moved to another lane so that it shares a worker with the Delay
/// whose state it reads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reassignment {
    pub block: String,
    pub from: Lane,
    pub to: Lane,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionPlan {
    pub model: BlockGraph,
    pub workers: Vec<WorkerPlan>,
    pub channels: Vec<Channel>,
    pub inport_bindings: BTreeMap<String, Lane>,
    pub outport_bindings: BTreeMap<String, Lane>,
    pub reassigned: Vec<Reassignment>,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("allocation does not fit the model: {0}")]
    InvalidAllocation(String),
    #[error("malformed plan: {0}")]
    Malformed(String),
    #[error("plan deadlocks; workers stuck at steps {0:?}")]
    DeadlockedPlan(Vec<usize>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Node(#[from] NodeConfigError),
}

/// Default number of buffered slots per channel.
pub const DEFAULT_CHANNEL_CAPACITY: usize = 1;

/// Co-locates every Delay with the blocks reading its state, transitively.
/// The lane of the smallest Delay id in each group wins.
fn colocate_delays(g: &BlockGraph, lanes: &mut BTreeMap<String, Lane>) -> Vec<Reassignment> {
    let n = g.blocks().len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in g.edges() {
        if !g.is_delay_edge(e) {
            continue;
        }
        let s = g.index_of(&e.src).expect("validated graph");
        let d = g.index_of(&e.dst).expect("validated graph");
        if g.blocks()[d].kind.kind().is_port() {
            continue;
        }
        let (rs, rd) = (find(&mut parent, s), find(&mut parent, d));
        if rs != rd {
            parent[rs.max(rd)] = rs.min(rd);
        }
    }

    let mut target: BTreeMap<usize, Lane> = BTreeMap::new();
    for (i, b) in g.blocks().iter().enumerate() {
        if matches!(b.kind, BlockKind::Delay { .. }) {
            let root = find(&mut parent, i);
            // Blocks are in id order, so the first Delay seen is the smallest.
            target.entry(root).or_insert(lanes[&b.id]);
        }
    }

    let mut moved = Vec::new();
    for (i, b) in g.blocks().iter().enumerate() {
        if b.kind.kind().is_port() {
            continue;
        }
        let root = find(&mut parent, i);
        if let Some(&to) = target.get(&root) {
            let lane = lanes.get_mut(&b.id).expect("every block has a lane");
            if *lane != to {
                moved.push(Reassignment {
                    block: b.id.clone(),
                    from: *lane,
                    to,
                });
                *lane = to;
            }
        }
    }
    moved
}

/// Turns an allocation into per-worker step lists.
///
/// Each worker computes its blocks in global topological order. A value
/// crossing workers travels over its own channel: `Send` right after the
/// producer's `Compute`, `Recv` right before the consumer's. Port blocks
/// take no steps: every worker reads inport values from the run snapshot,
/// and each outport is collected from the worker that produces its input.
pub fn build_plan(g: &BlockGraph, a: &Allocation) -> Result<ExecutionPlan, PlanError> {
    a.check(g, usize::MAX)
        .map_err(|e| PlanError::InvalidAllocation(e.to_string()))?;
    let order = topological_order(g)?;
    let position: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();

    let mut lanes = a.assignment.clone();
    let reassigned = colocate_delays(g, &mut lanes);

    let mut workers: Vec<WorkerPlan> = (0..a.n_cores)
        .flat_map(|core| {
            (0..a.n_workers_per_core[core]).map(move |worker| WorkerPlan {
                core,
                worker,
                steps: Vec::new(),
            })
        })
        .collect();
    let worker_index: BTreeMap<Lane, usize> = workers.iter().enumerate().map(|(i, w)| (w.lane(), i)).collect();

    // Channels, numbered by (producer position, consumer position, port).
    let mut cross: Vec<(usize, usize, u32, &str, &str)> = g
        .edges()
        .iter()
        .filter(|e| !g.is_delay_edge(e))
        .filter(|e| lanes.contains_key(&e.src) && lanes.contains_key(&e.dst))
        .filter(|e| lanes[&e.src] != lanes[&e.dst])
        .map(|e| (position[e.src.as_str()], position[e.dst.as_str()], e.port, e.src.as_str(), e.dst.as_str()))
        .collect();
    cross.sort();
    let channels: Vec<Channel> = cross
        .iter()
        .enumerate()
        .map(|(id, &(_, _, port, src, dst))| Channel {
            id,
            edge: (src.to_string(), dst.to_string()),
            port,
            from: lanes[src],
            to: lanes[dst],
            capacity: DEFAULT_CHANNEL_CAPACITY,
        })
        .collect();

    let mut inbound: BTreeMap<&str, Vec<(u32, usize)>> = BTreeMap::new();
    let mut outbound: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for ch in &channels {
        inbound.entry(ch.edge.1.as_str()).or_default().push((ch.port, ch.id));
        outbound.entry(ch.edge.0.as_str()).or_default().push(ch.id);
    }

    for id in &order {
        let Some(lane) = lanes.get(id) else { continue };
        let steps = &mut workers[worker_index[lane]].steps;
        if let Some(ins) = inbound.get_mut(id.as_str()) {
            ins.sort();
            steps.extend(ins.iter().map(|&(_, c)| Step::Recv(c)));
        }
        steps.push(Step::Compute(id.clone()));
        if let Some(outs) = outbound.get(id.as_str()) {
            steps.extend(outs.iter().map(|&c| Step::Send(c)));
        }
    }

    let first_lane = workers.first().map(WorkerPlan::lane).unwrap_or(Lane::new(0, 0));
    let mut inport_bindings = BTreeMap::new();
    for inport in g.inports() {
        // Bound to the earliest consumer's worker; every worker may read it.
        let lane = g
            .edges()
            .iter()
            .filter(|e| e.src == inport)
            .filter_map(|e| lanes.get(&e.dst).map(|l| (position[e.dst.as_str()], *l)))
            .min()
            .map_or(first_lane, |(_, l)| l);
        inport_bindings.insert(inport.to_string(), lane);
    }
    let mut outport_bindings = BTreeMap::new();
    for e in g.edges() {
        if g.block(&e.dst).map(|b| b.kind == BlockKind::Outport) == Some(true) {
            outport_bindings.insert(e.dst.clone(), lanes.get(&e.src).copied().unwrap_or(first_lane));
        }
    }

    Ok(ExecutionPlan {
        model: g.clone(),
        workers,
        channels,
        inport_bindings,
        outport_bindings,
        reassigned,
    })
}

#[derive(Serialize, Deserialize)]
struct PlanFile {
    workers: Vec<WorkerPlan>,
    channels: Vec<Channel>,
    inport_bindings: BTreeMap<String, Lane>,
    outport_bindings: BTreeMap<String, Lane>,
    #[serde(default)]
    reassigned: Vec<Reassignment>,
    /// The model in its XML form.
    model: String,
}

impl ExecutionPlan {
    pub fn to_json(&self) -> String {
        let file = PlanFile {
            workers: self.workers.clone(),
            channels: self.channels.clone(),
            inport_bindings: self.inport_bindings.clone(),
            outport_bindings: self.outport_bindings.clone(),
            reassigned: self.reassigned.clone(),
            model: serialize_model(&self.model),
        };
        serde_json::to_string_pretty(&file).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let file: PlanFile = serde_json::from_str(text).map_err(|e| PlanError::Malformed(e.to_string()))?;
        let plan = ExecutionPlan {
            model: parse_model(&file.model)?,
            workers: file.workers,
            channels: file.channels,
            inport_bindings: file.inport_bindings,
            outport_bindings: file.outport_bindings,
            reassigned: file.reassigned,
        };
        plan.check_well_formed()?;
        Ok(plan)
    }

    pub fn worker_of(&self, lane: Lane) -> Option<usize> {
        self.workers.iter().position(|w| w.lane() == lane)
    }

    pub fn n_cores(&self) -> usize {
        self.workers.iter().map(|w| w.core + 1).max().unwrap_or(0)
    }

    /// Lane of every block that has a Compute step.
    pub fn block_lanes(&self) -> BTreeMap<&str, Lane> {
        let mut out = BTreeMap::new();
        for w in &self.workers {
            for s in &w.steps {
                if let Step::Compute(b) = s {
                    out.insert(b.as_str(), w.lane());
                }
            }
        }
        out
    }

    /// Structural checks: channel ids index the table, endpoints name real
    /// workers, lanes are unique, and Compute steps name non-port blocks.
    pub fn check_well_formed(&self) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::Malformed(m));
        let mut lanes = BTreeSet::new();
        for w in &self.workers {
            if !lanes.insert(w.lane()) {
                return bad(format!("duplicate worker {:?}", w.lane()));
            }
        }
        for (i, ch) in self.channels.iter().enumerate() {
            if ch.id != i {
                return bad(format!("channel at position {i} has id {}", ch.id));
            }
            if ch.capacity == 0 {
                return bad(format!("channel {i} has zero capacity"));
            }
            if ch.from == ch.to {
                return bad(format!("channel {i} connects a worker to itself"));
            }
            if !lanes.contains(&ch.from) || !lanes.contains(&ch.to) {
                return bad(format!("channel {i} names an unknown worker"));
            }
        }
        let mut computed = BTreeSet::new();
        for w in &self.workers {
            for s in &w.steps {
                match s {
                    Step::Send(c) | Step::Recv(c) if *c >= self.channels.len() => {
                        return bad(format!("step on unknown channel {c}"));
                    }
                    Step::Send(c) if self.channels[*c].from != w.lane() => {
                        return bad(format!("worker {:?} sends on channel {c} it does not own", w.lane()));
                    }
                    Step::Recv(c) if self.channels[*c].to != w.lane() => {
                        return bad(format!("worker {:?} receives on channel {c} it does not own", w.lane()));
                    }
                    Step::Compute(b) => {
                        match self.model.block(b) {
                            Some(blk) if !blk.kind.kind().is_port() => {}
                            _ => return bad(format!("compute step names unknown block `{b}`")),
                        }
                        if !computed.insert(b.as_str()) {
                            return bad(format!("block `{b}` is computed twice"));
                        }
                    }
                    _ => {}
                }
            }
        }
        for (port, lane) in self.inport_bindings.iter().chain(&self.outport_bindings) {
            if !lanes.contains(lane) {
                return bad(format!("`{port}` is bound to unknown worker {lane:?}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Block, Edge};

    pub(crate) fn two_gain_chain() -> BlockGraph {
        BlockGraph::new(
            "m",
            vec![
                Block::new("in", BlockKind::Inport),
                Block::new("A", BlockKind::Gain { factor: 2.0 }),
                Block::new("B", BlockKind::Gain { factor: 3.0 }),
                Block::new("out", BlockKind::Outport),
            ],
            vec![Edge::new("in", "A", 0), Edge::new("A", "B", 0), Edge::new("B", "out", 0)],
        )
    }

    fn alloc(pairs: &[(&str, usize)], n: usize) -> Allocation {
        Allocation::from_cores(pairs.iter().map(|(b, c)| (b.to_string(), *c)).collect(), n)
    }

    #[test]
    fn single_worker_chain() {
        let g = two_gain_chain();
        let plan = build_plan(&g, &alloc(&[("A", 0), ("B", 0)], 1)).unwrap();
        assert_eq!(plan.workers.len(), 1);
        assert_eq!(plan.workers[0].steps, vec![Step::Compute("A".into()), Step::Compute("B".into())]);
        assert!(plan.channels.is_empty());
    }

    #[test]
    fn split_chain_uses_one_channel() {
        let g = two_gain_chain();
        let plan = build_plan(&g, &alloc(&[("A", 0), ("B", 1)], 2)).unwrap();
        assert_eq!(plan.workers[0].steps, vec![Step::Compute("A".into()), Step::Send(0)]);
        assert_eq!(plan.workers[1].steps, vec![Step::Recv(0), Step::Compute("B".into())]);
        assert_eq!(plan.channels.len(), 1);
        assert_eq!(plan.channels[0].edge, ("A".to_string(), "B".to_string()));
        assert_eq!(plan.channels[0].capacity, 1);
        assert_eq!(plan.outport_bindings["out"], Lane::new(1, 0));
        assert_eq!(plan.inport_bindings["in"], Lane::new(0, 0));
    }

    #[test]
    fn delay_consumers_follow_the_delay() {
        // in -> s(Sum) -> d(Delay) -> s ; s -> out
        let g = BlockGraph::new(
            "acc",
            vec![
                Block::new("in", BlockKind::Inport),
                Block::new("s", BlockKind::Sum),
                Block::new("d", BlockKind::Delay { initial: 0.0 }),
                Block::new("out", BlockKind::Outport),
            ],
            vec![
                Edge::new("in", "s", 0),
                Edge::new("d", "s", 1),
                Edge::new("s", "d", 0),
                Edge::new("s", "out", 0),
            ],
        );
        let plan = build_plan(&g, &alloc(&[("s", 0), ("d", 1)], 2)).unwrap();
        assert_eq!(
            plan.reassigned,
            vec![Reassignment {
                block: "s".into(),
                from: Lane::new(0, 0),
                to: Lane::new(1, 0)
            }]
        );
        assert!(plan.channels.is_empty());
        assert!(plan.workers[0].steps.is_empty());
    }

    #[test]
    fn json_round_trip_and_shape() {
        let g = two_gain_chain();
        let plan = build_plan(&g, &alloc(&[("A", 0), ("B", 1)], 2)).unwrap();
        let json = plan.to_json();
        let flat = json.replace(char::is_whitespace, "");
        assert!(flat.contains(r#""steps":[["compute","A"],["send",0]]"#), "{flat}");
        assert!(flat.contains(r#""edge":["A","B"],"port":0,"from":[0,0],"to":[1,0],"capacity":1"#));
        assert_eq!(ExecutionPlan::from_json(&json).unwrap(), plan);
    }

    #[test]
    fn rejects_bad_allocation() {
        let g = two_gain_chain();
        assert!(matches!(
            build_plan(&g, &alloc(&[("A", 0)], 1)),
            Err(PlanError::InvalidAllocation(_))
        ));
    }

    #[test]
    fn malformed_plans_are_caught() {
        let g = two_gain_chain();
        let mut plan = build_plan(&g, &alloc(&[("A", 0), ("B", 1)], 2)).unwrap();
        plan.workers[1].steps.push(Step::Recv(7));
        assert!(plan.check_well_formed().is_err());
        let mut plan = build_plan(&g, &alloc(&[("A", 0), ("B", 1)], 2)).unwrap();
        plan.workers[0].steps.push(Step::Compute("B".into()));
        assert!(plan.check_well_formed().is_err());
    }
}
