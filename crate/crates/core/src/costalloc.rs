//! Block cost annotation and block-to-core allocation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BlockGraph, BlockKind, Kind, ModelError};

/// Upper bound on workers hosted by one core unless a profile overrides it.
pub const DEFAULT_MAX_WORKERS_PER_CORE: usize = 32;

fn default_max_workers() -> usize {
    DEFAULT_MAX_WORKERS_PER_CORE
}

/// Hardware cost table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostProfile {
    pub cycles_per_kind: BTreeMap<Kind, u64>,
    pub cycles_per_weight_unit: u64,
    pub comm_cycles_per_message: u64,
    pub cycle_time_ns: f64,
    #[serde(default = "default_max_workers")]
    pub max_workers_per_core: usize,
    /// Cost of switching a core between two workers in makespan estimates.
    #[serde(default)]
    pub switch_cycles: u64,
}

impl Default for CostProfile {
    fn default() -> Self {
        Self {
            cycles_per_kind: BTreeMap::new(),
            cycles_per_weight_unit: 1,
            comm_cycles_per_message: 0,
            cycle_time_ns: 1.0,
            max_workers_per_core: DEFAULT_MAX_WORKERS_PER_CORE,
            switch_cycles: 0,
        }
    }
}

impl CostProfile {
    pub fn validate(&self) -> Result<(), AllocError> {
        if !(self.cycle_time_ns > 0.0 && self.cycle_time_ns.is_finite()) {
            return Err(AllocError::InvalidProfile("cycle_time_ns must be positive".into()));
        }
        if self.max_workers_per_core == 0 {
            return Err(AllocError::InvalidProfile("max_workers_per_core must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, AllocError> {
        let p: CostProfile = serde_json::from_str(text).map_err(|e| AllocError::InvalidProfile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, AllocError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AllocError::InvalidProfile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn cycles_to_ns(&self, cycles: u64) -> f64 {
        cycles as f64 * self.cycle_time_ns
    }
}

/// Cycle cost per block id.
pub type CostMap = BTreeMap<String, u64>;

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("invalid cost profile: {0}")]
    InvalidProfile(String),
    #[error("core count must be at least 1")]
    NoCores,
    #[error("fold of {virtual_cores} virtual cores onto {physical} cores is not possible")]
    InvalidFold { virtual_cores: usize, physical: usize },
    #[error("folding gives {needed} workers on one core; the limit is {cap}")]
    TooManyWorkers { needed: usize, cap: usize },
    #[error("allocation input has several workers on core {0}; only one-worker-per-core allocations can be folded")]
    NotFoldable(usize),
    #[error("invalid allocation: {0}")]
    InvalidAllocation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Cycle cost of every block, ports included (always 0).
pub fn annotate_costs(g: &BlockGraph, p: &CostProfile) -> CostMap {
    g.blocks()
        .iter()
        .map(|b| {
            let kind = b.kind.kind();
            let cost = if kind.is_port() {
                0
            } else {
                let base = p.cycles_per_kind.get(&kind).copied().unwrap_or(0);
                match b.kind {
                    BlockKind::Compute { weight } => base + weight * p.cycles_per_weight_unit,
                    _ => base,
                }
            };
            (b.id.clone(), cost)
        })
        .collect()
}

/// Core and worker hosting a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct Placement {
    pub core: usize,
    pub worker: usize,
}

impl Placement {
    pub fn new(core: usize, worker: usize) -> Self {
        Self { core, worker }
    }
}

impl From<(usize, usize)> for Placement {
    fn from((core, worker): (usize, usize)) -> Self {
        Self { core, worker }
    }
}

impl From<Placement> for (usize, usize) {
    fn from(p: Placement) -> Self {
        (p.core, p.worker)
    }
}

/// Mapping of every non-port block onto a `(core, worker)` lane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub assignment: BTreeMap<String, Placement>,
    pub n_cores: usize,
    pub n_workers_per_core: Vec<usize>,
}

impl Allocation {
    /// Everything on core 0, worker 0.
    pub fn sequential(g: &BlockGraph) -> Self {
        Self {
            assignment: g
                .compute_blocks()
                .map(|b| (b.id.clone(), Placement::new(0, 0)))
                .collect(),
            n_cores: 1,
            n_workers_per_core: vec![1],
        }
    }

    /// Builds an allocation with one worker per core from a block→core map.
    pub fn from_cores(cores: BTreeMap<String, usize>, n_cores: usize) -> Self {
        Self {
            assignment: cores.into_iter().map(|(b, c)| (b, Placement::new(c, 0))).collect(),
            n_cores,
            n_workers_per_core: vec![1; n_cores],
        }
    }

    pub fn total_workers(&self) -> usize {
        self.n_workers_per_core.iter().sum()
    }

    /// Checks the allocation against a graph and a per-core worker cap.
    pub fn check(&self, g: &BlockGraph, cap: usize) -> Result<(), AllocError> {
        let bad = |m: String| Err(AllocError::InvalidAllocation(m));
        if self.n_cores == 0 || self.n_workers_per_core.len() != self.n_cores {
            return bad("core count does not match worker table".into());
        }
        for (c, &n) in self.n_workers_per_core.iter().enumerate() {
            if n > cap {
                return Err(AllocError::TooManyWorkers { needed: n, cap });
            }
            if n == 0 {
                return bad(format!("core {c} has no workers"));
            }
        }
        for b in g.compute_blocks() {
            let Some(p) = self.assignment.get(&b.id) else {
                return bad(format!("block `{}` is not allocated", b.id));
            };
            if p.core >= self.n_cores || p.worker >= self.n_workers_per_core[p.core] {
                return bad(format!("block `{}` sits on unknown lane {:?}", b.id, p));
            }
        }
        for id in self.assignment.keys() {
            match g.block(id) {
                Some(b) if !b.kind.kind().is_port() => {}
                _ => return bad(format!("`{id}` is not a non-port block of the model")),
            }
        }
        Ok(())
    }

    /// Serializes as `{"block": [core, worker], ...}` sorted by block id.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.assignment).expect("allocation serializes")
    }

    /// Reads the flat JSON form. Core and worker counts are inferred from
    /// the largest ordinals present; cores without blocks get one worker.
    pub fn from_json(text: &str) -> Result<Self, AllocError> {
        let assignment: BTreeMap<String, Placement> =
            serde_json::from_str(text).map_err(|e| AllocError::InvalidAllocation(e.to_string()))?;
        let n_cores = assignment.values().map(|p| p.core + 1).max().unwrap_or(1);
        let mut n_workers_per_core = vec![1; n_cores];
        for p in assignment.values() {
            n_workers_per_core[p.core] = n_workers_per_core[p.core].max(p.worker + 1);
        }
        Ok(Self {
            assignment,
            n_cores,
            n_workers_per_core,
        })
    }
}

/// Indexed view of the non-delay data dependencies between non-port blocks.
struct DepGraph {
    /// Indices of non-port blocks.
    nodes: Vec<usize>,
    preds: Vec<Vec<usize>>,
    /// Successors with `None` standing for an Outport.
    succs: Vec<Vec<Option<usize>>>,
    cost: Vec<u64>,
}

impl DepGraph {
    fn new(g: &BlockGraph, costs: &CostMap) -> Self {
        let n = g.blocks().len();
        let mut preds = vec![Vec::new(); n];
        let mut succs = vec![Vec::new(); n];
        for e in g.edges() {
            if g.is_delay_edge(e) {
                continue;
            }
            let (Some(s), Some(d)) = (g.index_of(&e.src), g.index_of(&e.dst)) else {
                continue;
            };
            let sk = g.blocks()[s].kind.kind();
            let dk = g.blocks()[d].kind.kind();
            if sk.is_port() {
                continue;
            }
            if dk == Kind::Outport {
                succs[s].push(None);
            } else {
                succs[s].push(Some(d));
                preds[d].push(s);
            }
        }
        let cost = g
            .blocks()
            .iter()
            .map(|b| costs.get(&b.id).copied().unwrap_or(0))
            .collect();
        let nodes = (0..n).filter(|&i| !g.blocks()[i].kind.kind().is_port()).collect();
        Self {
            nodes,
            preds,
            succs,
            cost,
        }
    }

    /// Upward rank: own cost plus the longest `comm + rank` over successors.
    fn upward_ranks(&self, g: &BlockGraph, comm: u64) -> Result<Vec<u64>, ModelError> {
        let order = crate::model::topological_order(g)?;
        let mut rank = vec![0u64; g.blocks().len()];
        for id in order.iter().rev() {
            let i = g.index_of(id).expect("topological order names graph blocks");
            if g.blocks()[i].kind.kind().is_port() {
                continue;
            }
            let tail = self.succs[i]
                .iter()
                .map(|s| comm + s.map_or(0, |s| rank[s]))
                .max()
                .unwrap_or(0);
            rank[i] = self.cost[i] + tail;
        }
        Ok(rank)
    }

    /// Priority list: repeatedly the ready block with the highest rank,
    /// ties broken by smaller id (smaller index).
    fn priority_order(&self, rank: &[u64]) -> Vec<usize> {
        let mut remaining: Vec<usize> = self.nodes.clone();
        let mut missing: Vec<usize> = self.preds.iter().map(Vec::len).collect();
        let mut order = Vec::with_capacity(remaining.len());
        while !remaining.is_empty() {
            let (pos, &pick) = remaining
                .iter()
                .enumerate()
                .filter(|(_, &i)| missing[i] == 0)
                .max_by(|(_, &a), (_, &b)| rank[a].cmp(&rank[b]).then(b.cmp(&a)))
                .expect("dependency graph is acyclic");
            remaining.remove(pos);
            order.push(pick);
            for s in self.succs[pick].iter().flatten() {
                missing[*s] -= 1;
            }
        }
        order
    }
}

/// Result of list scheduling, with the modeled timeline.
#[derive(Debug, Clone)]
pub struct ListSchedule {
    pub allocation: Allocation,
    pub makespan: u64,
    /// Block ids in the order they were scheduled.
    pub order: Vec<String>,
}

/// Timeline of a fixed block→core map under the list-scheduling model.
fn simulate(dep: &DepGraph, order: &[usize], core_of: &[usize], n_cores: usize, comm: u64) -> u64 {
    let mut avail = vec![0u64; n_cores];
    let mut finish = vec![0u64; core_of.len()];
    let mut makespan = 0;
    for &b in order {
        let c = core_of[b];
        let ready = dep.preds[b]
            .iter()
            .map(|&p| finish[p] + if core_of[p] != c { comm } else { 0 })
            .max()
            .unwrap_or(0);
        let start = avail[c].max(ready);
        finish[b] = start + dep.cost[b];
        avail[c] = finish[b];
        makespan = makespan.max(finish[b]);
    }
    makespan
}

/// Maps blocks to `n_cores` cores by communication-aware list scheduling.
///
/// Blocks are taken in decreasing upward rank; each goes to the core where it
/// would finish earliest, given that a predecessor on another core delivers
/// its value `comm_cycles_per_message` cycles after finishing. Ties go to the
/// lowest core. If the resulting modeled makespan exceeds the sum of all
/// costs, everything is placed on core 0 instead.
pub fn allocate_cores(
    g: &BlockGraph,
    costs: &CostMap,
    p: &CostProfile,
    n_cores: usize,
) -> Result<ListSchedule, AllocError> {
    if n_cores == 0 {
        return Err(AllocError::NoCores);
    }
    let comm = p.comm_cycles_per_message;
    let dep = DepGraph::new(g, costs);
    let rank = dep.upward_ranks(g, comm)?;
    let order = dep.priority_order(&rank);

    let mut core_of = vec![0usize; g.blocks().len()];
    let mut avail = vec![0u64; n_cores];
    let mut finish = vec![0u64; g.blocks().len()];
    let mut makespan = 0u64;
    for &b in &order {
        let mut best: Option<(u64, usize)> = None;
        for c in 0..n_cores {
            let ready = dep.preds[b]
                .iter()
                .map(|&q| finish[q] + if core_of[q] != c { comm } else { 0 })
                .max()
                .unwrap_or(0);
            let f = avail[c].max(ready) + dep.cost[b];
            if best.is_none_or(|(bf, _)| f < bf) {
                best = Some((f, c));
            }
        }
        let (f, c) = best.expect("at least one core");
        core_of[b] = c;
        finish[b] = f;
        avail[c] = f;
        makespan = makespan.max(f);
    }

    let serial: u64 = dep.nodes.iter().map(|&i| dep.cost[i]).sum();
    if makespan > serial {
        core_of.iter_mut().for_each(|c| *c = 0);
        makespan = serial;
    }

    let cores = dep
        .nodes
        .iter()
        .map(|&i| (g.blocks()[i].id.clone(), core_of[i]))
        .collect();
    Ok(ListSchedule {
        allocation: Allocation::from_cores(cores, n_cores),
        makespan,
        order: order.iter().map(|&i| g.blocks()[i].id.clone()).collect(),
    })
}

/// Modeled makespan of an existing allocation, using the same priority
/// order and timing rule as [`allocate_cores`]. Workers are ignored; only
/// cores serialize work.
pub fn modeled_makespan(
    g: &BlockGraph,
    costs: &CostMap,
    p: &CostProfile,
    a: &Allocation,
) -> Result<u64, AllocError> {
    let dep = DepGraph::new(g, costs);
    let rank = dep.upward_ranks(g, p.comm_cycles_per_message)?;
    let order = dep.priority_order(&rank);
    let mut core_of = vec![0usize; g.blocks().len()];
    for &i in &dep.nodes {
        let id = &g.blocks()[i].id;
        core_of[i] = a
            .assignment
            .get(id)
            .ok_or_else(|| AllocError::InvalidAllocation(format!("block `{id}` is not allocated")))?
            .core;
    }
    Ok(simulate(&dep, &order, &core_of, a.n_cores.max(1), p.comm_cycles_per_message))
}

/// Folds an allocation made for `V` virtual cores onto `n_physical` cores.
///
/// Virtual core `v` becomes worker `v / n_physical` of physical core
/// `v % n_physical`, so core `c` hosts `ceil((V - c) / n_physical)` workers.
pub fn fold_allocation(a: &Allocation, n_physical: usize) -> Result<Allocation, AllocError> {
    fold_allocation_capped(a, n_physical, DEFAULT_MAX_WORKERS_PER_CORE)
}

pub fn fold_allocation_capped(a: &Allocation, n_physical: usize, cap: usize) -> Result<Allocation, AllocError> {
    let v = a.n_cores;
    if n_physical == 0 || v < n_physical {
        return Err(AllocError::InvalidFold {
            virtual_cores: v,
            physical: n_physical,
        });
    }
    if let Some(c) = a.n_workers_per_core.iter().position(|&n| n != 1) {
        return Err(AllocError::NotFoldable(c));
    }
    let needed = v.div_ceil(n_physical);
    if needed > cap {
        return Err(AllocError::TooManyWorkers { needed, cap });
    }
    let assignment = a
        .assignment
        .iter()
        .map(|(b, p)| (b.clone(), Placement::new(p.core % n_physical, p.core / n_physical)))
        .collect();
    let n_workers_per_core = (0..n_physical).map(|c| (v - c).div_ceil(n_physical)).collect();
    Ok(Allocation {
        assignment,
        n_cores: n_physical,
        n_workers_per_core,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationMetrics {
    /// Max core load over mean core load; 1.0 is perfect balance.
    pub load_imbalance: f64,
    pub cross_core_edges: usize,
}

pub fn allocation_metrics(g: &BlockGraph, costs: &CostMap, a: &Allocation) -> AllocationMetrics {
    let mut load = vec![0u64; a.n_cores.max(1)];
    for (b, p) in &a.assignment {
        load[p.core] += costs.get(b).copied().unwrap_or(0);
    }
    let total: u64 = load.iter().sum();
    let load_imbalance = if total == 0 {
        1.0
    } else {
        let mean = total as f64 / load.len() as f64;
        *load.iter().max().unwrap() as f64 / mean
    };
    let cross_core_edges = g
        .edges()
        .iter()
        .filter(|e| match (a.assignment.get(&e.src), a.assignment.get(&e.dst)) {
            (Some(s), Some(d)) => s.core != d.core,
            _ => false,
        })
        .count();
    AllocationMetrics {
        load_imbalance,
        cross_core_edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Block, Edge};

    fn profile(gain: u64, comm: u64) -> CostProfile {
        CostProfile {
            cycles_per_kind: [(Kind::Gain, gain), (Kind::Compute, 5)].into_iter().collect(),
            cycles_per_weight_unit: 2,
            comm_cycles_per_message: comm,
            ..CostProfile::default()
        }
    }

    fn chain(n: usize) -> BlockGraph {
        let mut blocks = vec![Block::new("in", BlockKind::Inport), Block::new("out", BlockKind::Outport)];
        let mut edges = vec![];
        let mut prev = "in".to_string();
        for i in 0..n {
            let id = format!("g{i}");
            blocks.push(Block::new(&id, BlockKind::Gain { factor: 1.0 }));
            edges.push(Edge::new(&prev, &id, 0));
            prev = id;
        }
        edges.push(Edge::new(&prev, "out", 0));
        BlockGraph::new("chain", blocks, edges)
    }

    #[test]
    fn costs_by_kind_and_weight() {
        let g = BlockGraph::new(
            "m",
            vec![
                Block::new("in", BlockKind::Inport),
                Block::new("g", BlockKind::Gain { factor: 1.0 }),
                Block::new("c", BlockKind::Compute { weight: 100 }),
                Block::new("out", BlockKind::Outport),
            ],
            vec![Edge::new("in", "g", 0), Edge::new("g", "c", 0), Edge::new("c", "out", 0)],
        );
        let costs = annotate_costs(&g, &profile(10, 0));
        assert_eq!(costs["g"], 10);
        assert_eq!(costs["c"], 205);
        assert_eq!(costs["in"], 0);
        assert_eq!(costs["out"], 0);

        let zero = CostProfile {
            cycles_per_weight_unit: 0,
            ..CostProfile::default()
        };
        assert!(annotate_costs(&g, &zero).values().all(|&c| c == 0));
    }

    #[test]
    fn single_core_is_sequential() {
        let g = chain(4);
        let p = profile(10, 3);
        let s = allocate_cores(&g, &annotate_costs(&g, &p), &p, 1).unwrap();
        assert!(s.allocation.assignment.values().all(|&pl| pl == Placement::new(0, 0)));
        assert_eq!(s.makespan, 40);
    }

    #[test]
    fn zero_cores_rejected() {
        let g = chain(1);
        let p = profile(1, 0);
        assert_eq!(allocate_cores(&g, &annotate_costs(&g, &p), &p, 0).unwrap_err(), AllocError::NoCores);
    }

    #[test]
    fn fold_four_onto_two() {
        let cores = [("a", 0), ("b", 1), ("c", 2), ("d", 3)]
            .into_iter()
            .map(|(b, c)| (b.to_string(), c))
            .collect();
        let a = Allocation::from_cores(cores, 4);
        let f = fold_allocation(&a, 2).unwrap();
        assert_eq!(f.n_workers_per_core, vec![2, 2]);
        assert_eq!(f.assignment["a"], Placement::new(0, 0));
        assert_eq!(f.assignment["c"], Placement::new(0, 1));
        assert_eq!(f.assignment["b"], Placement::new(1, 0));
        assert_eq!(f.assignment["d"], Placement::new(1, 1));
    }

    #[test]
    fn fold_identity_and_cap() {
        let a = Allocation::from_cores([("a".to_string(), 1)].into_iter().collect(), 2);
        assert_eq!(fold_allocation(&a, 2).unwrap(), a);

        let wide = Allocation::from_cores(BTreeMap::new(), 65);
        assert_eq!(
            fold_allocation(&wide, 2).unwrap_err(),
            AllocError::TooManyWorkers { needed: 33, cap: 32 }
        );
        let f = fold_allocation(&Allocation::from_cores(BTreeMap::new(), 64), 2).unwrap();
        assert_eq!(f.n_workers_per_core, vec![32, 32]);
        let f = fold_allocation(&Allocation::from_cores(BTreeMap::new(), 5), 2).unwrap();
        assert_eq!(f.n_workers_per_core, vec![3, 2]);
        assert!(matches!(fold_allocation(&a, 3), Err(AllocError::InvalidFold { .. })));
        assert!(matches!(fold_allocation(&f, 1), Err(AllocError::NotFoldable(0))));
    }

    #[test]
    fn metrics_for_skewed_allocation() {
        let g = chain(2);
        let p = profile(10, 0);
        let costs = annotate_costs(&g, &p);
        let all_on_zero = Allocation::from_cores(
            [("g0".to_string(), 0), ("g1".to_string(), 0)].into_iter().collect(),
            2,
        );
        let m = allocation_metrics(&g, &costs, &all_on_zero);
        assert_eq!(m.load_imbalance, 2.0);
        assert_eq!(m.cross_core_edges, 0);

        let split = Allocation::from_cores(
            [("g0".to_string(), 0), ("g1".to_string(), 1)].into_iter().collect(),
            2,
        );
        let m = allocation_metrics(&g, &costs, &split);
        assert_eq!(m.load_imbalance, 1.0);
        assert_eq!(m.cross_core_edges, 1);
    }

    #[test]
    fn allocation_json_shape() {
        let a = Allocation::from_cores(
            [("b".to_string(), 1), ("a".to_string(), 0)].into_iter().collect(),
            2,
        );
        let json = a.to_json();
        assert_eq!(json.replace(char::is_whitespace, ""), r#"{"a":[0,0],"b":[1,0]}"#);
        assert_eq!(Allocation::from_json(&json).unwrap(), a);
    }

    #[test]
    fn profile_json() {
        let text = r#"{"cycles_per_kind":{"Gain":10,"Compute":5},"cycles_per_weight_unit":2,
            "comm_cycles_per_message":100,"cycle_time_ns":0.4}"#;
        let p = CostProfile::from_json(text).unwrap();
        assert_eq!(p.cycles_per_kind[&Kind::Gain], 10);
        assert_eq!(p.max_workers_per_core, 32);
        assert_eq!(CostProfile::from_json(&p.to_json()).unwrap(), p);
        assert!(CostProfile::from_json(&text.replace("0.4", "0")).is_err());
    }
}
