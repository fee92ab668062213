//! Built-in reference models used by benchmarks and trend checks.

use std::collections::BTreeMap;

use crate::costalloc::{fold_allocation, Allocation, CostProfile};
use crate::model::{Block, BlockGraph, BlockKind, Edge, Kind};

/// `chains` independent `Inport -> Compute -> Outport` chains sharing one
/// inport. Each Compute block has the given weight.
pub fn parallel_chains(chains: usize, weight: u64) -> BlockGraph {
    let mut blocks = vec![Block::new("in", BlockKind::Inport)];
    let mut edges = Vec::new();
    for k in 0..chains {
        let c = format!("chain{k}");
        let out = format!("out{k}");
        blocks.push(Block::new(&c, BlockKind::Compute { weight }));
        blocks.push(Block::new(&out, BlockKind::Outport));
        edges.push(Edge::new("in", &c, 0));
        edges.push(Edge::new(&c, &out, 0));
    }
    BlockGraph::new(format!("parallel_chains_{chains}"), blocks, edges)
}

/// Four compute-dominated chains.
pub fn four_chain(weight: u64) -> BlockGraph {
    parallel_chains(4, weight)
}

/// Profile where one weight unit costs one cycle of `cycle_time_ns` and all
/// other blocks are free.
pub fn compute_only_profile(cycle_time_ns: f64, comm_cycles: u64) -> CostProfile {
    CostProfile {
        cycles_per_kind: Kind::ALL.into_iter().map(|k| (k, 0)).collect(),
        cycles_per_weight_unit: 1,
        comm_cycles_per_message: comm_cycles,
        cycle_time_ns,
        ..CostProfile::default()
    }
}

/// Weights of the five blocks of [`waiting_time_model`].
#[derive(Debug, Clone, Copy)]
pub struct WaitingTimeWeights {
    pub block1: u64,
    pub block2: u64,
    pub block3: u64,
    pub block4: u64,
    pub block5: u64,
}

impl Default for WaitingTimeWeights {
    /// Cycle counts; with a 1 ns cycle these are 0.2, 0.2, 0.2, 1 and 2 ms.
    fn default() -> Self {
        Self {
            block1: 200_000,
            block2: 200_000,
            block3: 200_000,
            block4: 1_000_000,
            block5: 2_000_000,
        }
    }
}

/// Five blocks where `block4` waits on a value from `block1` while
/// `block5`, placed on the same core, is independent of both.
///
/// ```text
/// in -> block1 -> block2 -> out1
///   \-> block3 -> block4 -> out2      (block1 -> block4 as well)
///   \-> block5 -> out3
/// ```
pub fn waiting_time_model(w: WaitingTimeWeights) -> BlockGraph {
    let blocks = vec![
        Block::new("in", BlockKind::Inport),
        Block::new("block1", BlockKind::Compute { weight: w.block1 }),
        Block::new("block2", BlockKind::Compute { weight: w.block2 }),
        Block::new("block3", BlockKind::Compute { weight: w.block3 }),
        Block::new("block4", BlockKind::Compute { weight: w.block4 }),
        Block::new("block5", BlockKind::Compute { weight: w.block5 }),
        Block::new("out1", BlockKind::Outport),
        Block::new("out2", BlockKind::Outport),
        Block::new("out3", BlockKind::Outport),
    ];
    let edges = vec![
        Edge::new("in", "block1", 0),
        Edge::new("block1", "block2", 0),
        Edge::new("block2", "out1", 0),
        Edge::new("in", "block3", 0),
        Edge::new("block3", "block4", 0),
        Edge::new("block1", "block4", 1),
        Edge::new("block4", "out2", 0),
        Edge::new("in", "block5", 0),
        Edge::new("block5", "out3", 0),
    ];
    BlockGraph::new("waiting_time", blocks, edges)
}

/// Blocks 1–2 on core 0 and blocks 3–5 on core 1, one worker each.
pub fn waiting_time_single_worker() -> Allocation {
    let cores: BTreeMap<String, usize> = [("block1", 0), ("block2", 0), ("block3", 1), ("block4", 1), ("block5", 1)]
        .into_iter()
        .map(|(b, c)| (b.to_string(), c))
        .collect();
    Allocation::from_cores(cores, 2)
}

/// Same cores, but `block5` gets its own worker on core 1. Built by
/// allocating for four virtual cores and folding onto two.
pub fn waiting_time_two_workers() -> Allocation {
    let cores: BTreeMap<String, usize> = [("block1", 0), ("block2", 0), ("block3", 1), ("block4", 1), ("block5", 3)]
        .into_iter()
        .map(|(b, c)| (b.to_string(), c))
        .collect();
    fold_allocation(&Allocation::from_cores(cores, 4), 2).expect("4 virtual cores fold onto 2")
}
