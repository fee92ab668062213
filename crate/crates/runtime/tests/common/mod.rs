#![allow(dead_code)]

use std::collections::BTreeMap;

use blockflow_core::costalloc::{allocate_cores, annotate_costs, fold_allocation, Allocation, CostProfile};
use blockflow_core::model::{Block, BlockGraph, BlockKind, Edge, Kind, SequentialSim};
use blockflow_core::planner::{build_plan, ExecutionPlan};
use blockflow_runtime::RunResult;

pub fn gain_model() -> BlockGraph {
    BlockGraph::new(
        "gain",
        vec![
            Block::new("in1", BlockKind::Inport),
            Block::new("g", BlockKind::Gain { factor: 2.0 }),
            Block::new("out1", BlockKind::Outport),
        ],
        vec![Edge::new("in1", "g", 0), Edge::new("g", "out1", 0)],
    )
}

/// `in1 * 1 + in2 * 10` through a Sum.
pub fn two_input_model() -> BlockGraph {
    BlockGraph::new(
        "two_in",
        vec![
            Block::new("in1", BlockKind::Inport),
            Block::new("in2", BlockKind::Inport),
            Block::new("g1", BlockKind::Gain { factor: 1.0 }),
            Block::new("g2", BlockKind::Gain { factor: 10.0 }),
            Block::new("s", BlockKind::Sum),
            Block::new("out1", BlockKind::Outport),
        ],
        vec![
            Edge::new("in1", "g1", 0),
            Edge::new("in2", "g2", 0),
            Edge::new("g1", "s", 0),
            Edge::new("g2", "s", 1),
            Edge::new("s", "out1", 0),
        ],
    )
}

/// Every block costs `cycles` at 1 ns per cycle.
pub fn flat_profile(cycles: u64, comm: u64) -> CostProfile {
    CostProfile {
        cycles_per_kind: Kind::ALL.into_iter().map(|k| (k, if k.is_port() { 0 } else { cycles })).collect(),
        cycles_per_weight_unit: 1,
        comm_cycles_per_message: comm,
        ..CostProfile::default()
    }
}

pub fn plan_for(g: &BlockGraph, p: &CostProfile, cores: usize, fold: usize) -> ExecutionPlan {
    let a = if cores * fold == 1 {
        Allocation::sequential(g)
    } else {
        let costs = annotate_costs(g, p);
        let virt = allocate_cores(g, &costs, p, cores * fold).unwrap().allocation;
        fold_allocation(&virt, cores).unwrap()
    };
    build_plan(g, &a).unwrap()
}

/// Replays the consumed snapshots through the sequential simulator and
/// compares every output bit for bit.
pub fn assert_matches_oracle(g: &BlockGraph, results: &[RunResult]) {
    let mut sim = SequentialSim::new(g).unwrap();
    for r in results {
        let expected = sim.step(&r.snapshot).unwrap();
        let got: BTreeMap<&String, u64> = r.outputs.iter().map(|(k, v)| (k, v.to_bits())).collect();
        let want: BTreeMap<&String, u64> = expected.iter().map(|(k, v)| (k, v.to_bits())).collect();
        assert_eq!(got, want, "run {} of `{}`", r.run_index, g.name);
    }
}
