use std::collections::BTreeMap;

use blockflow_core::costalloc::{
    allocate_cores, allocation_metrics, annotate_costs, fold_allocation, modeled_makespan, AllocError, Allocation,
    CostMap, CostProfile,
};
use blockflow_core::model::{generate_random_model, topological_order, Block, BlockGraph, BlockKind, Edge, Kind, RandomSpec};
use proptest::prelude::*;

fn gain_profile(cost: u64, comm: u64) -> CostProfile {
    CostProfile {
        cycles_per_kind: [(Kind::Gain, cost)].into_iter().collect(),
        comm_cycles_per_message: comm,
        ..CostProfile::default()
    }
}

fn mixed_profile(comm: u64) -> CostProfile {
    CostProfile {
        cycles_per_kind: [(Kind::Gain, 10), (Kind::Sum, 15), (Kind::Delay, 5), (Kind::Compute, 20)]
            .into_iter()
            .collect(),
        cycles_per_weight_unit: 1,
        comm_cycles_per_message: comm,
        ..CostProfile::default()
    }
}

fn gains(chains: &[&[&str]]) -> BlockGraph {
    let mut blocks = vec![];
    let mut edges = vec![];
    for (k, chain) in chains.iter().enumerate() {
        let inport = format!("in{k}");
        let outport = format!("out{k}");
        blocks.push(Block::new(&inport, BlockKind::Inport));
        blocks.push(Block::new(&outport, BlockKind::Outport));
        let mut prev = inport;
        for b in chain.iter() {
            blocks.push(Block::new(*b, BlockKind::Gain { factor: 1.0 }));
            edges.push(Edge::new(&prev, *b, 0));
            prev = b.to_string();
        }
        edges.push(Edge::new(&prev, &outport, 0));
    }
    BlockGraph::new("gains", blocks, edges)
}

/// Independent oracle: ASAP timeline of a fixed block→core map, visiting
/// blocks in the given order.
fn oracle_makespan(
    g: &BlockGraph,
    costs: &CostMap,
    comm: u64,
    core_of: &BTreeMap<String, usize>,
    order: &[String],
) -> u64 {
    let mut avail: BTreeMap<usize, u64> = BTreeMap::new();
    let mut finish: BTreeMap<String, u64> = BTreeMap::new();
    for id in order.iter().cloned() {
        let Some(&core) = core_of.get(&id) else { continue };
        let mut start = avail.get(&core).copied().unwrap_or(0);
        for e in g.edges().iter().filter(|e| e.dst == id) {
            if let (Some(&pc), Some(&pf)) = (core_of.get(&e.src), finish.get(&e.src)) {
                start = start.max(pf + if pc != core { comm } else { 0 });
            }
        }
        let f = start + costs[&id];
        finish.insert(id, f);
        avail.insert(core, f);
    }
    finish.values().copied().max().unwrap_or(0)
}

fn brute_force_best(g: &BlockGraph, costs: &CostMap, comm: u64, n_cores: usize, order: &[String]) -> u64 {
    let ids: Vec<String> = g.compute_blocks().map(|b| b.id.clone()).collect();
    let combos = n_cores.pow(ids.len() as u32);
    (0..combos)
        .map(|mut code| {
            let core_of: BTreeMap<String, usize> = ids
                .iter()
                .map(|id| {
                    let c = code % n_cores;
                    code /= n_cores;
                    (id.clone(), c)
                })
                .collect();
            oracle_makespan(g, costs, comm, &core_of, order)
        })
        .min()
        .unwrap()
}

#[test]
fn communication_heavy_chain_stays_on_one_core() {
    let g = gains(&[&["a", "b", "c"]]);
    let p = gain_profile(10, 1000);
    let costs = annotate_costs(&g, &p);
    let s = allocate_cores(&g, &costs, &p, 2).unwrap();
    assert!(s.allocation.assignment.values().all(|pl| pl.core == 0));
    assert_eq!(s.makespan, 30);
    assert_eq!(brute_force_best(&g, &costs, 1000, 2, &topological_order(&g).unwrap()), 30);
}

#[test]
fn independent_chains_split_across_cores() {
    let g = gains(&[&["a1", "a2"], &["b1", "b2"]]);
    let p = gain_profile(10, 0);
    let costs = annotate_costs(&g, &p);
    let s = allocate_cores(&g, &costs, &p, 2).unwrap();
    let a = &s.allocation.assignment;
    assert_eq!(a["a1"].core, a["a2"].core);
    assert_eq!(a["b1"].core, a["b2"].core);
    assert_ne!(a["a1"].core, a["b1"].core);
    assert_eq!(s.makespan, 20);
    assert_eq!(brute_force_best(&g, &costs, 0, 2, &topological_order(&g).unwrap()), 20);
    assert_eq!(brute_force_best(&g, &costs, 0, 1, &topological_order(&g).unwrap()), 40);
}

#[test]
fn greedy_matches_brute_force_on_small_graphs() {
    // Replaying the greedy's mapping in its scheduling order must reproduce its
    // makespan. The greedy is a heuristic, so against the exhaustive search we
    // only require that it sits between the optimum and the serial bound.
    for seed in 0..40 {
        let g = generate_random_model(&RandomSpec::new(9, 1, 2, 0.3, seed)).unwrap();
        for comm in [0, 5, 50] {
            let p = mixed_profile(comm);
            let costs = annotate_costs(&g, &p);
            let s = allocate_cores(&g, &costs, &p, 2).unwrap();
            let core_of: BTreeMap<String, usize> =
                s.allocation.assignment.iter().map(|(b, pl)| (b.clone(), pl.core)).collect();
            assert_eq!(oracle_makespan(&g, &costs, comm, &core_of, &s.order), s.makespan, "seed {seed} comm {comm}");
            let best = brute_force_best(&g, &costs, comm, 2, &s.order);
            let serial: u64 = g.compute_blocks().map(|b| costs[&b.id]).sum();
            assert!(best <= s.makespan && s.makespan <= serial);
        }
    }
}

#[test]
fn single_core_puts_everything_on_core_zero() {
    let g = generate_random_model(&RandomSpec::new(30, 2, 2, 0.2, 11)).unwrap();
    let p = mixed_profile(7);
    let s = allocate_cores(&g, &annotate_costs(&g, &p), &p, 1).unwrap();
    assert!(s.allocation.assignment.values().all(|pl| pl.core == 0 && pl.worker == 0));
}

/// Second implementation of the metric formulas.
fn recompute_metrics(g: &BlockGraph, costs: &CostMap, a: &Allocation) -> (f64, usize) {
    let mut loads = vec![0u64; a.n_cores];
    for b in g.compute_blocks() {
        loads[a.assignment[&b.id].core] += costs[&b.id];
    }
    let sum: u64 = loads.iter().sum();
    let imbalance = if sum == 0 {
        1.0
    } else {
        let max = *loads.iter().max().unwrap() as f64;
        max * a.n_cores as f64 / sum as f64
    };
    let mut cross = 0;
    for e in g.edges() {
        let s = a.assignment.get(&e.src).map(|p| p.core);
        let d = a.assignment.get(&e.dst).map(|p| p.core);
        if let (Some(s), Some(d)) = (s, d) {
            if s != d {
                cross += 1;
            }
        }
    }
    (imbalance, cross)
}

#[test]
fn metrics_match_recomputation() {
    for seed in 0..20 {
        let g = generate_random_model(&RandomSpec::new(30, 2, 2, 0.15, seed)).unwrap();
        let p = mixed_profile(3);
        let costs = annotate_costs(&g, &p);
        let a = allocate_cores(&g, &costs, &p, 4).unwrap().allocation;
        let m = allocation_metrics(&g, &costs, &a);
        let (imb, cross) = recompute_metrics(&g, &costs, &a);
        assert!((m.load_imbalance - imb).abs() < 1e-12, "seed {seed}");
        assert_eq!(m.cross_core_edges, cross);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn allocation_invariants(seed in 0u64..10_000, n_cores in 1usize..6, comm in 0u64..200, fold_to in 1usize..4) {
        let g = generate_random_model(&RandomSpec::new(24, 2, 2, 0.2, seed)).unwrap();
        let p = mixed_profile(comm);
        let costs = annotate_costs(&g, &p);
        let s = allocate_cores(&g, &costs, &p, n_cores).unwrap();
        let a = &s.allocation;
        prop_assert!(a.check(&g, 32).is_ok());
        prop_assert_eq!(a.assignment.len(), g.compute_blocks().count());

        // Never worse than running everything on one core.
        let serial: u64 = g.compute_blocks().map(|b| costs[&b.id]).sum();
        prop_assert!(s.makespan <= serial);
        prop_assert_eq!(modeled_makespan(&g, &costs, &p, a).unwrap(), s.makespan);

        // Deterministic.
        let again = allocate_cores(&g, &costs, &p, n_cores).unwrap();
        prop_assert_eq!(&again.allocation, a);

        // Folding keeps blocks grouped exactly as before.
        if fold_to <= n_cores {
            let f = fold_allocation(a, fold_to).unwrap();
            prop_assert!(f.check(&g, 32).is_ok());
            for (x, px) in &a.assignment {
                for (y, py) in &a.assignment {
                    prop_assert_eq!(px == py, f.assignment[x] == f.assignment[y]);
                }
            }
            for c in 0..fold_to {
                prop_assert_eq!(f.n_workers_per_core[c], (n_cores - c).div_ceil(fold_to));
            }
        }
    }

    #[test]
    fn fold_enforces_worker_cap(virtual_cores in 1usize..200, physical in 1usize..8) {
        prop_assume!(virtual_cores >= physical);
        let a = Allocation::from_cores(BTreeMap::new(), virtual_cores);
        match fold_allocation(&a, physical) {
            Ok(f) => {
                prop_assert!(virtual_cores <= 32 * physical);
                prop_assert!(f.n_workers_per_core.iter().all(|&n| n <= 32));
                prop_assert_eq!(f.total_workers(), virtual_cores);
            }
            Err(AllocError::TooManyWorkers { needed, cap }) => {
                prop_assert!(virtual_cores > 32 * physical);
                prop_assert!(needed > cap);
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}
