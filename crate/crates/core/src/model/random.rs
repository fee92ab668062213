//! Seeded random model generator for benchmarking and property tests.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Block, BlockGraph, BlockKind, Edge, ModelError};

const GAIN_FACTORS: [f64; 6] = [0.5, -0.5, 1.5, -1.0, 2.0, 0.25];
const DELAY_INITIAL: [f64; 3] = [0.0, 1.0, -0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomSpec {
    pub n_blocks: usize,
    pub n_inports: usize,
    pub n_outports: usize,
    pub edge_density: f64,
    #[serde(default = "default_weight_range")]
    pub compute_weight_range: (u64, u64),
    pub seed: u64,
}

fn default_weight_range() -> (u64, u64) {
    (100, 1000)
}

impl RandomSpec {
    pub fn new(n_blocks: usize, n_inports: usize, n_outports: usize, edge_density: f64, seed: u64) -> Self {
        Self {
            n_blocks,
            n_inports,
            n_outports,
            edge_density,
            compute_weight_range: default_weight_range(),
            seed,
        }
    }

    fn check(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InfeasibleSpec(msg.to_string()));
        if self.n_inports < 1 || self.n_outports < 1 {
            return bad("need at least one inport and one outport");
        }
        if self.n_blocks < self.n_inports + self.n_outports {
            return bad("n_blocks is smaller than n_inports + n_outports");
        }
        if !(0.0..=1.0).contains(&self.edge_density) {
            return bad("edge_density must lie in [0, 1]");
        }
        if self.compute_weight_range.0 > self.compute_weight_range.1 {
            return bad("compute_weight_range is empty");
        }
        let inner = self.n_blocks - self.n_inports - self.n_outports;
        if inner == 0 && self.n_outports < self.n_inports {
            return bad("without inner blocks every inport needs its own outport");
        }
        Ok(())
    }

    /// Largest edge count the generator can produce for these counts: every
    /// forward pair into an inner block plus one edge per outport.
    pub fn max_edges(&self) -> usize {
        let i = self.n_inports;
        let o = self.n_outports;
        let m = self.n_blocks.saturating_sub(i + o);
        if m == 0 {
            return o;
        }
        i * m + m * (m - 1) / 2 + o
    }
}

/// Generates a valid model where every inner block lies on some
/// Inport→Outport path.
///
/// Blocks are laid out as inports, inner blocks, outports. Edges only point
/// forward, so the result is acyclic. A spanning skeleton guarantees
/// reachability; extra forward edges are then added until the edge count
/// reaches `round(edge_density * max_edges)` (the skeleton alone may exceed
/// that for small densities). Inner kinds follow from in-degree: a single
/// input yields Gain, Delay or Compute; several inputs yield Sum or Compute.
pub fn generate_random_model(spec: &RandomSpec) -> Result<BlockGraph, ModelError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let i = spec.n_inports;
    let o = spec.n_outports;
    let m = spec.n_blocks - i - o;
    let width = spec.n_blocks.to_string().len();

    let inport_id = |k: usize| format!("in{k:0width$}");
    let inner_id = |k: usize| format!("b{k:0width$}");
    let outport_id = |k: usize| format!("out{k:0width$}");

    // Positions: 0..i are inports, i..i+m inner blocks.
    let mut forward: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut outport_src: Vec<usize> = Vec::with_capacity(o);

    if m == 0 {
        for k in 0..o {
            outport_src.push(if k < i { k } else { rng.gen_range(0..i) });
        }
    } else {
        for j in 0..m {
            let u = rng.gen_range(0..i + j);
            forward.insert((u, i + j));
        }
        for k in 0..i {
            if !forward.iter().any(|&(u, _)| u == k) {
                let v = i + rng.gen_range(0..m);
                forward.insert((k, v));
            }
        }
        for j in 0..m - 1 {
            let p = i + j;
            if !forward.iter().any(|&(u, _)| u == p) {
                let v = i + rng.gen_range(j + 1..m);
                forward.insert((p, v));
            }
        }
        outport_src.push(i + m - 1);
        for _ in 1..o {
            outport_src.push(i + rng.gen_range(0..m));
        }

        let target = (spec.edge_density * spec.max_edges() as f64).round() as usize;
        let have = forward.len() + o;
        if target > have {
            let mut candidates: Vec<(usize, usize)> = (0..m)
                .flat_map(|j| (0..i + j).map(move |u| (u, i + j)))
                .filter(|pair| !forward.contains(pair))
                .collect();
            candidates.shuffle(&mut rng);
            forward.extend(candidates.into_iter().take(target - have));
        }
    }

    let mut indeg = vec![0usize; i + m];
    for &(_, v) in &forward {
        indeg[v] += 1;
    }

    let position_id = |p: usize| if p < i { inport_id(p) } else { inner_id(p - i) };
    let mut blocks = Vec::with_capacity(spec.n_blocks);
    blocks.extend((0..i).map(|k| Block::new(inport_id(k), BlockKind::Inport)));
    let (wmin, wmax) = spec.compute_weight_range;
    for j in 0..m {
        let kind = if indeg[i + j] >= 2 {
            if rng.gen_bool(0.5) {
                BlockKind::Sum
            } else {
                BlockKind::Compute {
                    weight: rng.gen_range(wmin..=wmax),
                }
            }
        } else {
            match rng.gen_range(0..4) {
                0 | 1 => BlockKind::Gain {
                    factor: *GAIN_FACTORS.choose(&mut rng).unwrap(),
                },
                2 => BlockKind::Compute {
                    weight: rng.gen_range(wmin..=wmax),
                },
                _ => BlockKind::Delay {
                    initial: *DELAY_INITIAL.choose(&mut rng).unwrap(),
                },
            }
        };
        blocks.push(Block::new(inner_id(j), kind));
    }
    blocks.extend((0..o).map(|k| Block::new(outport_id(k), BlockKind::Outport)));

    let mut edges = Vec::with_capacity(forward.len() + o);
    let mut next_port = vec![0u32; i + m];
    // BTreeSet iteration is ordered by source position, so ports follow it.
    for &(u, v) in &forward {
        edges.push(Edge::new(position_id(u), position_id(v), next_port[v]));
        next_port[v] += 1;
    }
    for (k, &src) in outport_src.iter().enumerate() {
        edges.push(Edge::new(position_id(src), outport_id(k), 0));
    }

    let name = format!("random_n{}_s{}", spec.n_blocks, spec.seed);
    Ok(BlockGraph::new(name, blocks, edges))
}
