//! Topological ordering and the single-worker reference executor.

use std::collections::{BTreeMap, BTreeSet};

use super::validate::find_algebraic_loop;
use super::{BlockGraph, BlockKind, InputMap, ModelError, OutputMap};

/// Block indices in evaluation order.
///
/// Edges leaving a Delay block are ignored (they carry last step's state).
/// Among ready blocks the smallest id goes first.
pub(crate) fn topo_indices(g: &BlockGraph) -> Result<Vec<usize>, ModelError> {
    let n = g.blocks.len();
    let mut indeg = vec![0usize; n];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &g.edges {
        let (Some(s), Some(d)) = (g.index_of(&e.src), g.index_of(&e.dst)) else {
            return Err(ModelError::DanglingEdge(e.to_string()));
        };
        if matches!(g.blocks[s].kind, BlockKind::Delay { .. }) {
            continue;
        }
        indeg[d] += 1;
        succ[s].push(d);
    }
    // Blocks are sorted by id, so index order is id order.
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &d in &succ[i] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                ready.insert(d);
            }
        }
    }
    if order.len() != n {
        let culprit = find_algebraic_loop(g).unwrap_or_default();
        return Err(ModelError::CycleDetected(culprit));
    }
    Ok(order)
}

pub fn topological_order(g: &BlockGraph) -> Result<Vec<String>, ModelError> {
    Ok(topo_indices(g)?
        .into_iter()
        .map(|i| g.blocks[i].id.clone())
        .collect())
}

/// Steps a model one sample at a time on a single thread.
///
/// This is the reference semantics every parallel execution is checked
/// against.
#[derive(Debug, Clone)]
pub struct SequentialSim<'g> {
    graph: &'g BlockGraph,
    order: Vec<usize>,
    sources: Vec<Vec<usize>>,
    state: Vec<f64>,
    values: Vec<f64>,
}

impl<'g> SequentialSim<'g> {
    pub fn new(graph: &'g BlockGraph) -> Result<Self, ModelError> {
        let order = topo_indices(graph)?;
        let state = graph
            .blocks
            .iter()
            .map(|b| match b.kind {
                BlockKind::Delay { initial } => initial,
                _ => 0.0,
            })
            .collect();
        Ok(Self {
            graph,
            order,
            sources: graph.input_sources(),
            state,
            values: vec![0.0; graph.blocks.len()],
        })
    }

    /// Evaluates one step and returns the value recorded by each outport.
    pub fn step(&mut self, inputs: &InputMap) -> Result<OutputMap, ModelError> {
        let blocks = &self.graph.blocks;
        for (i, b) in blocks.iter().enumerate() {
            match b.kind {
                BlockKind::Inport => {
                    self.values[i] = *inputs
                        .get(&b.id)
                        .ok_or_else(|| ModelError::MissingInput(b.id.clone()))?;
                }
                BlockKind::Delay { .. } => self.values[i] = self.state[i],
                _ => {}
            }
        }

        let mut args = Vec::new();
        let mut outputs = BTreeMap::new();
        for &i in &self.order {
            args.clear();
            args.extend(self.sources[i].iter().map(|&s| self.values[s]));
            match blocks[i].kind {
                BlockKind::Inport => {}
                BlockKind::Delay { .. } => self.state[i] = args[0],
                BlockKind::Outport => {
                    self.values[i] = args[0];
                    outputs.insert(blocks[i].id.clone(), args[0]);
                }
                kind => self.values[i] = kind.apply(&args),
            }
        }
        Ok(outputs)
    }
}

/// Runs the model for `steps` steps with constant inputs and returns the
/// time series recorded by each outport.
pub fn sequential_execute(
    g: &BlockGraph,
    inputs: &InputMap,
    steps: usize,
) -> Result<BTreeMap<String, Vec<f64>>, ModelError> {
    let series = vec![inputs.clone(); steps];
    sequential_execute_series(g, &series)
}

/// Like [`sequential_execute`] but with a distinct input map per step.
pub fn sequential_execute_series(
    g: &BlockGraph,
    inputs: &[InputMap],
) -> Result<BTreeMap<String, Vec<f64>>, ModelError> {
    let mut sim = SequentialSim::new(g)?;
    let mut out: BTreeMap<String, Vec<f64>> = g
        .outports()
        .into_iter()
        .map(|id| (id.to_string(), Vec::with_capacity(inputs.len())))
        .collect();
    for step in inputs {
        for (id, v) in sim.step(step)? {
            out.entry(id).or_default().push(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Block, Edge};

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn gain(id: &str, k: f64) -> Block {
        Block::new(id, BlockKind::Gain { factor: k })
    }

    #[test]
    fn chain_order() {
        let g = BlockGraph::new(
            "m",
            vec![
                Block::new("A", BlockKind::Inport),
                gain("B", 1.0),
                Block::new("C", BlockKind::Outport),
            ],
            vec![Edge::new("A", "B", 0), Edge::new("B", "C", 0)],
        );
        assert_eq!(topological_order(&g).unwrap(), ids(&["A", "B", "C"]));
    }

    #[test]
    fn diamond_breaks_ties_by_id() {
        let g = BlockGraph::new(
            "m",
            vec![
                Block::new("A", BlockKind::Inport),
                gain("C", 1.0),
                gain("B", 1.0),
                Block::new("D", BlockKind::Sum),
            ],
            vec![
                Edge::new("A", "C", 0),
                Edge::new("A", "B", 0),
                Edge::new("B", "D", 0),
                Edge::new("C", "D", 1),
            ],
        );
        assert_eq!(topological_order(&g).unwrap(), ids(&["A", "B", "C", "D"]));
    }

    #[test]
    fn cycle_detected() {
        let g = BlockGraph::new(
            "m",
            vec![gain("a", 1.0), gain("b", 1.0)],
            vec![Edge::new("a", "b", 0), Edge::new("b", "a", 0)],
        );
        assert!(matches!(topological_order(&g), Err(ModelError::CycleDetected(_))));
    }

    fn inputs(pairs: &[(&str, f64)]) -> InputMap {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn gain_step() {
        let g = BlockGraph::new(
            "m",
            vec![
                Block::new("x", BlockKind::Inport),
                gain("g", 2.0),
                Block::new("y", BlockKind::Outport),
            ],
            vec![Edge::new("x", "g", 0), Edge::new("g", "y", 0)],
        );
        let out = sequential_execute(&g, &inputs(&[("x", 3.0)]), 1).unwrap();
        assert_eq!(out["y"], vec![6.0]);
    }

    #[test]
    fn unit_delay() {
        let g = BlockGraph::new(
            "m",
            vec![
                Block::new("x", BlockKind::Inport),
                Block::new("d", BlockKind::Delay { initial: 0.0 }),
                Block::new("y", BlockKind::Outport),
            ],
            vec![Edge::new("x", "d", 0), Edge::new("d", "y", 0)],
        );
        let out = sequential_execute(&g, &inputs(&[("x", 1.0)]), 2).unwrap();
        assert_eq!(out["y"], vec![0.0, 1.0]);
    }

    #[test]
    fn sum_of_const_and_negated_input() {
        let g = BlockGraph::new(
            "m",
            vec![
                Block::new("x", BlockKind::Inport),
                Block::new("c", BlockKind::Const { value: 1.5 }),
                gain("g", -1.0),
                Block::new("s", BlockKind::Sum),
                Block::new("y", BlockKind::Outport),
            ],
            vec![
                Edge::new("x", "g", 0),
                Edge::new("c", "s", 0),
                Edge::new("g", "s", 1),
                Edge::new("s", "y", 0),
            ],
        );
        let out = sequential_execute(&g, &inputs(&[("x", 2.0)]), 1).unwrap();
        assert_eq!(out["y"], vec![-0.5]);
    }

    #[test]
    fn feedback_through_delay_accumulates() {
        // y[n] = x + y[n-1]
        let g = BlockGraph::new(
            "acc",
            vec![
                Block::new("x", BlockKind::Inport),
                Block::new("s", BlockKind::Sum),
                Block::new("d", BlockKind::Delay { initial: 0.0 }),
                Block::new("y", BlockKind::Outport),
            ],
            vec![
                Edge::new("x", "s", 0),
                Edge::new("d", "s", 1),
                Edge::new("s", "d", 0),
                Edge::new("s", "y", 0),
            ],
        );
        let out = sequential_execute(&g, &inputs(&[("x", 1.0)]), 4).unwrap();
        assert_eq!(out["y"], vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn compute_adds_weight() {
        let g = BlockGraph::new(
            "m",
            vec![
                Block::new("x", BlockKind::Inport),
                Block::new("c", BlockKind::Compute { weight: 1000 }),
                Block::new("y", BlockKind::Outport),
            ],
            vec![Edge::new("x", "c", 0), Edge::new("c", "y", 0)],
        );
        let out = sequential_execute(&g, &inputs(&[("x", 1.0)]), 1).unwrap();
        assert_eq!(out["y"], vec![1.0 + 1000.0 * 1e-9]);
    }

    #[test]
    fn missing_input() {
        let g = BlockGraph::new(
            "m",
            vec![
                Block::new("x", BlockKind::Inport),
                Block::new("y", BlockKind::Outport),
            ],
            vec![Edge::new("x", "y", 0)],
        );
        assert_eq!(
            sequential_execute(&g, &InputMap::new(), 1),
            Err(ModelError::MissingInput("x".into()))
        );
    }
}
