//! Block-diagram models: blocks, edges and the graph that ties them together.

mod exec;
mod random;
mod validate;
mod xml;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exec::{sequential_execute, sequential_execute_series, topological_order, SequentialSim};
pub use random::{generate_random_model, RandomSpec};
pub use validate::{validate_graph, ValidationReport, Violation};
pub use xml::{parse_model, serialize_model};

/// Kind of a block without its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Kind {
    Inport,
    Outport,
    Const,
    Gain,
    Sum,
    Delay,
    Compute,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Inport,
        Kind::Outport,
        Kind::Const,
        Kind::Gain,
        Kind::Sum,
        Kind::Delay,
        Kind::Compute,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Inport => "Inport",
            Kind::Outport => "Outport",
            Kind::Const => "Const",
            Kind::Gain => "Gain",
            Kind::Sum => "Sum",
            Kind::Delay => "Delay",
            Kind::Compute => "Compute",
        }
    }

    pub fn is_port(self) -> bool {
        matches!(self, Kind::Inport | Kind::Outport)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Kind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::UnknownKind(s.to_string()))
    }
}

/// A block together with its kind-specific parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockKind {
    Inport,
    Outport,
    Const { value: f64 },
    Gain { factor: f64 },
    Sum,
    /// Unit delay. `initial` is the state before the first step.
    Delay { initial: f64 },
    /// Synthetic load block; `weight` is its cycle weight.
    Compute { weight: u64 },
}

impl BlockKind {
    pub fn kind(&self) -> Kind {
        match self {
            BlockKind::Inport => Kind::Inport,
            BlockKind::Outport => Kind::Outport,
            BlockKind::Const { .. } => Kind::Const,
            BlockKind::Gain { .. } => Kind::Gain,
            BlockKind::Sum => Kind::Sum,
            BlockKind::Delay { .. } => Kind::Delay,
            BlockKind::Compute { .. } => Kind::Compute,
        }
    }

    /// Output of a stateless block for one step, given its inputs in port order.
    ///
    /// Sum folds left from the first input so that the result does not depend
    /// on an additive identity (keeps the sign of `-0.0`). Inport, Outport and
    /// Delay are driven by the executor and return their first input here.
    pub fn apply(&self, inputs: &[f64]) -> f64 {
        match *self {
            BlockKind::Const { value } => value,
            BlockKind::Gain { factor } => factor * inputs[0],
            BlockKind::Sum => sum_in_order(inputs),
            BlockKind::Compute { weight } => sum_in_order(inputs) + weight as f64 * 1e-9,
            BlockKind::Inport | BlockKind::Outport | BlockKind::Delay { .. } => inputs[0],
        }
    }
}

fn sum_in_order(inputs: &[f64]) -> f64 {
    let (first, rest) = inputs.split_first().expect("block has at least one input");
    rest.iter().fold(*first, |acc, x| acc + x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub id: String,
    pub kind: BlockKind,
}

impl Block {
    pub fn new(id: impl Into<String>, kind: BlockKind) -> Self {
        Self { id: id.into(), kind }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub port: u32,
}

impl Edge {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, port: u32) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            port,
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}:{}", self.src, self.dst, self.port)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("unknown block kind `{0}`")]
    UnknownKind(String),
    #[error("edge {0} references a missing block")]
    DanglingEdge(String),
    #[error("input port {port} of block `{block}` is connected twice")]
    PortConflict { block: String, port: u32 },
    #[error("invalid attribute: {0}")]
    InvalidAttribute(String),
    #[error("model violates {} rule(s): {}", .0.violations.len(), .0)]
    Invalid(ValidationReport),
    #[error("algebraic loop through block `{0}`")]
    CycleDetected(String),
    #[error("no input value supplied for inport `{0}`")]
    MissingInput(String),
    #[error("random spec cannot be satisfied: {0}")]
    InfeasibleSpec(String),
}

/// A block-diagram model.
///
/// Blocks are kept sorted by id and edges by `(src, dst, port)`, so two
/// graphs with the same content compare equal regardless of construction
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGraph {
    pub name: String,
    blocks: Vec<Block>,
    edges: Vec<Edge>,
}

impl BlockGraph {
    /// Builds a graph without checking invariants; see [`validate_graph`].
    pub fn new(name: impl Into<String>, mut blocks: Vec<Block>, mut edges: Vec<Edge>) -> Self {
        blocks.sort_by(|a, b| a.id.cmp(&b.id));
        edges.sort();
        Self {
            name: name.into(),
            blocks,
            edges,
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.blocks.binary_search_by(|b| b.id.as_str().cmp(id)).ok()
    }

    pub fn block(&self, id: &str) -> Option<&Block> {
        self.index_of(id).map(|i| &self.blocks[i])
    }

    pub fn ids_of_kind(&self, kind: Kind) -> impl Iterator<Item = &str> {
        self.blocks
            .iter()
            .filter(move |b| b.kind.kind() == kind)
            .map(|b| b.id.as_str())
    }

    pub fn inports(&self) -> Vec<&str> {
        self.ids_of_kind(Kind::Inport).collect()
    }

    pub fn outports(&self) -> Vec<&str> {
        self.ids_of_kind(Kind::Outport).collect()
    }

    /// True when the edge carries the previous-step value of a Delay block.
    pub fn is_delay_edge(&self, e: &Edge) -> bool {
        matches!(
            self.block(&e.src).map(|b| b.kind.kind()),
            Some(Kind::Delay)
        )
    }

    /// Source block indices feeding each block, ordered by destination port.
    ///
    /// Panics if an edge endpoint is missing; call on validated graphs only.
    pub fn input_sources(&self) -> Vec<Vec<usize>> {
        let mut by_dst: Vec<Vec<(u32, usize)>> = vec![Vec::new(); self.blocks.len()];
        for e in &self.edges {
            let s = self.index_of(&e.src).expect("dangling edge source");
            let d = self.index_of(&e.dst).expect("dangling edge destination");
            by_dst[d].push((e.port, s));
        }
        by_dst
            .into_iter()
            .map(|mut v| {
                v.sort_unstable();
                v.into_iter().map(|(_, s)| s).collect()
            })
            .collect()
    }

    /// Non-port blocks, in id order.
    pub fn compute_blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().filter(|b| !b.kind.kind().is_port())
    }
}

/// Values of every inport for one step, keyed by inport id.
pub type InputMap = BTreeMap<String, f64>;

/// Per-outport values.
pub type OutputMap = BTreeMap<String, f64>;
