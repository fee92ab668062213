use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{BlockGraph, BlockKind, Kind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Block id, or `src->dst:port` for edges.
    pub subject: String,
    pub rule: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }

    fn push(&mut self, subject: impl Into<String>, rule: impl Into<String>) {
        self.violations.push(Violation {
            subject: subject.into(),
            rule: rule.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.subject, v.rule)?;
        }
        Ok(())
    }
}

/// Checks every structural rule of a model and reports all violations found.
pub fn validate_graph(g: &BlockGraph) -> ValidationReport {
    let mut report = ValidationReport::default();

    for pair in g.blocks.windows(2) {
        if pair[0].id == pair[1].id {
            report.push(&pair[0].id, "duplicate block id");
        }
    }

    let mut in_deg: BTreeMap<&str, usize> = BTreeMap::new();
    let mut out_deg: BTreeMap<&str, usize> = BTreeMap::new();
    let mut ports = BTreeSet::new();
    for e in &g.edges {
        let src = g.block(&e.src);
        let dst = g.block(&e.dst);
        if src.is_none() || dst.is_none() {
            report.push(e.to_string(), "dangling edge");
            continue;
        }
        if !ports.insert((e.dst.as_str(), e.port)) {
            report.push(e.to_string(), "duplicate input port");
        }
        if e.src == e.dst && src.map(|b| b.kind.kind()) != Some(Kind::Delay) {
            report.push(e.to_string(), "self loop");
        }
        *out_deg.entry(&e.src).or_default() += 1;
        *in_deg.entry(&e.dst).or_default() += 1;
    }

    for b in &g.blocks {
        let ins = in_deg.get(b.id.as_str()).copied().unwrap_or(0);
        let outs = out_deg.get(b.id.as_str()).copied().unwrap_or(0);
        let id = b.id.as_str();
        match b.kind {
            BlockKind::Inport => {
                if ins != 0 {
                    report.push(id, "Inport takes no inputs");
                }
                if outs == 0 {
                    report.push(id, "Inport requires ≥1 output");
                }
            }
            BlockKind::Outport => {
                if ins != 1 {
                    report.push(id, "Outport requires exactly 1 input");
                }
                if outs != 0 {
                    report.push(id, "Outport has no outputs");
                }
            }
            BlockKind::Const { value } => {
                if ins != 0 {
                    report.push(id, "Const takes no inputs");
                }
                if !value.is_finite() {
                    report.push(id, "non-finite parameter");
                }
            }
            BlockKind::Gain { factor } => {
                if ins != 1 {
                    report.push(id, "Gain requires exactly 1 input");
                }
                if !factor.is_finite() {
                    report.push(id, "non-finite parameter");
                }
            }
            BlockKind::Delay { initial } => {
                if ins != 1 {
                    report.push(id, "Delay requires exactly 1 input");
                }
                if !initial.is_finite() {
                    report.push(id, "non-finite parameter");
                }
            }
            BlockKind::Sum => {
                if ins < 2 {
                    report.push(id, "Sum requires ≥2 inputs");
                }
            }
            BlockKind::Compute { .. } => {
                if ins < 1 {
                    report.push(id, "Compute requires ≥1 input");
                }
            }
        }
    }

    if let Some(block) = find_algebraic_loop(g) {
        report.push(block, "algebraic loop");
    }
    report
}

/// Returns a block on a cycle of non-delay edges, if one exists.
pub(super) fn find_algebraic_loop(g: &BlockGraph) -> Option<String> {
    let n = g.blocks.len();
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &g.edges {
        let (Some(s), Some(d)) = (g.index_of(&e.src), g.index_of(&e.dst)) else {
            continue;
        };
        if matches!(g.blocks[s].kind, BlockKind::Delay { .. }) {
            continue;
        }
        succ[s].push(d);
    }

    // Iterative DFS with white/grey/black colouring.
    let mut color = vec![0u8; n];
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        color[root] = 1;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if let Some(&child) = succ[node].get(*next) {
                *next += 1;
                match color[child] {
                    0 => {
                        color[child] = 1;
                        stack.push((child, 0));
                    }
                    1 => return Some(g.blocks[child].id.clone()),
                    _ => {}
                }
            } else {
                color[node] = 2;
                stack.pop();
            }
        }
    }
    None
}
