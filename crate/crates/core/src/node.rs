//! Node configuration: activation pattern and topic bindings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::BlockGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncPolicy {
    Exact,
    Approximate,
}

/// When a node starts a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Pattern {
    /// Fixed period; input callbacks only latch data.
    #[serde(rename = "timer")]
    TimerDriven { period_ns: u64 },
    /// Every input arrival latches and starts a run.
    EventAll,
    /// Only `trigger_topic` starts runs; other topics latch.
    EventTrigger { trigger_topic: String },
    /// Runs start when one message per topic matches by timestamp.
    #[serde(rename = "time_sync")]
    EventTimeSync {
        policy: SyncPolicy,
        #[serde(default)]
        slop_ns: u64,
        queue_size: usize,
    },
}

impl Pattern {
    /// Short label used in reports and CSV output.
    pub fn label(&self) -> &'static str {
        match self {
            Pattern::TimerDriven { .. } => "timer",
            Pattern::EventAll => "event_all",
            Pattern::EventTrigger { .. } => "event_trigger",
            Pattern::EventTimeSync {
                policy: SyncPolicy::Exact,
                ..
            } => "time_sync_exact",
            Pattern::EventTimeSync {
                policy: SyncPolicy::Approximate,
                ..
            } => "time_sync_approx",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn default_queue_depth() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub pattern: Pattern,
    /// Input topic → inport id.
    #[serde(rename = "inputs")]
    pub input_topics: BTreeMap<String, String>,
    /// Outport id → output topic.
    #[serde(rename = "outputs")]
    pub output_topics: BTreeMap<String, String>,
    /// Depth of each subscription queue.
    #[serde(default = "default_queue_depth")]
    pub queue_depth: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NodeConfigError {
    #[error("pattern mismatch: {0}")]
    PatternMismatch(String),
    #[error("binding missing: {0}")]
    BindingMissing(String),
    #[error("invalid node config: {0}")]
    Invalid(String),
}

impl NodeConfig {
    pub fn new(pattern: Pattern) -> Self {
        Self {
            pattern,
            input_topics: BTreeMap::new(),
            output_topics: BTreeMap::new(),
            queue_depth: default_queue_depth(),
        }
    }

    pub fn with_input(mut self, topic: impl Into<String>, inport: impl Into<String>) -> Self {
        self.input_topics.insert(topic.into(), inport.into());
        self
    }

    pub fn with_output(mut self, outport: impl Into<String>, topic: impl Into<String>) -> Self {
        self.output_topics.insert(outport.into(), topic.into());
        self
    }

    /// Binds each inport to a topic named after it and each outport likewise.
    pub fn bind_all(pattern: Pattern, g: &BlockGraph) -> Self {
        let mut nc = Self::new(pattern);
        for id in g.inports() {
            nc.input_topics.insert(format!("{id}_topic"), id.to_string());
        }
        for id in g.outports() {
            nc.output_topics.insert(id.to_string(), format!("{id}_topic"));
        }
        nc
    }

    pub fn validate(&self) -> Result<(), NodeConfigError> {
        if self.queue_depth == 0 {
            return Err(NodeConfigError::Invalid("queue_depth must be ≥ 1".into()));
        }
        let inports: BTreeSet<&String> = self.input_topics.values().collect();
        if inports.len() != self.input_topics.len() {
            return Err(NodeConfigError::Invalid("an inport is bound to several topics".into()));
        }
        match &self.pattern {
            Pattern::TimerDriven { period_ns } => {
                if *period_ns == 0 {
                    return Err(NodeConfigError::PatternMismatch("timer period must be > 0".into()));
                }
            }
            Pattern::EventAll => {}
            Pattern::EventTrigger { trigger_topic } => {
                if !self.input_topics.contains_key(trigger_topic) {
                    return Err(NodeConfigError::PatternMismatch(format!(
                        "trigger topic `{trigger_topic}` is not an input topic"
                    )));
                }
            }
            Pattern::EventTimeSync {
                policy,
                slop_ns,
                queue_size,
            } => {
                if self.input_topics.len() < 2 {
                    return Err(NodeConfigError::PatternMismatch(
                        "time synchronization needs at least two input topics".into(),
                    ));
                }
                if *queue_size == 0 {
                    return Err(NodeConfigError::PatternMismatch("queue_size must be ≥ 1".into()));
                }
                if *policy == SyncPolicy::Exact && *slop_ns != 0 {
                    return Err(NodeConfigError::PatternMismatch(
                        "slop_ns only applies to the approximate policy".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Checks that every inport and outport of the model is bound and that
    /// bindings name real ports.
    pub fn check_bindings(&self, g: &BlockGraph) -> Result<(), NodeConfigError> {
        let bound_in: BTreeSet<&str> = self.input_topics.values().map(String::as_str).collect();
        let inports: BTreeSet<&str> = g.inports().into_iter().collect();
        let outports: BTreeSet<&str> = g.outports().into_iter().collect();
        if let Some(missing) = inports.difference(&bound_in).next() {
            return Err(NodeConfigError::BindingMissing(format!("inport `{missing}` has no input topic")));
        }
        if let Some(extra) = bound_in.difference(&inports).next() {
            return Err(NodeConfigError::BindingMissing(format!("`{extra}` is not an inport")));
        }
        for id in &outports {
            if !self.output_topics.contains_key(*id) {
                return Err(NodeConfigError::BindingMissing(format!("outport `{id}` has no output topic")));
            }
        }
        if let Some(extra) = self.output_topics.keys().find(|k| !outports.contains(k.as_str())) {
            return Err(NodeConfigError::BindingMissing(format!("`{extra}` is not an outport")));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, NodeConfigError> {
        let nc: NodeConfig = serde_json::from_str(text).map_err(|e| NodeConfigError::PatternMismatch(e.to_string()))?;
        nc.validate()?;
        Ok(nc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("node config serializes")
    }
}
