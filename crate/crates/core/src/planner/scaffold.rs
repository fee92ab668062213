//! Pseudocode skeleton of a node running a plan.

use std::fmt::Write as _;

use super::{ExecutionPlan, PlanError, Step};
use crate::node::{NodeConfig, NodeConfigError, Pattern, SyncPolicy};

fn thread_name(i: usize) -> String {
    format!("thread{}", i + 1)
}

/// Renders the node skeleton: data area, data callbacks, the
/// pattern-specific trigger, one loop per worker thread, and `main`.
///
/// The output depends only on the plan and config, so it can be compared
/// byte for byte against checked-in files.
pub fn emit_scaffold(plan: &ExecutionPlan, nc: &NodeConfig) -> Result<String, PlanError> {
    if plan.workers.is_empty() {
        return Err(NodeConfigError::PatternMismatch("plan has no workers".into()).into());
    }
    nc.validate()?;
    nc.check_bindings(&plan.model)?;

    let mut out = String::new();
    let o = &mut out;
    let _ = writeln!(o, "// node scaffold for model `{}`", plan.model.name);
    let _ = write!(o, "// pattern: {}", nc.pattern.label());
    match &nc.pattern {
        Pattern::TimerDriven { period_ns } => {
            let _ = write!(o, " (period_ns={period_ns})");
        }
        Pattern::EventTrigger { trigger_topic } => {
            let _ = write!(o, " (trigger_topic={trigger_topic})");
        }
        Pattern::EventTimeSync {
            slop_ns, queue_size, ..
        } => {
            let _ = write!(o, " (slop_ns={slop_ns}, queue_size={queue_size})");
        }
        Pattern::EventAll => {}
    }
    let _ = writeln!(o);
    let _ = writeln!(
        o,
        "// threads: {}, cores: {}, channels: {}",
        plan.workers.len(),
        plan.n_cores(),
        plan.channels.len()
    );

    let _ = writeln!(o, "\n// ---- data area ----");
    let _ = writeln!(o, "data_area {{");
    for (topic, inport) in &nc.input_topics {
        let _ = writeln!(o, "  {inport}: float64  // latest from {topic}");
    }
    let _ = writeln!(o, "}}");

    let _ = writeln!(o, "\n// ---- callbacks ----");
    let notify = "  // Use condition variables to notify each thread to start\n";
    match &nc.pattern {
        Pattern::TimerDriven { .. } => {
            for (i, (topic, inport)) in nc.input_topics.iter().enumerate() {
                let _ = writeln!(o, "callback{}(msg from {topic}) {{", i + 1);
                let _ = writeln!(o, "  // Update data: {inport}");
                let _ = writeln!(o, "}}");
            }
            let _ = writeln!(o, "timer_callback() {{");
            o.push_str(notify);
            let _ = writeln!(o, "}}");
        }
        Pattern::EventAll => {
            for (i, (topic, inport)) in nc.input_topics.iter().enumerate() {
                let _ = writeln!(o, "trigger_callback{}(msg from {topic}) {{", i + 1);
                let _ = writeln!(o, "  // Update data: {inport}");
                o.push_str(notify);
                let _ = writeln!(o, "}}");
            }
        }
        Pattern::EventTrigger { trigger_topic } => {
            let mut n = 0;
            for (topic, inport) in &nc.input_topics {
                if topic == trigger_topic {
                    let _ = writeln!(o, "trigger_callback(msg from {topic}) {{");
                    let _ = writeln!(o, "  // Update data: {inport}");
                    o.push_str(notify);
                } else {
                    n += 1;
                    let _ = writeln!(o, "callback{n}(msg from {topic}) {{");
                    let _ = writeln!(o, "  // Update data: {inport}");
                }
                let _ = writeln!(o, "}}");
            }
        }
        Pattern::EventTimeSync { .. } => {
            let topics: Vec<&str> = nc.input_topics.keys().map(String::as_str).collect();
            let _ = writeln!(o, "sync_callback(matched {}) {{", topics.join(", "));
            let inports: Vec<&str> = nc.input_topics.values().map(String::as_str).collect();
            let _ = writeln!(o, "  // Update data: {}", inports.join(", "));
            o.push_str(notify);
            let _ = writeln!(o, "}}");
        }
    }
    let _ = writeln!(o, "publish_outputs() {{");
    let _ = writeln!(o, "  // Wait until every thread has finished the run");
    for (outport, topic) in &nc.output_topics {
        let lane = plan.outport_bindings.get(outport);
        let owner = lane
            .and_then(|l| plan.worker_of(*l))
            .map(thread_name)
            .unwrap_or_else(|| "thread1".into());
        let _ = writeln!(o, "  // Publish {outport} (from {owner}) to {topic}");
    }
    let _ = writeln!(o, "}}");

    let _ = writeln!(o, "\n// ---- threads ----");
    for (i, w) in plan.workers.iter().enumerate() {
        let _ = writeln!(o, "{}() {{  // core {}, worker {}", thread_name(i), w.core, w.worker);
        let _ = writeln!(o, "  while (node is alive) {{");
        let _ = writeln!(o, "    // Wait in a standby state for notification from callbacks");
        for step in &w.steps {
            match step {
                Step::Compute(b) => {
                    let _ = writeln!(o, "    compute {b}");
                }
                Step::Send(c) => {
                    let ch = &plan.channels[*c];
                    let to = plan.worker_of(ch.to).map(thread_name).unwrap_or_default();
                    let _ = writeln!(o, "    send ch{c} ({} -> {}) to {to}", ch.edge.0, ch.edge.1);
                }
                Step::Recv(c) => {
                    let ch = &plan.channels[*c];
                    let from = plan.worker_of(ch.from).map(thread_name).unwrap_or_default();
                    let _ = writeln!(o, "    recv ch{c} ({} -> {}) from {from}", ch.edge.0, ch.edge.1);
                }
            }
        }
        let _ = writeln!(o, "    // Signal completion");
        let _ = writeln!(o, "  }}");
        let _ = writeln!(o, "}}");
    }

    let _ = writeln!(o, "\n// ---- main ----");
    let _ = writeln!(o, "main() {{");
    let _ = writeln!(o, "  // Initialize node");
    match &nc.pattern {
        Pattern::TimerDriven { period_ns } => {
            for (i, topic) in nc.input_topics.keys().enumerate() {
                let _ = writeln!(o, "  // Create subscriber {topic} -> callback{}", i + 1);
            }
            for topic in nc.output_topics.values() {
                let _ = writeln!(o, "  // Create publisher {topic}");
            }
            let _ = writeln!(o, "  // Create timer ({period_ns} ns) and link with timer_callback");
        }
        Pattern::EventAll => {
            for (i, topic) in nc.input_topics.keys().enumerate() {
                let _ = writeln!(o, "  // Create subscriber {topic} -> trigger_callback{}", i + 1);
            }
            for topic in nc.output_topics.values() {
                let _ = writeln!(o, "  // Create publisher {topic}");
            }
        }
        Pattern::EventTrigger { trigger_topic } => {
            let mut n = 0;
            for topic in nc.input_topics.keys() {
                if topic == trigger_topic {
                    let _ = writeln!(o, "  // Create subscriber {topic} -> trigger_callback");
                } else {
                    n += 1;
                    let _ = writeln!(o, "  // Create subscriber {topic} -> callback{n}");
                }
            }
            for topic in nc.output_topics.values() {
                let _ = writeln!(o, "  // Create publisher {topic}");
            }
        }
        Pattern::EventTimeSync {
            policy,
            slop_ns,
            queue_size,
        } => {
            for (i, topic) in nc.input_topics.keys().enumerate() {
                let _ = writeln!(o, "  // Create message_filters subscriber{} on {topic}", i + 1);
            }
            for topic in nc.output_topics.values() {
                let _ = writeln!(o, "  // Create publisher {topic}");
            }
            let policy = match policy {
                SyncPolicy::Exact => "ExactTime".to_string(),
                SyncPolicy::Approximate => format!("ApproximateTime, slop_ns={slop_ns}"),
            };
            let _ = writeln!(o, "  // Create synchronizer ({policy}, queue_size={queue_size})");
            let _ = writeln!(o, "  // sync.registerCallback(sync_callback)");
        }
    }
    let names: Vec<String> = (0..plan.workers.len()).map(thread_name).collect();
    let _ = writeln!(o, "  // Create threads {}", names.join(", "));
    for (i, w) in plan.workers.iter().enumerate() {
        let _ = writeln!(o, "  // Assign {} to core {}", thread_name(i), w.core);
    }
    let _ = writeln!(o, "  // Start threads");
    let _ = writeln!(o, "  // Spin node");
    let _ = writeln!(o, "  // Shutdown");
    let _ = writeln!(o, "}}");
    Ok(out)
}
