//! Node executors: latch inputs, fire runs on the configured pattern, run
//! the plan on its workers, publish the outports.

mod workers;

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use blockflow_core::costalloc::CostProfile;
use blockflow_core::model::{InputMap, OutputMap};
use blockflow_core::node::{NodeConfig, NodeConfigError, Pattern, SyncPolicy};
use blockflow_core::planner::{check_deadlock_free, DeadlockCheck, ExecutionPlan};
use serde::{Deserialize, Serialize};

use crate::bus::{Bus, Doorbell, Envelope, Publisher, Subscription};
use crate::clock::now_ns;
use crate::pin::pinning_disabled_by_env;
use crate::sync::{approximate_time_match, exact_time_match};
use crate::RuntimeError;
use workers::WorkerPool;

pub(crate) fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pinning {
    On,
    Off,
}

/// Latest value per inport.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Latched {
    pub value: f64,
    pub stamp_ns: u64,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_index: u64,
    /// Publication time of the triggering input, or the timer deadline.
    pub trigger_stamp_ns: u64,
    /// When the workers were notified.
    pub start_ns: u64,
    pub publish_stamp_ns: u64,
    /// Inport values the run consumed.
    pub snapshot: InputMap,
    pub outputs: OutputMap,
}

impl RunResult {
    pub fn latency_ns(&self) -> u64 {
        self.publish_stamp_ns - self.trigger_stamp_ns
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStats {
    pub runs: u64,
    pub triggers: u64,
    /// Triggers replaced by a newer one while a run was in progress.
    pub coalesced_triggers: u64,
    /// Triggers whose snapshot lacked an inport value.
    pub skipped_runs: u64,
    /// Messages lost to full subscription or synchronizer queues.
    pub queue_drops: u64,
    pub warnings: Vec<String>,
}

impl NodeStats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

struct Trigger {
    snapshot: InputMap,
    stamp_ns: u64,
}

#[derive(Default)]
struct TriggerState {
    pending: Option<Trigger>,
    stop: bool,
}

#[derive(Default)]
struct Counters {
    runs: u64,
    triggers: u64,
    coalesced: u64,
    skipped: u64,
    sync_drops: u64,
    /// Messages fully handled by the dispatcher.
    processed: u64,
    /// Pending plus running triggers.
    in_flight: u64,
}

struct Shared {
    data: Mutex<BTreeMap<String, Latched>>,
    trigger: Mutex<TriggerState>,
    trigger_cv: Condvar,
    counters: Mutex<Counters>,
    /// Notified whenever a trigger is fully handled.
    progress: Condvar,
    results: Mutex<Vec<RunResult>>,
    warnings: Mutex<Vec<String>>,
    stopping: AtomicBool,
}

impl Shared {
    fn snapshot(data: &BTreeMap<String, Latched>) -> InputMap {
        data.iter().map(|(k, v)| (k.clone(), v.value)).collect()
    }

    fn fire(&self, snapshot: InputMap, stamp_ns: u64) {
        let mut t = lock(&self.trigger);
        let replaced = t.pending.replace(Trigger { snapshot, stamp_ns }).is_some();
        // Counters are updated under the trigger lock so `in_flight` never
        // lags behind the coordinator picking the trigger up.
        let mut c = lock(&self.counters);
        c.triggers += 1;
        if replaced {
            c.coalesced += 1;
        } else {
            c.in_flight += 1;
        }
        drop(c);
        drop(t);
        self.trigger_cv.notify_all();
        if replaced {
            self.progress.notify_all();
        }
    }

    /// Latches `values` together and, if asked, fires with the snapshot
    /// taken under the same lock.
    fn latch(&self, values: &[(&str, &Envelope)], fire_stamp: Option<u64>) {
        let mut data = lock(&self.data);
        for (inport, env) in values {
            let Some(&value) = env.msg.payload.first() else { continue };
            data.insert(
                inport.to_string(),
                Latched {
                    value,
                    stamp_ns: env.msg.stamp_ns,
                    seq: env.msg.seq,
                },
            );
        }
        if let Some(stamp) = fire_stamp {
            let snap = Self::snapshot(&data);
            drop(data);
            self.fire(snap, stamp);
        }
    }
}

/// A running node. Dropping it stops the node.
pub struct NodeHandle {
    shared: Arc<Shared>,
    subscriptions: Arc<Vec<Subscription>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    stopped: Mutex<Option<NodeStats>>,
    wake: Arc<Doorbell>,
}

/// Optional knobs for [`run_node_with`].
#[derive(Debug, Clone)]
pub struct NodeOptions {
    pub pinning: Pinning,
}

impl Default for NodeOptions {
    fn default() -> Self {
        Self { pinning: Pinning::On }
    }
}

/// Starts a node running `plan` under `nc`'s activation pattern.
pub fn run_node(
    bus: &Bus,
    plan: &ExecutionPlan,
    nc: &NodeConfig,
    profile: &CostProfile,
    pinning: Pinning,
) -> Result<NodeHandle, RuntimeError> {
    run_node_with(bus, plan, nc, profile, NodeOptions { pinning })
}

pub fn run_node_with(
    bus: &Bus,
    plan: &ExecutionPlan,
    nc: &NodeConfig,
    profile: &CostProfile,
    options: NodeOptions,
) -> Result<NodeHandle, RuntimeError> {
    if let DeadlockCheck::Stuck { at } = check_deadlock_free(plan) {
        return Err(RuntimeError::PlanDeadlocked(at));
    }
    plan.check_well_formed()?;
    nc.validate().map_err(RuntimeError::from_config)?;
    nc.check_bindings(&plan.model).map_err(RuntimeError::from_config)?;
    profile.validate().map_err(|e| RuntimeError::InvalidProfile(e.to_string()))?;

    let pin = options.pinning == Pinning::On && !pinning_disabled_by_env();
    let (pool, warnings) = WorkerPool::spawn(plan, profile, pin);

    let wake = Doorbell::new();
    let topics: Vec<(String, String)> = nc.input_topics.iter().map(|(t, i)| (t.clone(), i.clone())).collect();
    let depth = match nc.pattern {
        Pattern::EventTimeSync { queue_size, .. } => nc.queue_depth.max(queue_size),
        _ => nc.queue_depth,
    };
    let subscriptions: Vec<Subscription> = topics
        .iter()
        .map(|(t, _)| bus.subscribe_with(t, depth, wake.clone()))
        .collect::<Result<_, _>>()?;
    let subscriptions = Arc::new(subscriptions);

    let shared = Arc::new(Shared {
        data: Mutex::new(BTreeMap::new()),
        trigger: Mutex::new(TriggerState::default()),
        trigger_cv: Condvar::new(),
        counters: Mutex::new(Counters::default()),
        progress: Condvar::new(),
        results: Mutex::new(Vec::new()),
        warnings: Mutex::new(warnings),
        stopping: AtomicBool::new(false),
    });

    let mut threads = Vec::new();
    let publishers: Vec<(String, Publisher)> = nc
        .output_topics
        .iter()
        .map(|(outport, topic)| (outport.clone(), bus.publisher(topic)))
        .collect();
    {
        let shared = shared.clone();
        threads.push(
            std::thread::Builder::new()
                .name("coordinator".into())
                .spawn(move || coordinator(&shared, pool, publishers))
                .expect("spawn coordinator"),
        );
    }
    {
        let shared = shared.clone();
        let subs = subscriptions.clone();
        let pattern = nc.pattern.clone();
        let wake = wake.clone();
        threads.push(
            std::thread::Builder::new()
                .name("dispatcher".into())
                .spawn(move || dispatcher(&shared, &subs, &topics, &pattern, &wake))
                .expect("spawn dispatcher"),
        );
    }
    if let Pattern::TimerDriven { period_ns } = nc.pattern {
        let shared = shared.clone();
        threads.push(
            std::thread::Builder::new()
                .name("timer".into())
                .spawn(move || timer(&shared, period_ns))
                .expect("spawn timer"),
        );
    }

    Ok(NodeHandle {
        shared,
        subscriptions,
        threads: Mutex::new(threads),
        stopped: Mutex::new(None),
        wake,
    })
}

fn coordinator(shared: &Shared, mut pool: WorkerPool, mut publishers: Vec<(String, Publisher)>) {
    let inports: Vec<String> = pool.inport_ids().map(str::to_string).collect();
    loop {
        let trigger = {
            let t = lock(&shared.trigger);
            let mut t = shared
                .trigger_cv
                .wait_while(t, |t| t.pending.is_none() && !t.stop)
                .unwrap_or_else(|e| e.into_inner());
            if t.stop {
                break;
            }
            t.pending.take().expect("woken with a trigger")
        };
        if !inports.iter().all(|i| trigger.snapshot.contains_key(i)) {
            let mut c = lock(&shared.counters);
            c.skipped += 1;
            c.in_flight -= 1;
            drop(c);
            shared.progress.notify_all();
            continue;
        }
        let snapshot: InputMap = inports.iter().map(|i| (i.clone(), trigger.snapshot[i])).collect();
        let start_ns = now_ns();
        let outputs = pool.run(&snapshot);
        let publish_stamp_ns = now_ns().max(trigger.stamp_ns);
        for (outport, publisher) in &mut publishers {
            if let Some(&v) = outputs.get(outport) {
                // A closed bus only means nobody is listening any more.
                let _ = publisher.publish_stamped(publish_stamp_ns, vec![v]);
            }
        }
        let mut results = lock(&shared.results);
        let run_index = results.len() as u64;
        results.push(RunResult {
            run_index,
            trigger_stamp_ns: trigger.stamp_ns,
            start_ns,
            publish_stamp_ns,
            snapshot,
            outputs,
        });
        drop(results);
        let mut c = lock(&shared.counters);
        c.runs += 1;
        c.in_flight -= 1;
        drop(c);
        shared.progress.notify_all();
    }
    pool.shutdown();
}

const POLL: Duration = Duration::from_millis(50);

fn dispatcher(
    shared: &Shared,
    subs: &[Subscription],
    topics: &[(String, String)],
    pattern: &Pattern,
    wake: &Doorbell,
) {
    let mut sync_queues: Vec<VecDeque<Envelope>> = vec![VecDeque::new(); subs.len()];
    loop {
        let seen = wake.rings();
        if shared.stopping.load(Ordering::Acquire) {
            return;
        }
        // Oldest delivery across all subscriptions first.
        let next = subs
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.peek_order().map(|o| (o, i)))
            .min();
        let Some((_, k)) = next else {
            wake.wait_past(seen, POLL);
            continue;
        };
        let Some(env) = subs[k].try_take() else { continue };
        let inport = topics[k].1.as_str();
        match pattern {
            Pattern::TimerDriven { .. } => shared.latch(&[(inport, &env)], None),
            Pattern::EventAll => shared.latch(&[(inport, &env)], Some(env.published_ns)),
            Pattern::EventTrigger { trigger_topic } => {
                let fire = (topics[k].0 == *trigger_topic).then_some(env.published_ns);
                shared.latch(&[(inport, &env)], fire);
            }
            Pattern::EventTimeSync {
                policy,
                slop_ns,
                queue_size,
            } => {
                sync_queues[k].push_back(env);
                let outcome = match policy {
                    SyncPolicy::Exact => exact_time_match(&mut sync_queues, *queue_size),
                    SyncPolicy::Approximate => approximate_time_match(&mut sync_queues, *slop_ns, *queue_size),
                };
                if outcome.dropped > 0 {
                    lock(&shared.counters).sync_drops += outcome.dropped as u64;
                }
                if let Some(set) = outcome.matched {
                    let stamp = set.iter().map(|e| e.published_ns).max().unwrap_or_else(now_ns);
                    let values: Vec<(&str, &Envelope)> =
                        topics.iter().map(|(_, i)| i.as_str()).zip(set.iter()).collect();
                    shared.latch(&values, Some(stamp));
                }
            }
        }
        lock(&shared.counters).processed += 1;
        shared.progress.notify_all();
    }
}

fn timer(shared: &Shared, period_ns: u64) {
    let mut deadline = now_ns() + period_ns;
    loop {
        // Sleep on the trigger condvar so stop interrupts the wait.
        {
            let mut t = lock(&shared.trigger);
            loop {
                if t.stop {
                    return;
                }
                let now = now_ns();
                if now >= deadline {
                    break;
                }
                t = shared
                    .trigger_cv
                    .wait_timeout(t, Duration::from_nanos(deadline - now))
                    .unwrap_or_else(|e| e.into_inner())
                    .0;
            }
        }
        let snapshot = Shared::snapshot(&lock(&shared.data));
        shared.fire(snapshot, deadline);
        deadline += period_ns;
        // After an overrun, resume on the period grid instead of bursting.
        let now = now_ns();
        if deadline <= now {
            deadline += (now - deadline) / period_ns * period_ns + period_ns;
        }
    }
}

impl NodeHandle {
    /// Live counters.
    pub fn stats(&self) -> NodeStats {
        let c = lock(&self.shared.counters);
        NodeStats {
            runs: c.runs,
            triggers: c.triggers,
            coalesced_triggers: c.coalesced,
            skipped_runs: c.skipped,
            queue_drops: c.sync_drops + self.subscriptions.iter().map(Subscription::drops).sum::<u64>(),
            warnings: lock(&self.shared.warnings).clone(),
        }
    }

    /// Completed runs so far, in order.
    pub fn results(&self) -> Vec<RunResult> {
        lock(&self.shared.results).clone()
    }

    /// Latched input values.
    pub fn data_area(&self) -> BTreeMap<String, Latched> {
        lock(&self.shared.data).clone()
    }

    /// Waits until at least `n` runs completed. False on timeout.
    pub fn wait_for_runs(&self, n: u64, timeout: Duration) -> bool {
        self.wait_until(timeout, |c| c.runs >= n)
    }

    /// Waits until at least `n` triggers were fully handled (run, skipped or
    /// coalesced away). False on timeout.
    pub fn wait_for_handled(&self, n: u64, timeout: Duration) -> bool {
        self.wait_until(timeout, |c| c.runs + c.skipped + c.coalesced >= n)
    }

    /// Waits until every delivered input has been handled and no run is
    /// pending or in progress. False on timeout.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let subs = self.subscriptions.clone();
        self.wait_until(timeout, move |c| {
            let (received, dropped) = subs
                .iter()
                .fold((0, 0), |(r, d), s| (r + s.received(), d + s.drops()));
            c.in_flight == 0 && c.processed + dropped == received
        })
    }

    fn wait_until(&self, timeout: Duration, done: impl Fn(&Counters) -> bool) -> bool {
        let deadline = Instant::now() + timeout;
        let mut c = lock(&self.shared.counters);
        loop {
            if done(&c) {
                return true;
            }
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            c = self
                .shared
                .progress
                .wait_timeout(c, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Stops the node after any in-progress run and returns final stats.
    /// Later calls return the same stats.
    pub fn stop(&self) -> NodeStats {
        let mut stopped = lock(&self.stopped);
        if let Some(stats) = &*stopped {
            return stats.clone();
        }
        self.shared.stopping.store(true, Ordering::Release);
        lock(&self.shared.trigger).stop = true;
        self.shared.trigger_cv.notify_all();
        self.wake.ring();
        for h in lock(&self.threads).drain(..) {
            let _ = h.join();
        }
        let stats = self.stats();
        *stopped = Some(stats.clone());
        stats
    }
}

impl Drop for NodeHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Free-function form of [`NodeHandle::stop`].
pub fn stop_node(handle: &NodeHandle) -> NodeStats {
    handle.stop()
}

impl RuntimeError {
    fn from_config(e: NodeConfigError) -> Self {
        match e {
            NodeConfigError::BindingMissing(m) => RuntimeError::BindingMissing(m),
            other => RuntimeError::InvalidConfig(other.to_string()),
        }
    }
}
