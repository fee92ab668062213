use std::collections::VecDeque;

use super::{check_deadlock_free, DeadlockCheck, ExecutionPlan, PlanError, Step};
use crate::costalloc::{CostMap, CostProfile};

struct CoreState {
    now: u64,
    current: Option<usize>,
    /// Plan worker indices hosted here, in worker-ordinal order.
    workers: Vec<usize>,
}

/// Simulated completion time of one run, in cycles.
///
/// Compute takes the block's cost; a message between cores arrives
/// `comm_cycles_per_message` after its Send (immediately between workers of
/// one core). Each core runs one worker at a time and keeps running it until
/// it blocks, then switches to the lowest-ordinal worker that can proceed,
/// paying `switch_cycles`.
pub fn estimate_makespan(plan: &ExecutionPlan, costs: &CostMap, p: &CostProfile) -> Result<u64, PlanError> {
    if let DeadlockCheck::Stuck { at } = check_deadlock_free(plan) {
        return Err(PlanError::DeadlockedPlan(at));
    }
    let n_workers = plan.workers.len();
    let mut cores: Vec<CoreState> = Vec::new();
    let mut core_of = vec![0usize; n_workers];
    let mut order: Vec<usize> = (0..n_workers).collect();
    order.sort_by_key(|&w| plan.workers[w].lane());
    for w in order {
        let core = plan.workers[w].core;
        match cores.iter().position(|c| plan.workers[c.workers[0]].core == core) {
            Some(i) => {
                cores[i].workers.push(w);
                core_of[w] = i;
            }
            None => {
                core_of[w] = cores.len();
                cores.push(CoreState {
                    now: 0,
                    current: None,
                    workers: vec![w],
                });
            }
        }
    }

    let cost_of = |b: &str| costs.get(b).copied().unwrap_or(0);
    let mut pc = vec![0usize; n_workers];
    let mut finish = vec![0u64; n_workers];
    let mut queues: Vec<VecDeque<u64>> = vec![VecDeque::new(); plan.channels.len()];
    let done = |pc: &[usize], w: usize| pc[w] >= plan.workers[w].steps.len();

    let can_step = |pc: &[usize], queues: &[VecDeque<u64>], w: usize, t: u64| -> bool {
        match plan.workers[w].steps.get(pc[w]) {
            None => false,
            Some(Step::Compute(_)) => true,
            Some(Step::Send(c)) => queues[*c].len() < plan.channels[*c].capacity,
            Some(Step::Recv(c)) => queues[*c].front().is_some_and(|&arrival| arrival <= t),
        }
    };

    loop {
        let active: Vec<usize> = (0..cores.len())
            .filter(|&c| cores[c].workers.iter().any(|&w| !done(&pc, w)))
            .collect();
        let Some(t) = active.iter().map(|&c| cores[c].now).min() else {
            break;
        };

        let mut acted = false;
        for &c in active.iter().filter(|&&c| cores[c].now == t) {
            let core = &cores[c];
            let pick = core
                .current
                .filter(|&w| can_step(&pc, &queues, w, t))
                .or_else(|| core.workers.iter().copied().find(|&w| can_step(&pc, &queues, w, t)));
            let Some(w) = pick else { continue };

            if let Some(prev) = core.current {
                if prev != w && p.switch_cycles > 0 {
                    cores[c].now += p.switch_cycles;
                    cores[c].current = Some(w);
                    acted = true;
                    break;
                }
            }
            let core = &mut cores[c];
            core.current = Some(w);
            match &plan.workers[w].steps[pc[w]] {
                Step::Compute(b) => core.now += cost_of(b),
                Step::Send(ch) => {
                    let channel = &plan.channels[*ch];
                    let delay = if channel.crosses_cores() { p.comm_cycles_per_message } else { 0 };
                    queues[*ch].push_back(core.now + delay);
                }
                Step::Recv(ch) => {
                    queues[*ch].pop_front();
                }
            }
            pc[w] += 1;
            if done(&pc, w) {
                finish[w] = core.now;
            }
            acted = true;
            break;
        }
        if acted {
            continue;
        }

        // Nothing can move at `t`: jump to the next time anything can change.
        let later_core = active.iter().map(|&c| cores[c].now).filter(|&n| n > t).min();
        let next_arrival = queues.iter().filter_map(|q| q.front().copied()).filter(|&a| a > t).min();
        let next = match (later_core, next_arrival) {
            (Some(a), Some(b)) => a.min(b),
            (a, b) => a.or(b).ok_or_else(|| PlanError::DeadlockedPlan(pc.clone()))?,
        };
        for &c in &active {
            if cores[c].now == t {
                cores[c].now = next;
            }
        }
    }
    Ok(finish.into_iter().max().unwrap_or(0))
}

/// [`estimate_makespan`] converted to nanoseconds.
pub fn estimate_makespan_ns(plan: &ExecutionPlan, costs: &CostMap, p: &CostProfile) -> Result<f64, PlanError> {
    Ok(p.cycles_to_ns(estimate_makespan(plan, costs, p)?))
}
