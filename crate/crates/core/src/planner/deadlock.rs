use super::{ExecutionPlan, Step};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeadlockCheck {
    Ok,
    /// Step index each worker halted at (its step count if it finished).
    Stuck { at: Vec<usize> },
}

impl DeadlockCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, DeadlockCheck::Ok)
    }
}

/// Runs the plan abstractly for one run.
///
/// A Recv waits for a message on its channel; a Send waits only while the
/// channel is full. A waiting worker never holds its core, so any other
/// worker that can move does. The plan is deadlock-free iff every worker
/// reaches the end of its step list.
pub fn check_deadlock_free(plan: &ExecutionPlan) -> DeadlockCheck {
    let mut pc = vec![0usize; plan.workers.len()];
    let mut queued = vec![0usize; plan.channels.len()];
    loop {
        let mut progressed = false;
        for (w, worker) in plan.workers.iter().enumerate() {
            while let Some(step) = worker.steps.get(pc[w]) {
                let can_go = match step {
                    Step::Compute(_) => true,
                    Step::Send(c) => queued[*c] < plan.channels[*c].capacity,
                    Step::Recv(c) => queued[*c] > 0,
                };
                if !can_go {
                    break;
                }
                match step {
                    Step::Send(c) => queued[*c] += 1,
                    Step::Recv(c) => queued[*c] -= 1,
                    Step::Compute(_) => {}
                }
                pc[w] += 1;
                progressed = true;
            }
        }
        if pc.iter().zip(&plan.workers).all(|(&p, w)| p == w.steps.len()) {
            return DeadlockCheck::Ok;
        }
        if !progressed {
            return DeadlockCheck::Stuck { at: pc };
        }
    }
}
