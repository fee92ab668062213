//! Timestamp matching across per-topic queues.
//!
//! Both policies pick one message per queue. `Exact` needs identical stamps;
//! `Approximate` accepts any set whose spread (max − min stamp) is within
//! the slop and prefers, in order: the smallest spread, the smallest max
//! stamp, the smallest stamps taken topic by topic, and finally the oldest
//! queue position for equal stamps. A match removes the chosen messages and
//! everything older in their queues.
//!
//! When nothing matches, a queue that has reached `queue_size` loses its
//! oldest message (the first such queue in topic order) and matching is
//! retried, so a stale message cannot block a topic forever.

use std::collections::VecDeque;

use crate::bus::{Envelope, Message};

pub trait Stamped {
    fn stamp_ns(&self) -> u64;
}

impl Stamped for u64 {
    fn stamp_ns(&self) -> u64 {
        *self
    }
}

impl Stamped for Message {
    fn stamp_ns(&self) -> u64 {
        self.stamp_ns
    }
}

impl Stamped for Envelope {
    fn stamp_ns(&self) -> u64 {
        self.msg.stamp_ns
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome<T> {
    /// One message per queue, in queue order.
    pub matched: Option<Vec<T>>,
    /// Messages discarded by overflow trimming.
    pub dropped: usize,
}

/// Queue positions of the earliest message in each queue carrying the
/// smallest stamp common to all queues.
fn exact_indices<T: Stamped>(queues: &[VecDeque<T>]) -> Option<Vec<usize>> {
    let (first, rest) = queues.split_first()?;
    let mut candidates: Vec<u64> = first.iter().map(Stamped::stamp_ns).collect();
    candidates.sort_unstable();
    candidates.dedup();
    candidates.into_iter().find_map(|s| {
        std::iter::once(first)
            .chain(rest)
            .map(|q| q.iter().position(|m| m.stamp_ns() == s))
            .collect()
    })
}

fn approx_indices<T: Stamped>(queues: &[VecDeque<T>], slop_ns: u64) -> Option<Vec<usize>> {
    if queues.is_empty() || queues.iter().any(VecDeque::is_empty) {
        return None;
    }
    // For a fixed minimum m, taking the smallest stamp ≥ m from every queue
    // minimizes the maximum, so the best (spread, max) is found by trying
    // every stamp as the minimum.
    let mut best: Option<(u64, u64)> = None;
    for m in queues.iter().flatten().map(Stamped::stamp_ns) {
        let mut hi = m;
        let mut complete = true;
        for q in queues {
            match q.iter().map(Stamped::stamp_ns).filter(|&s| s >= m).min() {
                Some(s) => hi = hi.max(s),
                None => {
                    complete = false;
                    break;
                }
            }
        }
        if complete {
            let key = (hi - m, hi);
            if best.is_none_or(|b| key < b) {
                best = Some(key);
            }
        }
    }
    let (spread, hi) = best?;
    if spread > slop_ns {
        return None;
    }
    let lo = hi - spread;

    // Smallest stamp vector (topic order) whose min is `lo` and max is `hi`.
    let options: Vec<Vec<(u64, usize)>> = queues
        .iter()
        .map(|q| {
            let mut v: Vec<(u64, usize)> = q
                .iter()
                .enumerate()
                .map(|(i, m)| (m.stamp_ns(), i))
                .filter(|&(s, _)| (lo..=hi).contains(&s))
                .collect();
            v.sort_unstable();
            v.dedup_by_key(|(s, _)| *s);
            v
        })
        .collect();
    let mut picked = Vec::with_capacity(queues.len());
    fn search(options: &[Vec<(u64, usize)>], lo: u64, hi: u64, picked: &mut Vec<(u64, usize)>) -> bool {
        let k = picked.len();
        if k == options.len() {
            return picked.iter().any(|&(s, _)| s == lo) && picked.iter().any(|&(s, _)| s == hi);
        }
        for &opt in &options[k] {
            picked.push(opt);
            if search(options, lo, hi, picked) {
                return true;
            }
            picked.pop();
        }
        false
    }
    search(&options, lo, hi, &mut picked).then(|| picked.into_iter().map(|(_, i)| i).collect())
}

fn take_matched<T>(queues: &mut [VecDeque<T>], indices: &[usize]) -> Vec<T> {
    queues
        .iter_mut()
        .zip(indices)
        .map(|(q, &i)| {
            let mut older = q.drain(..=i);
            older.next_back().expect("index is within the queue")
        })
        .collect()
}

fn match_with<T>(
    queues: &mut [VecDeque<T>],
    queue_size: usize,
    find: impl Fn(&[VecDeque<T>]) -> Option<Vec<usize>>,
) -> MatchOutcome<T> {
    let mut dropped = 0;
    loop {
        if let Some(indices) = find(queues) {
            return MatchOutcome {
                matched: Some(take_matched(queues, &indices)),
                dropped,
            };
        }
        match queues.iter_mut().find(|q| !q.is_empty() && q.len() >= queue_size) {
            Some(q) => {
                q.pop_front();
                dropped += 1;
            }
            None => return MatchOutcome { matched: None, dropped },
        }
    }
}

/// Matches one message per queue by identical stamp.
pub fn exact_time_match<T: Stamped>(queues: &mut [VecDeque<T>], queue_size: usize) -> MatchOutcome<T> {
    match_with(queues, queue_size, exact_indices)
}

/// Matches one message per queue with stamps within `slop_ns` of each other.
pub fn approximate_time_match<T: Stamped>(
    queues: &mut [VecDeque<T>],
    slop_ns: u64,
    queue_size: usize,
) -> MatchOutcome<T> {
    match_with(queues, queue_size, |q| approx_indices(q, slop_ns))
}
