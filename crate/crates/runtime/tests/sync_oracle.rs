//! The matchers against exhaustive enumeration of every one-per-queue choice.

use std::collections::VecDeque;

use blockflow_runtime::sync::{approximate_time_match, exact_time_match, MatchOutcome};
use proptest::prelude::*;

/// Best combination by (spread, max stamp, stamps in topic order, positions).
fn brute_best(queues: &[VecDeque<u64>], slop: Option<u64>) -> Option<Vec<usize>> {
    if queues.iter().any(VecDeque::is_empty) {
        return None;
    }
    let mut best: Option<(u64, u64, Vec<u64>, Vec<usize>)> = None;
    let mut idx = vec![0usize; queues.len()];
    loop {
        let stamps: Vec<u64> = idx.iter().zip(queues).map(|(&i, q)| q[i]).collect();
        let (lo, hi) = (*stamps.iter().min().unwrap(), *stamps.iter().max().unwrap());
        let ok = match slop {
            Some(s) => hi - lo <= s,
            None => lo == hi,
        };
        if ok {
            let key = (hi - lo, hi, stamps, idx.clone());
            if best.as_ref().is_none_or(|b| key < *b) {
                best = Some(key);
            }
        }
        // Odometer over all combinations.
        let mut k = 0;
        loop {
            if k == queues.len() {
                return best.map(|b| b.3);
            }
            idx[k] += 1;
            if idx[k] < queues[k].len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

fn brute_match(queues: &mut [VecDeque<u64>], slop: Option<u64>, queue_size: usize) -> MatchOutcome<u64> {
    let mut dropped = 0;
    loop {
        if let Some(idx) = brute_best(queues, slop) {
            let matched = queues
                .iter_mut()
                .zip(&idx)
                .map(|(q, &i)| {
                    let v = q[i];
                    q.drain(..=i);
                    v
                })
                .collect();
            return MatchOutcome {
                matched: Some(matched),
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

fn check(queues: &[VecDeque<u64>], queue_size: usize) {
    for slop in [0, 2, 5] {
        let mut a = queues.to_vec();
        let mut b = queues.to_vec();
        assert_eq!(
            approximate_time_match(&mut a, slop, queue_size),
            brute_match(&mut b, Some(slop), queue_size),
            "approximate {queues:?} slop {slop}"
        );
        assert_eq!(a, b);
    }
    let mut a = queues.to_vec();
    let mut b = queues.to_vec();
    assert_eq!(exact_time_match(&mut a, queue_size), brute_match(&mut b, None, queue_size), "exact {queues:?}");
    assert_eq!(a, b);
}

/// All non-decreasing stamp sequences over `0..10` of length ≤ `max_len`.
fn sorted_queues(max_len: usize) -> Vec<VecDeque<u64>> {
    let mut out = vec![VecDeque::new()];
    let mut frontier = vec![VecDeque::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for q in &frontier {
            let from = q.back().copied().unwrap_or(0);
            for s in from..10 {
                let mut q2: VecDeque<u64> = q.clone();
                q2.push_back(s);
                next.push(q2);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn three_topics_up_to_two_messages() {
    let qs = sorted_queues(2);
    assert_eq!(qs.len(), 66);
    // Every 10th triple keeps this a quick unit test; the acceptance suite
    // walks the full grid.
    let mut n = 0usize;
    for a in &qs {
        for b in &qs {
            for c in qs.iter().step_by(10) {
                check(&[a.clone(), b.clone(), c.clone()], 2);
                n += 1;
            }
        }
    }
    assert!(n > 20_000);
}

#[test]
fn exact_fires_iff_common_stamp() {
    let qs = sorted_queues(3);
    for a in qs.iter().step_by(3) {
        for b in qs.iter().step_by(3) {
            let common = a.iter().any(|s| b.contains(s));
            let mut q = vec![a.clone(), b.clone()];
            assert_eq!(exact_time_match(&mut q, 8).matched.is_some(), common);
        }
    }
}

fn queue_strategy() -> impl Strategy<Value = VecDeque<u64>> {
    prop::collection::vec(0u64..10, 0..=4).prop_map(|mut v| {
        v.sort_unstable();
        v.into_iter().collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4000))]

    #[test]
    fn four_topics_agree_with_enumeration(queues in prop::collection::vec(queue_strategy(), 2..=4), queue_size in 1usize..=5) {
        check(&queues, queue_size);
    }

    #[test]
    fn approximate_sets_respect_slop(queues in prop::collection::vec(queue_strategy(), 2..=4), slop in 0u64..6) {
        let mut q = queues.clone();
        if let Some(set) = approximate_time_match(&mut q, slop, 10).matched {
            let (lo, hi) = (set.iter().min().unwrap(), set.iter().max().unwrap());
            prop_assert!(hi - lo <= slop);
            // Each chosen message left its queue with everything older.
            for (before, after) in queues.iter().zip(&q) {
                prop_assert!(after.len() < before.len());
                prop_assert_eq!(&before.iter().skip(before.len() - after.len()).copied().collect::<VecDeque<_>>(), after);
            }
        }
    }
}
