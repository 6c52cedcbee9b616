//! Experience replay with acknowledgement recovery.
//!
//! Each slot produces one experience (state, network action, per-user
//! rewards, next state). When the slot's acknowledgement is lost the rewards
//! are unknown, so the experience waits in a side list instead of the main
//! ring. A later acknowledgement carries indicator histories deep enough to
//! reconstruct the missing rewards for the previous `k-1` slots; anything
//! older is permanently discarded. States are never rewritten after the fact,
//! only the reward vector of a waiting experience is filled in.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;

use crate::agent::{AgentState, Reward, RewardVector};
use crate::env::Indicator;

#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    /// Slot whose transmission this experience describes.
    pub slot: usize,
    pub state: AgentState,
    /// Network action taken (not this agent's own transmit bit).
    pub u: u8,
    pub rewards: RewardVector,
    pub next_state: AgentState,
}

/// Lifetime counters for every experience that entered the buffer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecoveryStats {
    /// Experiences stored in total.
    pub created: usize,
    /// Stored with rewards known immediately.
    pub direct: usize,
    /// Back-filled from a later acknowledgement.
    pub recovered: usize,
    /// Lost for good: no acknowledgement arrived within history depth.
    pub discarded: usize,
}

pub struct DualBuffer {
    capacity: usize,
    k: usize,
    complete: VecDeque<Experience>,
    incomplete: VecDeque<Experience>,
    stats: RecoveryStats,
}

impl DualBuffer {
    pub fn new(capacity: usize, k: usize) -> Self {
        assert!(capacity >= 1 && k >= 1);
        Self {
            capacity,
            k,
            complete: VecDeque::with_capacity(capacity + 1),
            incomplete: VecDeque::new(),
            stats: RecoveryStats::default(),
        }
    }

    /// Experiences available for sampling.
    pub fn len(&self) -> usize {
        self.complete.len()
    }

    pub fn is_empty(&self) -> bool {
        self.complete.is_empty()
    }

    /// Experiences still waiting for an acknowledgement.
    pub fn unresolved(&self) -> usize {
        self.incomplete.len()
    }

    pub fn stats(&self) -> RecoveryStats {
        self.stats
    }

    /// Stores the experience for slot `e.slot`, routing on whether its
    /// rewards are known. Call after [`recover`](DualBuffer::recover) on
    /// slots whose acknowledgement arrived.
    pub fn store(&mut self, e: Experience) {
        self.expire(e.slot);
        self.stats.created += 1;
        if e.rewards.is_unknown() {
            self.incomplete.push_back(e);
        } else {
            self.stats.direct += 1;
            self.push_complete(e);
        }
    }

    /// Processes an acknowledgement received at slot `t`. `histories` holds
    /// every user's indicators newest-first, entry `d` describing slot `t-d`.
    /// Each waiting experience within reach gets its rewards filled and moves
    /// to the sampling ring; the rest can never be completed and are dropped.
    /// The waiting list is empty afterwards.
    pub fn recover(&mut self, t: usize, histories: &[Vec<Indicator>]) {
        while let Some(mut e) = self.incomplete.pop_front() {
            let depth = t - e.slot;
            debug_assert!(depth >= 1, "current slot must be stored after recover");
            if depth < self.k {
                e.rewards = RewardVector::from_histories_at(histories, depth);
                self.stats.recovered += 1;
                self.push_complete(e);
            } else {
                self.stats.discarded += 1;
            }
        }
    }

    /// Uniform sample of `n` distinct experiences, or `None` until the ring
    /// holds at least `n`.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Option<Vec<&Experience>> {
        if self.complete.len() < n {
            return None;
        }
        let picks = rand::seq::index::sample(rng, self.complete.len(), n);
        Some(picks.into_iter().map(|i| &self.complete[i]).collect())
    }

    /// One CSV row per held experience, waiting ones included.
    pub fn dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "slot,u,rewards,complete")?;
        for (e, complete) in self
            .complete
            .iter()
            .map(|e| (e, 1))
            .chain(self.incomplete.iter().map(|e| (e, 0)))
        {
            let rewards: String = e
                .rewards
                .0
                .iter()
                .map(|r| match r {
                    Reward::Zero => '0',
                    Reward::One => '1',
                    Reward::Unknown => 'U',
                })
                .collect();
            writeln!(w, "{},{},{},{}", e.slot, e.u, rewards, complete)?;
        }
        Ok(())
    }

    fn push_complete(&mut self, e: Experience) {
        self.complete.push_back(e);
        if self.complete.len() > self.capacity {
            self.complete.pop_front();
        }
    }

    /// Drops waiting experiences too old for any future acknowledgement to
    /// reach (`t - slot >= k` only grows from here).
    fn expire(&mut self, t: usize) {
        while let Some(front) = self.incomplete.front() {
            if t - front.slot >= self.k {
                self.incomplete.pop_front();
                self.stats.discarded += 1;
            } else {
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp(slot: usize, rewards: RewardVector) -> Experience {
        let state = AgentState::initial(3, 2);
        Experience { slot, state: state.clone(), u: 1, rewards, next_state: state }
    }

    fn known(slot: usize) -> Experience {
        exp(slot, RewardVector(vec![Reward::One, Reward::Zero]))
    }

    fn pending(slot: usize) -> Experience {
        exp(slot, RewardVector::unknown(2))
    }

    /// Histories `k` deep for 2 users; user 0 succeeded at depth `d`.
    fn histories(k: usize, d: usize) -> Vec<Vec<Indicator>> {
        let mut h = vec![vec![Indicator::Failure; k], vec![Indicator::Failure; k]];
        h[0][d] = Indicator::Success;
        h
    }

    #[test]
    fn routes_on_reward_knowledge() {
        let mut buf = DualBuffer::new(10, 8);
        buf.store(known(0));
        buf.store(pending(1));
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.unresolved(), 1);
        assert_eq!(
            buf.stats(),
            RecoveryStats { created: 2, direct: 1, recovered: 0, discarded: 0 }
        );
    }

    #[test]
    fn ring_evicts_oldest_at_capacity() {
        let mut buf = DualBuffer::new(3, 8);
        for slot in 0..4 {
            buf.store(known(slot));
        }
        assert_eq!(buf.len(), 3);
        let slots: Vec<usize> = buf.complete.iter().map(|e| e.slot).collect();
        assert_eq!(slots, vec![1, 2, 3]);
    }

    #[test]
    fn recovers_rewards_at_depth() {
        let mut buf = DualBuffer::new(10, 8);
        buf.store(pending(10));
        // Acknowledgement arrives three slots later; depth-3 entry covers
        // slot 10, where user 0 succeeded.
        buf.recover(13, &histories(8, 3));
        assert_eq!(buf.unresolved(), 0);
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.complete[0].rewards, RewardVector(vec![Reward::One, Reward::Zero]));
        assert_eq!(buf.complete[0].slot, 10);
        assert_eq!(buf.stats().recovered, 1);
    }

    #[test]
    fn depth_one_history_recovers_nothing() {
        // k = 1 keeps only the acknowledged slot itself, so a lost
        // acknowledgement is never repaired.
        let mut buf = DualBuffer::new(10, 1);
        buf.store(pending(5));
        buf.recover(6, &histories(1, 0));
        assert_eq!(buf.len(), 0);
        assert_eq!(buf.stats().discarded, 1);
    }

    #[test]
    fn too_old_entries_are_discarded_on_recovery() {
        let mut buf = DualBuffer::new(10, 4);
        buf.store(pending(10)); // depth will be 4 = k: out of reach
        buf.store(pending(12)); // depth 2: recoverable
        buf.recover(14, &histories(4, 2));
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.complete[0].slot, 12);
        assert_eq!(buf.complete[0].rewards, RewardVector(vec![Reward::One, Reward::Zero]));
        let s = buf.stats();
        assert_eq!((s.recovered, s.discarded), (1, 1));
        assert_eq!(buf.unresolved(), 0);
    }

    #[test]
    fn unreachable_entries_expire_without_acknowledgement() {
        let mut buf = DualBuffer::new(10, 2);
        buf.store(pending(0));
        buf.store(pending(1)); // slot 0 still in reach (age 1 < k)
        assert_eq!(buf.unresolved(), 2);
        buf.store(pending(2)); // slot 0 now at age 2 = k: gone
        assert_eq!(buf.unresolved(), 2);
        assert_eq!(buf.stats().discarded, 1);
    }

    #[test]
    fn sample_is_distinct_and_gated() {
        let mut buf = DualBuffer::new(100, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(buf.sample(1, &mut rng).is_none());
        for slot in 0..10 {
            buf.store(known(slot));
        }
        assert!(buf.sample(11, &mut rng).is_none());
        let picks = buf.sample(10, &mut rng).unwrap();
        let mut slots: Vec<usize> = picks.iter().map(|e| e.slot).collect();
        slots.sort_unstable();
        // Sampling without replacement at full size is a permutation.
        assert_eq!(slots, (0..10).collect::<Vec<_>>());
        let small = buf.sample(4, &mut rng).unwrap();
        let mut seen: Vec<usize> = small.iter().map(|e| e.slot).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut buf = DualBuffer::new(100, 8);
        for slot in 0..50 {
            buf.store(known(slot));
        }
        let a: Vec<usize> = buf
            .sample(8, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap()
            .iter()
            .map(|e| e.slot)
            .collect();
        let b: Vec<usize> = buf
            .sample(8, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap()
            .iter()
            .map(|e| e.slot)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn dump_lists_both_kinds() {
        let mut buf = DualBuffer::new(10, 8);
        buf.store(known(3));
        buf.store(pending(4));
        let mut out = Vec::new();
        buf.dump(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "slot,u,rewards,complete");
        assert_eq!(lines[1], "3,1,10,1");
        assert_eq!(lines[2], "4,1,UU,0");
    }

    /// Coin-flip acknowledgement losses: the fraction of experiences that
    /// end up permanently incomplete should track e^k.
    #[test]
    fn permanent_loss_fraction_tracks_the_law() {
        let (e_down, k, slots) = (0.3f64, 3usize, 40_000usize);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut buf = DualBuffer::new(64, k);
        let h = vec![vec![Indicator::Failure; k]; 2];
        for t in 0..slots {
            let ack = rng.random::<f64>() >= e_down;
            if ack {
                buf.recover(t, &h);
                buf.store(known(t));
            } else {
                buf.store(pending(t));
            }
        }
        let s = buf.stats();
        let settled = s.created - buf.unresolved();
        let frac = s.discarded as f64 / settled as f64;
        let p = e_down.powi(k as i32);
        let se = (p * (1.0 - p) / settled as f64).sqrt();
        assert!(
            (frac - p).abs() < 3.0 * se,
            "fraction {frac} vs law {p} (3se = {})",
            3.0 * se
        );
    }
}
