//! What one agent knows and how it acts.
//!
//! Each slot the agent sees only its own action, a carrier-sense bit when it
//! stayed silent, and (when the downlink delivers) the acknowledgement's
//! per-user indicators and agent throughputs. Those become categorical
//! channel states; the last `m` of them form the state window fed to the
//! value network. Action selection is two-staged: first an epsilon-greedy
//! choice of the *network* action ("should any agent transmit?"), then a
//! deterministic election of which agent does so, based on the most recently
//! known throughputs.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayViewMut2};
use rand::Rng;

use crate::env::Indicator;
use crate::fairness;
use crate::neural::Scalar;

/// What the agent observed about the channel in one slot (one of five
/// mutually exclusive symbols).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    /// Stayed silent; someone else transmitted.
    Busy,
    /// Stayed silent; nobody transmitted.
    Idle,
    /// Transmitted and the acknowledgement reported success.
    Success,
    /// Transmitted and the acknowledgement reported failure.
    Failure,
    /// Transmitted but the acknowledgement never arrived.
    Unknown,
}

/// Per-user reward as the agent knows it. `Unknown` marks feedback that was
/// lost on the downlink and may be recovered from a later acknowledgement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reward {
    Zero,
    One,
    Unknown,
}

/// One reward entry per user (agents first, then the others).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RewardVector(pub Vec<Reward>);

impl RewardVector {
    pub fn unknown(n_users: usize) -> Self {
        Self(vec![Reward::Unknown; n_users])
    }

    pub fn is_unknown(&self) -> bool {
        // All entries share one acknowledgement, so one Unknown means all.
        self.0.first() == Some(&Reward::Unknown)
    }

    /// Rewards read off received acknowledgement histories (newest entry).
    pub fn from_histories(histories: &[Vec<Indicator>]) -> Self {
        Self::from_histories_at(histories, 0)
    }

    /// Rewards for the slot `depth` entries back in the histories (entry 0 is
    /// the acknowledged slot itself). Used to back-fill an experience whose
    /// own acknowledgement was lost from one that arrived later.
    pub fn from_histories_at(histories: &[Vec<Indicator>], depth: usize) -> Self {
        Self(
            histories
                .iter()
                .map(|h| match h[depth] {
                    Indicator::Success => Reward::One,
                    Indicator::Failure => Reward::Zero,
                })
                .collect(),
        )
    }
}

/// Rewards for the current slot: all `Unknown` when the acknowledgement was
/// lost, otherwise read from the newest indicator of every user's history.
pub fn derive_rewards(histories: Option<&[Vec<Indicator>]>, n_users: usize) -> RewardVector {
    match histories {
        None => RewardVector::unknown(n_users),
        Some(h) => {
            debug_assert_eq!(h.len(), n_users);
            RewardVector::from_histories(h)
        }
    }
}

/// The observation symbol for a slot.
///
/// `busy` is the carrier-sense bit (did anyone else transmit?) and is only
/// consulted when the agent stayed silent; a transmitting agent cannot listen.
/// `own` is this agent's indicator from the acknowledgement, `None` when the
/// acknowledgement was lost.
pub fn observe(transmitted: bool, busy: bool, own: Option<Indicator>) -> Observation {
    if transmitted {
        match own {
            Some(Indicator::Success) => Observation::Success,
            Some(Indicator::Failure) => Observation::Failure,
            None => Observation::Unknown,
        }
    } else if busy {
        Observation::Busy
    } else {
        Observation::Idle
    }
}

/// The agent's record of one slot: its action, what it observed, and the
/// per-user rewards as known at the time (never retro-edited).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelState {
    pub transmitted: bool,
    pub observation: Observation,
    pub rewards: RewardVector,
}

/// Sliding window of the last `m` channel states, newest first. Slots before
/// the run began appear as `None` and encode to all-zero rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentState {
    n_users: usize,
    window: VecDeque<Option<ChannelState>>,
}

impl AgentState {
    pub fn initial(m: usize, n_users: usize) -> Self {
        assert!(m >= 1);
        Self { n_users, window: VecDeque::from(vec![None; m]) }
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    /// Entries newest first; index 0 is the most recent slot.
    pub fn entries(&self) -> impl Iterator<Item = Option<&ChannelState>> {
        self.window.iter().map(|e| e.as_ref())
    }

    /// The window advanced by one slot: `next` becomes the newest entry and
    /// the oldest falls off. Pure; the receiver is untouched.
    pub fn advanced(&self, next: ChannelState) -> AgentState {
        assert_eq!(next.rewards.0.len(), self.n_users, "reward entry per user");
        let mut window = self.window.clone();
        window.pop_back();
        window.push_front(Some(next));
        AgentState { n_users: self.n_users, window }
    }
}

/// Width of one encoded channel-state row: one-hot action (2), one-hot
/// observation (5), and a one-hot {0, 1, unknown} reward per user (3n).
pub fn encoded_width(n_users: usize) -> usize {
    7 + 3 * n_users
}

/// Encodes the window into `out` (shape `[m, encoded_width]`), oldest slot in
/// row 0 so rows feed the recurrent network in time order.
pub fn encode_into<F: Scalar>(state: &AgentState, out: &mut ArrayViewMut2<'_, F>) {
    let m = state.window.len();
    let width = encoded_width(state.n_users);
    assert_eq!(out.shape(), [m, width], "encode buffer shape");
    out.fill(F::zero());
    for (i, entry) in state.window.iter().enumerate() {
        let Some(c) = entry else { continue }; // padding row stays zero
        let mut row = out.row_mut(m - 1 - i);
        row[usize::from(c.transmitted)] = F::one();
        let obs = match c.observation {
            Observation::Busy => 0,
            Observation::Idle => 1,
            Observation::Success => 2,
            Observation::Failure => 3,
            Observation::Unknown => 4,
        };
        row[2 + obs] = F::one();
        for (u, r) in c.rewards.0.iter().enumerate() {
            let slot = match r {
                Reward::Zero => 0,
                Reward::One => 1,
                Reward::Unknown => 2,
            };
            row[7 + 3 * u + slot] = F::one();
        }
    }
}

/// Convenience allocation wrapper around [`encode_into`].
pub fn encode<F: Scalar>(state: &AgentState) -> Array2<F> {
    let mut out = Array2::zeros((state.len(), encoded_width(state.n_users)));
    encode_into(state, &mut out.view_mut());
    out
}

/// Value-head estimates for both candidate network actions.
///
/// Layout: head 0 is the agents' collective head; heads `1..` are the
/// non-agent users in index order. Flat storage `[head][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QVector {
    values: Vec<f64>,
}

impl QVector {
    pub fn from_raw(values: Vec<f64>) -> Self {
        assert!(values.len() >= 2 && values.len() % 2 == 0, "pairs of action values");
        Self { values }
    }

    pub fn width(&self) -> usize {
        self.values.len()
    }

    pub fn n_heads(&self) -> usize {
        self.values.len() / 2
    }

    /// Collective agents' head.
    pub fn network(&self, action: u8) -> f64 {
        self.values[usize::from(action)]
    }

    /// Non-agent head `i` (0-based over the non-agent users in order).
    pub fn other(&self, i: usize, action: u8) -> f64 {
        self.values[2 * (i + 1) + usize::from(action)]
    }

    fn others(&self, action: u8) -> Vec<f64> {
        (0..self.n_heads() - 1).map(|i| self.other(i, action)).collect()
    }

    /// Alpha-fair score of taking `action`, given `l` agents.
    pub fn score(&self, action: u8, l: usize, alpha: f64) -> f64 {
        fairness::network_score(self.network(action), &self.others(action), l, alpha)
    }
}

/// Greedy network action: the score argmax, ties resolved toward transmitting.
pub fn greedy_network_action(q: &QVector, l: usize, alpha: f64) -> u8 {
    u8::from(q.score(1, l, alpha) >= q.score(0, l, alpha))
}

/// Stage one: epsilon-greedy network action. With probability `eps` a uniform
/// random bit; otherwise the greedy score argmax. `q_eval` runs only on the
/// greedy path, so exploration slots skip the network forward pass.
pub fn select_network_action<R: Rng, Q: FnOnce() -> QVector>(
    eps: f64,
    rng: &mut R,
    l: usize,
    alpha: f64,
    q_eval: Q,
) -> u8 {
    assert!((0.0..=1.0).contains(&eps), "eps out of range: {eps}");
    if rng.random::<f64>() < eps {
        u8::from(rng.random::<bool>())
    } else {
        greedy_network_action(&q_eval(), l, alpha)
    }
}

/// Stage two: the agent transmits iff the network action says transmit *and*
/// this agent holds the strictly lowest known throughput, earlier agents
/// winning ties. Exactly one agent satisfies this for any throughput vector,
/// so agents sharing identical knowledge never collide with each other.
pub fn select_agent_action(u: u8, known: &[f64], agent: usize) -> bool {
    assert!(agent < known.len());
    if u == 0 {
        return false;
    }
    let mine = known[agent];
    known[..agent].iter().all(|&y| y > mine) && known[agent + 1..].iter().all(|&y| y >= mine)
}
