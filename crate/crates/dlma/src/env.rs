//! The shared channel: user population, per-slot transmission outcomes,
//! packet erasures on both links, and the access point's acknowledgements.
//!
//! Time is slotted. Any number of users may transmit in a slot; a lone
//! transmission succeeds unless the uplink erases it, and two or more
//! transmissions always collide. After every slot the access point broadcasts
//! an acknowledgement carrying, per user, the last `k` success indicators plus
//! the agents' running throughputs; the downlink may erase that packet per
//! agent. Non-agent users never consume feedback.

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::rng::SeedSplitter;

/// Transmission discipline of one user.
#[derive(Debug, Clone, PartialEq)]
pub enum UserSpec {
    /// Learned protocol; actions are supplied externally each slot.
    Agent,
    /// Transmits in fixed positions of a repeating frame (zero-indexed).
    Tdma { frame: usize, slots: Vec<usize> },
    /// Transmits each slot independently with probability `p`.
    Aloha { p: f64 },
}

/// One user plus its per-user uplink override (None = channel-wide rate).
#[derive(Debug, Clone, PartialEq)]
pub struct UserConfig {
    pub spec: UserSpec,
    pub e_up: Option<f64>,
}

impl UserConfig {
    pub fn new(spec: UserSpec) -> Self {
        Self { spec, e_up: None }
    }

    pub fn kind_label(&self) -> &'static str {
        match self.spec {
            UserSpec::Agent => "agent",
            UserSpec::Tdma { .. } => "tdma",
            UserSpec::Aloha { .. } => "aloha",
        }
    }
}

/// Whether agents lose a given acknowledgement together or independently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DownlinkMode {
    /// One erasure draw per slot applies to every agent.
    #[serde(rename = "dependent")]
    Dependent,
    /// Each agent suffers its own independent erasure draw.
    #[serde(rename = "independent")]
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    /// Uplink (data packet) erasure probability, uniform across users unless
    /// a user carries an override.
    pub e_up: f64,
    /// Downlink (acknowledgement) erasure probability per agent.
    pub e_down: f64,
    pub mode: DownlinkMode,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { e_up: 0.0, e_down: 0.0, mode: DownlinkMode::Dependent }
    }
}

/// Per-user outcome of one slot as the access point saw it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Indicator {
    Success,
    Failure,
}

impl Indicator {
    pub fn symbol(self) -> char {
        match self {
            Indicator::Success => 'S',
            Indicator::Failure => 'F',
        }
    }
}

/// Everything that happened on the channel in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotResult {
    pub slot: usize,
    pub transmitted: Vec<bool>,
    /// Per user: Success iff it transmitted alone and the uplink kept the
    /// packet. Silent users and collision participants get Failure.
    pub indicators: Vec<Indicator>,
    /// True iff at least one user transmitted.
    pub busy: bool,
}

/// Acknowledgement packet broadcast after a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct AckPacket {
    pub slot: usize,
    /// Per user, newest first: indicators of slots `t, t-1, ..., t-k+1`,
    /// padded with Failure for slots before the run began.
    pub histories: Vec<Vec<Indicator>>,
    /// Running throughput of each agent (users `0..l`) including this slot.
    pub agent_throughputs: Vec<f64>,
}

/// Running per-user throughput: successes over elapsed slots, or over a
/// trailing window when one is configured.
#[derive(Debug, Clone)]
pub struct ThroughputTracker {
    successes: Vec<u64>,
    elapsed: u64,
    window: Option<WindowState>,
}

#[derive(Debug, Clone)]
struct WindowState {
    len: usize,
    recent: Vec<VecDeque<bool>>,
    counts: Vec<u64>,
}

impl ThroughputTracker {
    pub fn new(n_users: usize, window: Option<usize>) -> Self {
        let window = window.map(|len| WindowState {
            len,
            recent: vec![VecDeque::with_capacity(len); n_users],
            counts: vec![0; n_users],
        });
        Self { successes: vec![0; n_users], elapsed: 0, window }
    }

    pub fn update(&mut self, result: &SlotResult) {
        self.elapsed += 1;
        for (i, ind) in result.indicators.iter().enumerate() {
            let ok = *ind == Indicator::Success;
            if ok {
                self.successes[i] += 1;
            }
            if let Some(w) = &mut self.window {
                if w.recent[i].len() == w.len {
                    if w.recent[i].pop_front() == Some(true) {
                        w.counts[i] -= 1;
                    }
                }
                w.recent[i].push_back(ok);
                if ok {
                    w.counts[i] += 1;
                }
            }
        }
    }

    /// Current throughput of every user. Zero before any slot elapsed.
    pub fn snapshot(&self) -> Vec<f64> {
        if self.elapsed == 0 {
            return vec![0.0; self.successes.len()];
        }
        match &self.window {
            Some(w) => w
                .counts
                .iter()
                .zip(&w.recent)
                .map(|(&c, r)| c as f64 / r.len().max(1) as f64)
                .collect(),
            None => self.successes.iter().map(|&s| s as f64 / self.elapsed as f64).collect(),
        }
    }
}

/// The channel simulator: owns user specs, erasure draws, the indicator
/// history feeding acknowledgements, and the throughput ledger.
pub struct Env {
    users: Vec<UserConfig>,
    channel: ChannelConfig,
    k: usize,
    uplink_rng: ChaCha8Rng,
    downlink_rng: ChaCha8Rng,
    aloha_rngs: Vec<Option<ChaCha8Rng>>,
    history: Vec<VecDeque<Indicator>>,
    tracker: ThroughputTracker,
}

impl Env {
    /// `k` is the acknowledgement history depth (entries per user per ACK).
    pub fn new(
        users: Vec<UserConfig>,
        channel: ChannelConfig,
        k: usize,
        throughput_window: Option<usize>,
        seeds: &SeedSplitter,
    ) -> Self {
        assert!(k >= 1, "ack history depth must be at least 1");
        let n = users.len();
        let aloha_rngs = users
            .iter()
            .enumerate()
            .map(|(i, u)| match u.spec {
                UserSpec::Aloha { .. } => Some(seeds.stream(&format!("aloha/{i}"))),
                _ => None,
            })
            .collect();
        Self {
            users,
            channel,
            k,
            uplink_rng: seeds.stream("uplink"),
            downlink_rng: seeds.stream("downlink"),
            aloha_rngs,
            history: vec![VecDeque::with_capacity(k); n],
            tracker: ThroughputTracker::new(n, throughput_window),
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn users(&self) -> &[UserConfig] {
        &self.users
    }

    pub fn tracker(&self) -> &ThroughputTracker {
        &self.tracker
    }

    /// Action of a scheduled or random-access user in slot `t`.
    /// Panics when called for an agent: agents decide for themselves.
    pub fn non_agent_action(&mut self, user: usize, t: usize) -> bool {
        match &self.users[user].spec {
            UserSpec::Agent => panic!("non_agent_action called for agent user {user}"),
            UserSpec::Tdma { frame, slots } => slots.contains(&(t % frame)),
            UserSpec::Aloha { p } => {
                let p = *p;
                self.aloha_rngs[user]
                    .as_mut()
                    .expect("aloha rng")
                    .random::<f64>()
                    < p
            }
        }
    }

    /// Resolves one slot given everyone's transmit decisions, then records the
    /// outcome in the acknowledgement history and the throughput ledger.
    ///
    /// A lone transmission consumes exactly one uplink draw; collisions and
    /// silent slots consume none, so uplink draws depend only on the pattern
    /// of lone transmissions.
    pub fn step(&mut self, t: usize, transmitted: Vec<bool>) -> SlotResult {
        assert_eq!(transmitted.len(), self.users.len(), "one decision per user");
        let tx_count = transmitted.iter().filter(|&&b| b).count();
        let mut indicators = vec![Indicator::Failure; self.users.len()];
        if tx_count == 1 {
            let who = transmitted.iter().position(|&b| b).unwrap();
            let e_up = self.users[who].e_up.unwrap_or(self.channel.e_up);
            if !(self.uplink_rng.random::<f64>() < e_up) {
                indicators[who] = Indicator::Success;
            }
        }
        let result = SlotResult { slot: t, transmitted, indicators, busy: tx_count > 0 };
        for (i, &ind) in result.indicators.iter().enumerate() {
            if self.history[i].len() == self.k {
                self.history[i].pop_back();
            }
            self.history[i].push_front(ind);
        }
        self.tracker.update(&result);
        result
    }

    /// The acknowledgement for the slot most recently passed to [`step`].
    /// `l` is the number of agents (users `0..l`).
    ///
    /// [`step`]: Env::step
    pub fn build_ack(&self, t: usize, l: usize) -> AckPacket {
        let histories = self
            .history
            .iter()
            .map(|h| {
                let mut v: Vec<Indicator> = h.iter().copied().collect();
                v.resize(self.k, Indicator::Failure); // slots before the run
                v
            })
            .collect();
        let agent_throughputs = self.tracker.snapshot()[..l].to_vec();
        AckPacket { slot: t, histories, agent_throughputs }
    }

    /// Downlink outcome for each agent this slot: true = ACK received.
    /// Dependent mode consumes one draw, independent mode one per agent.
    pub fn deliver_ack(&mut self, l: usize) -> Vec<bool> {
        let e = self.channel.e_down;
        match self.channel.mode {
            DownlinkMode::Dependent => {
                let ok = !(self.downlink_rng.random::<f64>() < e);
                vec![ok; l]
            }
            DownlinkMode::Independent => {
                (0..l).map(|_| !(self.downlink_rng.random::<f64>() < e)).collect()
            }
        }
    }
}
