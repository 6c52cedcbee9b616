//! Per-agent learning runtime: the loss over sampled experience batches, the
//! exploration schedule, and the once-per-slot cadence of select, absorb,
//! train, and target sync.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{
    derive_rewards, encode_into, encoded_width, greedy_network_action, observe,
    select_agent_action, select_network_action, AgentState, ChannelState, QVector, Reward,
};
use crate::env::AckPacket;
use crate::neural::rmsprop::RmsProp;
use crate::neural::{Gradients, NetConfig, Network, Scalar};
use crate::replay::{DualBuffer, Experience, RecoveryStats};
use crate::rng::SeedSplitter;
use crate::{Error, Real, Result};

/// Learning hyperparameters. Defaults are the published operating point; the
/// optimizer settings are conventional RMSProp with a hyperbolic step-size
/// anneal, which lets early training move fast while a converged policy stays
/// put (RMSProp normalizes gradient scale, so with a constant step the
/// weights keep diffusing at the noise floor no matter how converged the
/// policy is).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// State window depth M.
    pub m: usize,
    /// Acknowledgement history depth K.
    pub k: usize,
    /// Discount γ.
    pub gamma: f64,
    /// Complete-experience ring size.
    pub buffer_capacity: usize,
    /// Batch size N_E sampled per training step.
    pub minibatch: usize,
    /// Target network refresh period F, in slots.
    pub target_sync: usize,
    pub eps_init: f64,
    pub eps_decay: f64,
    pub eps_floor: f64,
    /// Initial RMSProp step size.
    pub lr: f64,
    /// Step-size anneal time constant in slots: the step size at slot `t` is
    /// `lr * lr_tau / (lr_tau + t)`. Zero keeps the step size constant.
    pub lr_tau: f64,
    pub rho: f64,
    pub eps_rms: f64,
    /// Global-norm bound applied to each batch gradient.
    pub grad_clip: f64,
    /// LSTM and dense width.
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            m: 20,
            k: 8,
            gamma: 0.9,
            buffer_capacity: 1000,
            minibatch: 64,
            target_sync: 20,
            eps_init: 1.0,
            eps_decay: 0.995,
            eps_floor: 0.05,
            lr: 5e-4,
            lr_tau: 15_000.0,
            rho: 0.9,
            eps_rms: 1e-6,
            grad_clip: 10.0,
            hidden: 64,
        }
    }
}

impl TrainConfig {
    /// Annealed RMSProp step size for the training step run at slot `t`.
    pub fn lr_at(&self, t: usize) -> f64 {
        if self.lr_tau > 0.0 { self.lr * self.lr_tau / (self.lr_tau + t as f64) } else { self.lr }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.m < 1 {
            return bad("state window m must be at least 1");
        }
        if self.k < 1 {
            return bad("history depth k must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.minibatch < 1 || self.minibatch > self.buffer_capacity {
            return bad("minibatch must lie in [1, buffer_capacity]");
        }
        if self.target_sync < 1 {
            return bad("target_sync must be at least 1");
        }
        for (name, v) in [
            ("eps_init", self.eps_init),
            ("eps_decay", self.eps_decay),
            ("eps_floor", self.eps_floor),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.lr <= 0.0 || self.rho < 0.0 || self.rho >= 1.0 || self.eps_rms <= 0.0 {
            return bad("optimizer settings out of range");
        }
        if !self.lr_tau.is_finite() || self.lr_tau < 0.0 {
            return bad("lr_tau must be zero (constant step size) or a positive slot count");
        }
        if self.grad_clip <= 0.0 {
            return bad("grad_clip must be positive");
        }
        if self.hidden < 1 {
            return bad("hidden width must be at least 1");
        }
        Ok(())
    }
}

/// One application of the exploration decay, called once per slot.
pub fn epsilon_update(eps: f64, cfg: &TrainConfig) -> f64 {
    (eps * cfg.eps_decay).max(cfg.eps_floor)
}

/// Sum-over-batch squared error against bootstrapped targets, plus its
/// parameter gradients. The next action u' is the greedy score argmax under
/// the target network, and γ-discounted target values come from the target
/// network too, so gradients flow only through the online parameters.
pub fn loss_and_grads<F: Scalar>(
    net: &Network<F>,
    target: &Network<F>,
    batch: &[&Experience],
    l: usize,
    gamma: f64,
    alpha: f64,
) -> Result<(f64, Gradients<F>)> {
    let b = batch.len();
    assert!(b >= 1, "empty batch");
    let n_users = batch[0].state.n_users();
    let m = batch[0].state.len();
    let width = encoded_width(n_users);
    let outputs = net.config().outputs;

    // Time-major batch matrices: row t*b + i is step t of experience i, so
    // slicing every b-th row starting at i yields experience i's window.
    let mut x_now = Array2::<F>::zeros((b * m, width));
    let mut x_next = Array2::<F>::zeros((b * m, width));
    for (i, e) in batch.iter().enumerate() {
        debug_assert_eq!(e.state.n_users(), n_users);
        debug_assert!(!e.rewards.is_unknown(), "incomplete experience in batch");
        encode_into(&e.state, &mut x_now.slice_mut(ndarray::s![i..;b, ..]));
        encode_into(&e.next_state, &mut x_next.slice_mut(ndarray::s![i..;b, ..]));
    }

    let (q_now, cache) = net.forward_cached(x_now, b)?;
    let q_next = target.forward(&x_next, b)?;

    let mut dq = Array2::<F>::zeros((b, outputs));
    let mut loss = 0.0f64;
    for (i, e) in batch.iter().enumerate() {
        let row: Vec<f64> = q_next.row(i).iter().map(|&v| v.to_f64()).collect();
        let qn = QVector::from_raw(row);
        let u_next = greedy_network_action(&qn, l, alpha);
        let u = e.u as usize;

        let reward = |user: usize| -> f64 {
            match e.rewards.0[user] {
                Reward::One => 1.0,
                Reward::Zero => 0.0,
                Reward::Unknown => unreachable!("incomplete experience in batch"),
            }
        };

        // Head 0 bootstraps on the summed agent rewards; head j (one per
        // non-agent user l+j-1, 1-based j) on that user's own reward.
        let agent_sum: f64 = (0..l).map(&reward).sum();
        let y0 = agent_sum + gamma * qn.network(u_next);
        let q0 = q_now[[i, u]].to_f64();
        loss += (y0 - q0) * (y0 - q0);
        dq[[i, u]] = F::from_f64(2.0 * (q0 - y0));
        for j in 0..n_users - l {
            let yj = reward(l + j) + gamma * qn.other(j, u_next);
            let qj = q_now[[i, 2 * (j + 1) + u]].to_f64();
            loss += (yj - qj) * (yj - qj);
            dq[[i, 2 * (j + 1) + u]] = F::from_f64(2.0 * (qj - yj));
        }
    }
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss {loss}")));
    }
    Ok((loss, net.backward(&cache, &dq)))
}

/// The network action and own transmit bit chosen for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotChoice {
    /// Network action: does the agent pool transmit this slot?
    pub u: u8,
    /// This agent's own transmission bit.
    pub a: bool,
}

/// What one slot's absorb step did, for the run log.
#[derive(Debug, Clone, Copy, Default)]
pub struct SlotReport {
    /// Training loss, when a batch was trained this slot.
    pub loss: Option<f64>,
    pub eps: f64,
}

/// Everything one agent carries across slots: online and target networks,
/// optimizer state, the experience buffer, the rolling state window, the last
/// known agent throughputs, and its private randomness.
pub struct AgentRuntime {
    index: usize,
    l: usize,
    n_users: usize,
    alpha: f64,
    cfg: TrainConfig,
    net: Network<Real>,
    target: Network<Real>,
    opt: RmsProp<Real>,
    buffer: DualBuffer,
    state: AgentState,
    known: Vec<f64>,
    eps: f64,
    eps_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
}

impl AgentRuntime {
    /// `index` is the agent's user id (agents occupy users `0..l`).
    pub fn new(
        index: usize,
        l: usize,
        n_users: usize,
        alpha: f64,
        cfg: TrainConfig,
        seeds: &SeedSplitter,
    ) -> Self {
        assert!(index < l && l <= n_users);
        let net_cfg =
            NetConfig::new(encoded_width(n_users), cfg.hidden, 2 * (n_users - l + 1));
        let mut init_rng = seeds.stream(&format!("agent/{index}/init"));
        let net = Network::init(net_cfg, &mut init_rng);
        let target = net.clone();
        Self {
            index,
            l,
            n_users,
            alpha,
            cfg,
            opt: RmsProp::new(net_cfg, cfg.lr, cfg.rho, cfg.eps_rms),
            net,
            target,
            buffer: DualBuffer::new(cfg.buffer_capacity, cfg.k),
            state: AgentState::initial(cfg.m, n_users),
            known: vec![0.0; l],
            eps: cfg.eps_init,
            eps_rng: seeds.stream(&format!("agent/{index}/eps")),
            replay_rng: seeds.stream(&format!("agent/{index}/replay")),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    pub fn network(&self) -> &Network<Real> {
        &self.net
    }

    pub fn buffer(&self) -> &DualBuffer {
        &self.buffer
    }

    pub fn recovery_stats(&self) -> RecoveryStats {
        self.buffer.stats()
    }

    /// Both selection stages for the current slot: ε-greedy over the network
    /// action (Q evaluated only when exploiting), then the deterministic
    /// lowest-throughput election for the agent's own bit.
    pub fn select(&mut self) -> Result<SlotChoice> {
        let mut fault = None;
        let (net, state, eps_rng) = (&self.net, &self.state, &mut self.eps_rng);
        let u = select_network_action(self.eps, eps_rng, self.l, self.alpha, || {
            match Self::evaluate(net, state) {
                Ok(q) => q,
                Err(e) => {
                    let width = net.config().outputs;
                    fault = Some(e);
                    QVector::from_raw(vec![0.0; width])
                }
            }
        });
        if let Some(e) = fault {
            return Err(e);
        }
        let a = select_agent_action(u, &self.known, self.index);
        Ok(SlotChoice { u, a })
    }

    fn evaluate(net: &Network<Real>, state: &AgentState) -> Result<QVector> {
        let x = crate::agent::encode::<Real>(state);
        let q = net.forward(&x, 1)?;
        Ok(QVector::from_raw(q.row(0).iter().map(|&v| v.to_f64()).collect()))
    }

    /// Digests one finished slot: updates known throughputs, derives rewards
    /// and the observation, advances the state window, stores (and possibly
    /// recovers) experiences, trains once if the buffer is ready, refreshes
    /// the target on the sync cadence, and decays ε.
    pub fn absorb(
        &mut self,
        t: usize,
        choice: SlotChoice,
        busy: bool,
        ack: Option<&AckPacket>,
    ) -> Result<SlotReport> {
        if let Some(ack) = ack {
            debug_assert_eq!(ack.slot, t);
            self.known.copy_from_slice(&ack.agent_throughputs);
        }
        let rewards = derive_rewards(ack.map(|a| a.histories.as_slice()), self.n_users);
        let own = ack.map(|a| a.histories[self.index][0]);
        let observation = observe(choice.a, busy, own);
        let next = self.state.advanced(ChannelState {
            transmitted: choice.a,
            observation,
            rewards: rewards.clone(),
        });

        if let Some(ack) = ack {
            self.buffer.recover(t, &ack.histories);
        }
        self.buffer.store(Experience {
            slot: t,
            state: self.state.clone(),
            u: choice.u,
            rewards,
            next_state: next.clone(),
        });

        let loss = if self.buffer.len() >= self.cfg.minibatch {
            let batch = self
                .buffer
                .sample(self.cfg.minibatch, &mut self.replay_rng)
                .expect("gated on buffer length");
            let (loss, mut grads) = loss_and_grads(
                &self.net,
                &self.target,
                &batch,
                self.l,
                self.cfg.gamma,
                self.alpha,
            )
            .map_err(|e| match e {
                Error::Numeric(detail) => Error::Fault { slot: t, detail },
                other => other,
            })?;
            grads.clip_global_norm(self.cfg.grad_clip);
            self.opt.set_lr(self.cfg.lr_at(t));
            self.opt.step(&mut self.net, &grads);
            Some(loss)
        } else {
            None
        };

        if t % self.cfg.target_sync == 0 {
            self.target.sync_from(&self.net);
        }
        self.eps = epsilon_update(self.eps, &self.cfg);
        self.state = next;
        Ok(SlotReport { loss, eps: self.eps })
    }
}
