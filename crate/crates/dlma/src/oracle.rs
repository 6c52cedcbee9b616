//! Model-aware coexistence benchmark: exact expected per-user throughputs of
//! an agent pool that follows a frame-periodic transmit policy against known
//! TDMA and ALOHA users, plus a search for the policy maximizing the
//! alpha-fair objective. The benchmark user has perfect feedback, so the
//! downlink erasure rate plays no role here.

use num_integer::lcm;
use rand::Rng;

use crate::env::{ChannelConfig, Env, UserConfig, UserSpec};
use crate::fairness;
use crate::rng::SeedSplitter;
use crate::{Error, Result};

/// Longest supported policy frame for the optimum search.
pub const MAX_FRAME: usize = 32;

/// Per-frame-position transmit probability of the agent pool. Position `j`
/// governs slots `t` with `t % frame == j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicPolicy {
    p: Vec<f64>,
}

impl PeriodicPolicy {
    pub fn new(p: Vec<f64>) -> Self {
        assert!(!p.is_empty(), "policy frame must be non-empty");
        assert!(
            p.iter().all(|v| (0.0..=1.0).contains(v)),
            "transmit probabilities must lie in [0, 1]"
        );
        Self { p }
    }

    pub fn frame(&self) -> usize {
        self.p.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.p
    }
}

/// Common frame: the least common multiple of all TDMA frames (1 if none).
pub fn frame_length(users: &[UserConfig]) -> usize {
    users
        .iter()
        .filter_map(|u| match u.spec {
            UserSpec::Tdma { frame, .. } => Some(frame),
            _ => None,
        })
        .fold(1, lcm)
}

/// Number of leading agent users; every agent must precede every non-agent.
fn agent_count(users: &[UserConfig]) -> usize {
    let l = users.iter().filter(|u| matches!(u.spec, UserSpec::Agent)).count();
    assert!(
        users[..l].iter().all(|u| matches!(u.spec, UserSpec::Agent)),
        "agents must come first in the user list"
    );
    l
}

/// Which TDMA users transmit at each position of a `frame`-slot cycle.
fn tdma_schedule(users: &[UserConfig], frame: usize) -> Vec<Vec<usize>> {
    let mut at = vec![Vec::new(); frame];
    for (i, u) in users.iter().enumerate() {
        if let UserSpec::Tdma { frame: f, slots } = &u.spec {
            for (j, set) in at.iter_mut().enumerate() {
                if slots.contains(&(j % f)) {
                    set.push(i);
                }
            }
        }
    }
    at
}

fn uplink_keep(users: &[UserConfig], ch: &ChannelConfig, user: usize) -> f64 {
    1.0 - users[user].e_up.unwrap_or(ch.e_up)
}

/// Exact expected per-user throughput under `policy`.
///
/// Model-aware semantics: the pool knows every TDMA schedule and defers at
/// scheduled positions, so its effective transmit probability there is zero
/// regardless of the policy entry. When the pool transmits, exactly one agent
/// does, taken round-robin over the pool's successive transmissions; every
/// TDMA-free position carries the same ALOHA-silence probability, so that
/// rotation hands each agent exactly a 1/l share of the pool's transmission
/// opportunities (its own uplink factor then applies). The policy frame must
/// be a multiple of every TDMA frame.
pub fn evaluate_policy(
    policy: &PeriodicPolicy,
    users: &[UserConfig],
    ch: &ChannelConfig,
) -> Vec<f64> {
    let frame = policy.frame();
    assert_eq!(
        frame % frame_length(users),
        0,
        "policy frame must be a multiple of the TDMA frames' lcm"
    );
    let l = agent_count(users);
    let schedule = tdma_schedule(users, frame);
    let alohas: Vec<(usize, f64)> = users
        .iter()
        .enumerate()
        .filter_map(|(i, u)| match u.spec {
            UserSpec::Aloha { p } => Some((i, p)),
            _ => None,
        })
        .collect();

    // Per position: probability every ALOHA stays silent, and the pool's
    // effective (deferral-adjusted) transmit probability.
    let aloha_silent: Vec<f64> =
        (0..frame).map(|_| alohas.iter().map(|&(_, q)| 1.0 - q).product()).collect();
    let pi: Vec<f64> = (0..frame)
        .map(|j| if schedule[j].is_empty() { policy.p[j] } else { 0.0 })
        .collect();

    let mut x = vec![0.0; users.len()];

    // TDMA user m succeeds at its position iff it is the lone scheduled user
    // there, the pool defers or stays silent, every ALOHA is silent, and the
    // uplink keeps the packet. ALOHA k succeeds at TDMA-free positions iff it
    // transmits while the pool, every other ALOHA, and the uplink cooperate.
    for j in 0..frame {
        match schedule[j].as_slice() {
            [] => {
                for &(k, q) in &alohas {
                    let others: f64 = alohas
                        .iter()
                        .filter(|&&(k2, _)| k2 != k)
                        .map(|&(_, q2)| 1.0 - q2)
                        .product();
                    x[k] += q * (1.0 - pi[j]) * others * uplink_keep(users, ch, k);
                }
            }
            [m] => x[*m] += (1.0 - pi[j]) * aloha_silent[j] * uplink_keep(users, ch, *m),
            _ => {} // two or more scheduled users collide; everyone fails
        }
    }
    for v in x.iter_mut() {
        *v /= frame as f64;
    }

    // Agents: the pool's per-slot success mass, split equally by the
    // transmission-count rotation, each share keeping its own uplink factor.
    if l > 0 {
        let pool: f64 =
            (0..frame).map(|j| pi[j] * aloha_silent[j]).sum::<f64>() / frame as f64;
        for i in 0..l {
            x[i] = pool / l as f64 * uplink_keep(users, ch, i);
        }
    }
    x
}

/// Alpha-fair objective of a policy's exact throughputs.
fn policy_objective(
    policy: &PeriodicPolicy,
    users: &[UserConfig],
    ch: &ChannelConfig,
    alpha: f64,
) -> f64 {
    fairness::objective(&evaluate_policy(policy, users, ch), alpha)
}

/// Best deterministic (0/1) policy.
///
/// At `alpha` = 0 the objective is a sum of per-position terms, each linear in
/// its own probability, so the per-position argmax is the exact global argmax
/// over all of `[0,1]^frame` — vertex enumeration made separable. For
/// `alpha` > 0 the positions couple through the utilities and every vertex is
/// visited (exponential in the number of TDMA-free positions).
fn vertex_optimum(
    users: &[UserConfig],
    ch: &ChannelConfig,
    alpha: f64,
    frame: usize,
) -> (PeriodicPolicy, f64) {
    let schedule = tdma_schedule(users, frame);
    let free: Vec<usize> =
        (0..frame).filter(|&j| schedule[j].is_empty()).collect();
    let mut best = PeriodicPolicy::new(vec![0.0; frame]);
    let mut best_obj = policy_objective(&best, users, ch, alpha);

    if alpha == 0.0 {
        for &j in &free {
            let mut trial = best.clone();
            trial.p[j] = 1.0;
            let obj = policy_objective(&trial, users, ch, alpha);
            if obj > best_obj {
                best = trial;
                best_obj = obj;
            }
        }
        return (best, best_obj);
    }

    for mask in 0u64..(1u64 << free.len()) {
        let mut p = vec![0.0; frame];
        for (bit, &j) in free.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                p[j] = 1.0;
            }
        }
        let trial = PeriodicPolicy::new(p);
        let obj = policy_objective(&trial, users, ch, alpha);
        if obj > best_obj {
            best = trial;
            best_obj = obj;
        }
    }
    (best, best_obj)
}

/// Coordinate ascent over TDMA-free positions on a 0.01 probability grid,
/// swept to a fixed point from each start; returns the best policy found.
fn refined_optimum(
    users: &[UserConfig],
    ch: &ChannelConfig,
    alpha: f64,
    frame: usize,
    starts: &[PeriodicPolicy],
) -> (PeriodicPolicy, f64) {
    let schedule = tdma_schedule(users, frame);
    let free: Vec<usize> =
        (0..frame).filter(|&j| schedule[j].is_empty()).collect();
    let mut best = PeriodicPolicy::new(vec![0.0; frame]);
    let mut best_obj = policy_objective(&best, users, ch, alpha);

    for start in starts {
        let mut cur = start.clone();
        for j in 0..frame {
            if schedule[j].is_empty() {
                cur.p[j] = cur.p[j].clamp(0.0, 1.0);
            } else {
                cur.p[j] = 0.0;
            }
        }
        let mut cur_obj = policy_objective(&cur, users, ch, alpha);
        for _sweep in 0..200 {
            let mut moved = false;
            for &j in &free {
                let mut arg = cur.p[j];
                let mut val = cur_obj;
                for k in 0..=100 {
                    let mut trial = cur.clone();
                    trial.p[j] = k as f64 / 100.0;
                    let obj = policy_objective(&trial, users, ch, alpha);
                    if obj > val + 1e-15 {
                        val = obj;
                        arg = trial.p[j];
                    }
                }
                if arg != cur.p[j] {
                    cur.p[j] = arg;
                    cur_obj = val;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        if cur_obj > best_obj {
            best = cur;
            best_obj = cur_obj;
        }
    }
    (best, best_obj)
}

/// The policy maximizing the alpha-fair objective, its exact throughputs, and
/// the objective value. `l` must equal the number of (leading) agent users.
///
/// Frames longer than [`MAX_FRAME`] positions are refused. At `alpha` = 0 the
/// optimum is exact; for `alpha` > 0 it is the better of exhaustive vertex
/// enumeration and grid-refined coordinate ascent.
pub fn optimal_coexistence(
    users: &[UserConfig],
    ch: &ChannelConfig,
    alpha: f64,
    l: usize,
) -> Result<(PeriodicPolicy, Vec<f64>, f64)> {
    if users.is_empty() {
        return Err(Error::Config("benchmark needs at least one user".into()));
    }
    if agent_count(users) != l {
        return Err(Error::Config(format!(
            "benchmark called with l={l} but the user list has {} agents",
            agent_count(users)
        )));
    }
    let frame = frame_length(users);
    if frame > MAX_FRAME {
        return Err(Error::Capability(format!(
            "policy frame {frame} exceeds the searchable maximum {MAX_FRAME}"
        )));
    }

    let (vertex, vertex_obj) = vertex_optimum(users, ch, alpha, frame);
    let (policy, obj) = if alpha > 0.0 {
        let starts = [
            vertex.clone(),
            PeriodicPolicy::new(vec![0.5; frame]),
            PeriodicPolicy::new(vec![1.0; frame]),
            PeriodicPolicy::new(vec![0.0; frame]),
        ];
        let (refined, refined_obj) = refined_optimum(users, ch, alpha, frame, &starts);
        if refined_obj > vertex_obj {
            (refined, refined_obj)
        } else {
            (vertex, vertex_obj)
        }
    } else {
        (vertex, vertex_obj)
    };
    let x = evaluate_policy(&policy, users, ch);
    Ok((policy, x, obj))
}

/// Monte-Carlo companion to [`evaluate_policy`]: drives the real channel for
/// `slots` slots with the pool transmitting per the (deferral-adjusted)
/// policy, successive pool transmissions rotating round-robin through the
/// agents, and returns the measured per-user throughputs.
pub fn simulate_policy(
    policy: &PeriodicPolicy,
    users: &[UserConfig],
    ch: &ChannelConfig,
    slots: usize,
    seeds: &SeedSplitter,
) -> Vec<f64> {
    let frame = policy.frame();
    assert_eq!(frame % frame_length(users), 0);
    let l = agent_count(users);
    let schedule = tdma_schedule(users, frame);
    let mut env = Env::new(users.to_vec(), *ch, 1, None, seeds);
    let mut policy_rng = seeds.stream("benchmark/policy");
    let mut next_agent = 0usize;

    for t in 0..slots {
        let j = t % frame;
        let pi = if schedule[j].is_empty() { policy.p[j] } else { 0.0 };
        let pool_tx = pi > 0.0 && policy_rng.random::<f64>() < pi;
        let transmitter = if pool_tx {
            let a = next_agent;
            next_agent = (next_agent + 1) % l;
            Some(a)
        } else {
            None
        };
        let transmitted: Vec<bool> = (0..users.len())
            .map(|i| if i < l { transmitter == Some(i) } else { env.non_agent_action(i, t) })
            .collect();
        env.step(t, transmitted);
    }
    env.tracker().snapshot()
}
