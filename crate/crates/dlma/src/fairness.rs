//! Alpha-fair utility and the score used to rank candidate network actions.
//!
//! One knob, `alpha`, spans the whole fairness family: 0 optimizes raw total
//! throughput, 1 optimizes proportional fairness (sum of logs), and large
//! values approach max-min fairness. The same utility is applied twice in the
//! system: to measure a run's outcome and, inside action selection, to score
//! value-head estimates.

/// Floor applied to throughputs before singular utilities (`alpha >= 1`).
pub const X_FLOOR: f64 = 1e-6;

/// Floor applied to value-head estimates before scoring. Estimates can be
/// nonpositive early in training; flooring keeps log/negative-power utilities
/// finite without reordering positive scores.
pub const Q_FLOOR: f64 = 1e-6;

/// Alpha-fair utility of one user's throughput:
/// `x^(1-alpha) / (1-alpha)` for `alpha != 1`, `ln(x)` for `alpha == 1`.
///
/// For `alpha >= 1` the function is singular at zero, so `x` is floored at
/// [`X_FLOOR`] first. For `alpha < 1` the value is exact; in particular
/// `alpha == 0` returns `x` itself.
///
/// Panics if `x` is negative or `alpha` is negative: both are contract
/// violations, not recoverable states.
pub fn utility(x: f64, alpha: f64) -> f64 {
    assert!(x >= 0.0, "utility: negative throughput {x}");
    assert!(alpha >= 0.0, "utility: negative alpha {alpha}");
    let x = if alpha >= 1.0 { x.max(X_FLOOR) } else { x };
    if alpha == 1.0 {
        x.ln()
    } else {
        x.powf(1.0 - alpha) / (1.0 - alpha)
    }
}

/// Global objective: sum of per-user utilities.
pub fn objective(throughputs: &[f64], alpha: f64) -> f64 {
    throughputs.iter().map(|&x| utility(x, alpha)).sum()
}

/// Score of one candidate network action from its value-head estimates.
///
/// `q_net` is the collective agents' head: the `l` agents split it evenly, so
/// it contributes `l * f(q_net / l)`. `q_others` holds one head per coexisting
/// (non-agent) user. All heads are floored at [`Q_FLOOR`] before the utility,
/// since estimates may be nonpositive while the network is still learning.
pub fn network_score(q_net: f64, q_others: &[f64], l: usize, alpha: f64) -> f64 {
    assert!(l >= 1, "network_score: need at least one agent");
    let l_f = l as f64;
    let mut score = l_f * utility(q_net.max(Q_FLOOR) / l_f, alpha);
    for &q in q_others {
        score += utility(q.max(Q_FLOOR), alpha);
    }
    score
}
