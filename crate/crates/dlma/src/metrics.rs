//! Throughput accounting over completed runs: the per-slot log, short-term
//! windowed rates, run summaries, and the CSV/series/summary file formats.
//! Everything here is a pure function of the log, so any summary can be
//! recomputed offline from the CSV alone.

use std::io::{self, BufRead, Write};

use crate::env::Indicator;
use crate::fairness;

/// Default short-term averaging window, in slots.
pub const DEFAULT_WINDOW: usize = 2000;

/// How many trailing windows the final reported throughput averages over.
const FINAL_WINDOWS: usize = 10;

/// Slot span used for the end-of-run collision report.
const FINAL_COLLISION_SPAN: usize = 10_000;

/// Everything logged about one slot. Per-user vectors cover all users; the
/// agent-only vectors cover users `0..l`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: usize,
    pub actions: Vec<bool>,
    pub indicators: Vec<Indicator>,
    pub ack_ok: Vec<bool>,
    pub u: Vec<u8>,
    pub eps: Vec<f64>,
    pub loss: Vec<Option<f64>>,
}

/// Append-only per-slot record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    kinds: Vec<String>,
    l: usize,
    records: Vec<SlotRecord>,
}

impl RunLog {
    pub fn new(kinds: Vec<String>, l: usize) -> Self {
        assert!(l <= kinds.len());
        assert!(kinds[..l].iter().all(|k| k == "agent"), "agents must come first");
        Self { kinds, l, records: Vec::new() }
    }

    pub fn push(&mut self, r: SlotRecord) {
        assert_eq!(r.slot, self.records.len(), "one record per slot, in order");
        assert_eq!(r.actions.len(), self.kinds.len());
        assert_eq!(r.indicators.len(), self.kinds.len());
        assert_eq!(r.ack_ok.len(), self.l);
        assert_eq!(r.u.len(), self.l);
        assert_eq!(r.eps.len(), self.l);
        assert_eq!(r.loss.len(), self.l);
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.kinds.len()
    }

    pub fn agents(&self) -> usize {
        self.l
    }

    pub fn kinds(&self) -> &[String] {
        &self.kinds
    }

    pub fn records(&self) -> &[SlotRecord] {
        &self.records
    }
}

fn succeeded(r: &SlotRecord, user: usize) -> bool {
    r.indicators[user] == Indicator::Success
}

/// Success rate of `user` over the last `min(w, t)` of the first `t` slots.
pub fn short_term_throughput(log: &RunLog, user: usize, t: usize, w: usize) -> f64 {
    assert!(t >= 1 && t <= log.len(), "t must index a completed slot count");
    assert!(w >= 1);
    let span = w.min(t);
    let hits = log.records[t - span..t].iter().filter(|r| succeeded(r, user)).count();
    hits as f64 / span as f64
}

/// Run-level report: the quantities the experiment tables and figures use.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub kinds: Vec<String>,
    pub l: usize,
    pub slots: usize,
    pub alpha: f64,
    /// Per-user throughput: mean of up to 10 disjoint trailing windows.
    pub per_user_final: Vec<f64>,
    /// Per-user successes over the whole run.
    pub per_user_cumulative: Vec<f64>,
    pub sum_final: f64,
    /// Alpha-fair objective at alpha = 1 over the final throughputs.
    pub sum_log_final: f64,
    /// Alpha-fair objective at the run's own alpha.
    pub objective: f64,
    /// Slots where two or more agents transmitted together.
    pub agent_collisions_total: u64,
    /// Same, restricted to the final 10,000 slots.
    pub agent_collisions_final: u64,
}

/// Condenses a completed log. Final throughputs average up to
/// [`FINAL_WINDOWS`] disjoint `w`-slot windows walking back from the end
/// (the last window of a short run truncates at the start).
pub fn summarize(log: &RunLog, alpha: f64, w: usize) -> RunSummary {
    assert!(!log.is_empty(), "cannot summarize an empty run");
    let n = log.n_users();
    let len = log.len();

    let mut windows = Vec::new();
    let mut end = len;
    while windows.len() < FINAL_WINDOWS && end > 0 {
        let start = end.saturating_sub(w);
        windows.push((start, end));
        end = start;
    }

    let per_user_final: Vec<f64> = (0..n)
        .map(|user| {
            let mean: f64 = windows
                .iter()
                .map(|&(s, e)| {
                    let hits =
                        log.records[s..e].iter().filter(|r| succeeded(r, user)).count();
                    hits as f64 / (e - s) as f64
                })
                .sum::<f64>()
                / windows.len() as f64;
            mean
        })
        .collect();
    let per_user_cumulative: Vec<f64> = (0..n)
        .map(|user| {
            log.records.iter().filter(|r| succeeded(r, user)).count() as f64 / len as f64
        })
        .collect();

    let collision = |r: &SlotRecord| r.actions[..log.l].iter().filter(|&&a| a).count() >= 2;
    let agent_collisions_total = log.records.iter().filter(|r| collision(r)).count() as u64;
    let final_start = len.saturating_sub(FINAL_COLLISION_SPAN);
    let agent_collisions_final =
        log.records[final_start..].iter().filter(|r| collision(r)).count() as u64;

    RunSummary {
        kinds: log.kinds.clone(),
        l: log.l,
        slots: len,
        alpha,
        sum_final: per_user_final.iter().sum(),
        sum_log_final: fairness::objective(&per_user_final, 1.0),
        objective: fairness::objective(&per_user_final, alpha),
        per_user_final,
        per_user_cumulative,
        agent_collisions_total,
        agent_collisions_final,
    }
}

impl RunSummary {
    /// Fixed `key=value` lines, one quantity per line, for test scraping.
    pub fn write_text(&self, out: &mut impl Write) -> io::Result<()> {
        writeln!(out, "slots={}", self.slots)?;
        writeln!(out, "agents={}", self.l)?;
        writeln!(out, "alpha={}", self.alpha)?;
        for (i, kind) in self.kinds.iter().enumerate() {
            writeln!(out, "user/{i}/kind={kind}")?;
            writeln!(out, "user/{i}/final={}", self.per_user_final[i])?;
            writeln!(out, "user/{i}/cumulative={}", self.per_user_cumulative[i])?;
        }
        writeln!(out, "sum_final={}", self.sum_final)?;
        writeln!(out, "sum_log_final={}", self.sum_log_final)?;
        writeln!(out, "objective={}", self.objective)?;
        writeln!(out, "agent_collisions_total={}", self.agent_collisions_total)?;
        writeln!(out, "agent_collisions_final={}", self.agent_collisions_final)?;
        Ok(())
    }
}

/// CSV header shared by [`write_csv`] and [`parse_csv`].
pub const CSV_HEADER: &str = "slot,user_id,kind,action,indicator,ack_ok,u,eps,loss";

/// One row per user per slot. Agent-only columns stay empty on other rows;
/// `loss` stays empty on slots without a training step. Floats use the
/// shortest round-tripping decimal form, so rewriting a parsed log is
/// byte-identical.
pub fn write_csv(log: &RunLog, out: &mut impl Write) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in &log.records {
        for user in 0..log.n_users() {
            let (ack_ok, u, eps, loss) = if user < log.l {
                (
                    if r.ack_ok[user] { "1" } else { "0" }.to_string(),
                    r.u[user].to_string(),
                    r.eps[user].to_string(),
                    r.loss[user].map(|v| v.to_string()).unwrap_or_default(),
                )
            } else {
                (String::new(), String::new(), String::new(), String::new())
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.slot,
                user,
                log.kinds[user],
                u8::from(r.actions[user]),
                r.indicators[user].symbol(),
                ack_ok,
                u,
                eps,
                loss
            )?;
        }
    }
    Ok(())
}

/// Inverse of [`write_csv`]; summaries recomputed from the parsed log match
/// the originals exactly.
pub fn parse_csv(input: impl BufRead) -> io::Result<RunLog> {
    let bad = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let mut lines = input.lines();
    match lines.next() {
        Some(Ok(h)) if h == CSV_HEADER => {}
        other => return Err(bad(format!("bad header: {other:?}"))),
    }

    // Rows group into slots; a user_id of 0 starts the next slot. The first
    // complete group fixes the user list (kinds, and agents = the leading
    // "agent" run); every later group must match it.
    let mut log: Option<RunLog> = None;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let flush = |log: &mut Option<RunLog>, rows: &mut Vec<Vec<String>>| {
        let fresh = log.get_or_insert_with(|| {
            let kinds: Vec<String> = rows.iter().map(|f| f[2].clone()).collect();
            let l = kinds.iter().take_while(|k| k.as_str() == "agent").count();
            RunLog::new(kinds, l)
        });
        if rows.len() != fresh.n_users() {
            return Err(format!(
                "slot {} has {} rows, expected {}",
                fresh.len(),
                rows.len(),
                fresh.n_users()
            ));
        }
        let slot = fresh.len();
        push_rows(fresh, slot, rows)?;
        rows.clear();
        Ok(())
    };

    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != 9 {
            return Err(bad(format!("expected 9 fields, got {}", fields.len())));
        }
        let user: usize = fields[1].parse().map_err(|e| bad(format!("user_id: {e}")))?;
        if user == 0 && !rows.is_empty() {
            flush(&mut log, &mut rows).map_err(bad)?;
        }
        if user != rows.len() {
            return Err(bad(format!("user_id {user} out of order")));
        }
        rows.push(fields);
    }
    if !rows.is_empty() {
        flush(&mut log, &mut rows).map_err(bad)?;
    }
    log.ok_or_else(|| bad("empty log".into()))
}

fn push_rows(log: &mut RunLog, slot: usize, rows: &[Vec<String>]) -> Result<(), String> {
    let mut r = SlotRecord {
        slot,
        actions: Vec::new(),
        indicators: Vec::new(),
        ack_ok: Vec::new(),
        u: Vec::new(),
        eps: Vec::new(),
        loss: Vec::new(),
    };
    for (user, f) in rows.iter().enumerate() {
        if f[0].parse::<usize>() != Ok(slot) {
            return Err(format!("slot column mismatch in slot {slot}"));
        }
        if f[2] != log.kinds[user] {
            return Err(format!("kind changed for user {user}"));
        }
        r.actions.push(match f[3].as_str() {
            "0" => false,
            "1" => true,
            v => return Err(format!("bad action {v}")),
        });
        r.indicators.push(match f[4].as_str() {
            "S" => Indicator::Success,
            "F" => Indicator::Failure,
            v => return Err(format!("bad indicator {v}")),
        });
        if user < log.l {
            r.ack_ok.push(match f[5].as_str() {
                "0" => false,
                "1" => true,
                v => return Err(format!("bad ack_ok {v}")),
            });
            r.u.push(f[6].parse().map_err(|e| format!("u: {e}"))?);
            r.eps.push(f[7].parse().map_err(|e| format!("eps: {e}"))?);
            r.loss.push(if f[8].is_empty() {
                None
            } else {
                Some(f[8].parse().map_err(|e| format!("loss: {e}"))?)
            });
        } else if !(f[5].is_empty() && f[6].is_empty() && f[7].is_empty() && f[8].is_empty()) {
            return Err(format!("agent columns set for non-agent user {user}"));
        }
    }
    log.push(r);
    Ok(())
}

/// Downsampled short-term throughput series for plotting: one row every
/// `every` slots with the windowed sum and per-user rates.
pub fn write_series(log: &RunLog, out: &mut impl Write, every: usize, w: usize) -> io::Result<()> {
    assert!(every >= 1);
    write!(out, "slot,sum")?;
    for i in 0..log.n_users() {
        write!(out, ",user{i}")?;
    }
    writeln!(out)?;
    let mut t = every;
    while t <= log.len() {
        let rates: Vec<f64> =
            (0..log.n_users()).map(|u| short_term_throughput(log, u, t, w)).collect();
        write!(out, "{t},{}", rates.iter().sum::<f64>())?;
        for r in &rates {
            write!(out, ",{r}")?;
        }
        writeln!(out)?;
        t += every;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Log where `winner(t)` names the sole successful user of slot t
    /// (`None` = idle slot); agents transmit per `acted`.
    fn synthetic(
        kinds: &[&str],
        l: usize,
        slots: usize,
        winner: impl Fn(usize) -> Option<usize>,
        acted: impl Fn(usize, usize) -> bool,
    ) -> RunLog {
        let mut log = RunLog::new(kinds.iter().map(|s| s.to_string()).collect(), l);
        for t in 0..slots {
            let win = winner(t);
            log.push(SlotRecord {
                slot: t,
                actions: (0..kinds.len()).map(|u| acted(t, u)).collect(),
                indicators: (0..kinds.len())
                    .map(|u| {
                        if win == Some(u) {
                            Indicator::Success
                        } else {
                            Indicator::Failure
                        }
                    })
                    .collect(),
                ack_ok: vec![true; l],
                u: (0..l).map(|a| u8::from(acted(t, a))).collect(),
                eps: vec![0.05; l],
                loss: (0..l).map(|a| (t % 2 == 0).then_some(a as f64 + 0.5)).collect(),
            });
        }
        log
    }

    #[test]
    fn windowed_rate_matches_hand_counts() {
        // Always succeeding -> 1.0.
        let log = synthetic(&["agent"], 1, 3000, |_| Some(0), |_, _| true);
        assert_eq!(short_term_throughput(&log, 0, 3000, 2000), 1.0);
        // Every 5th slot in the last 2000 -> 400/2000 = 0.2.
        let log = synthetic(&["agent"], 1, 3000, |t| (t % 5 == 0).then_some(0), |_, _| true);
        assert_relative_eq!(short_term_throughput(&log, 0, 3000, 2000), 0.2);
        // Short history divides by t, not the window.
        let log = synthetic(&["agent"], 1, 100, |t| (t < 50).then_some(0), |_, _| true);
        assert_eq!(short_term_throughput(&log, 0, 100, 2000), 0.5);
    }

    #[test]
    fn summary_of_a_round_robin_run() {
        // Five users each succeed exactly once per 5 slots.
        let kinds = ["agent", "agent", "tdma", "aloha", "aloha"];
        let log = synthetic(&kinds, 2, 20_000, |t| Some(t % 5), |t, u| t % 5 == u);
        let s = summarize(&log, 0.0, 2000);
        for u in 0..5 {
            assert_relative_eq!(s.per_user_final[u], 0.2, max_relative = 1e-12);
            assert_relative_eq!(s.per_user_cumulative[u], 0.2, max_relative = 1e-12);
        }
        assert_relative_eq!(s.sum_final, 1.0, max_relative = 1e-12);
        assert_relative_eq!(s.sum_log_final, 5.0 * 0.2f64.ln(), max_relative = 1e-12);
        assert_relative_eq!(s.objective, 1.0, max_relative = 1e-12); // alpha=0: plain sum
        assert_eq!(s.agent_collisions_total, 0, "agents act on disjoint slots");
    }

    #[test]
    fn sum_log_of_five_equal_users_matches_the_known_value() {
        let kinds = ["agent"; 5];
        let log = synthetic(&kinds, 5, 10_000, |t| Some(t % 5), |t, u| t % 5 == u);
        let s = summarize(&log, 1.0, 2000);
        assert_relative_eq!(s.sum_log_final, -8.04718956217050, max_relative = 1e-10);
        assert_relative_eq!(s.objective, s.sum_log_final, max_relative = 1e-15);
    }

    #[test]
    fn collisions_count_simultaneous_agent_transmissions() {
        // Both agents transmit on multiples of 100 -> 120 collisions in
        // 12_000 slots, 100 inside the final 10_000.
        let kinds = ["agent", "agent", "tdma"];
        let log = synthetic(&kinds, 2, 12_000, |_| None, |t, u| u < 2 && t % 100 == 0);
        let s = summarize(&log, 0.0, 2000);
        assert_eq!(s.agent_collisions_total, 120);
        assert_eq!(s.agent_collisions_final, 100);
    }

    #[test]
    fn final_throughput_averages_trailing_windows() {
        // 0.0 rate for 8000 slots, then 1.0 for 2000: one window at 1.0 and
        // three earlier windows at 0.0 (run shorter than 10 windows).
        let log = synthetic(&["agent"], 1, 10_000, |t| (t >= 8000).then_some(0), |_, _| true);
        let s = summarize(&log, 0.0, 2000);
        assert_relative_eq!(s.per_user_final[0], 0.2, max_relative = 1e-12);
        // Runs shorter than one window fall back to the cumulative rate.
        let log = synthetic(&["agent"], 1, 100, |t| (t % 2 == 0).then_some(0), |_, _| true);
        let s = summarize(&log, 0.0, 2000);
        assert_eq!(s.per_user_final[0], s.per_user_cumulative[0]);
    }

    #[test]
    fn csv_round_trip_preserves_the_log_exactly() {
        let kinds = ["agent", "agent", "tdma", "aloha"];
        let log = synthetic(&kinds, 2, 57, |t| Some(t % 4), |t, u| (t + u) % 3 == 0);
        let mut bytes = Vec::new();
        write_csv(&log, &mut bytes).unwrap();
        let parsed = parse_csv(io::BufReader::new(bytes.as_slice())).unwrap();
        assert_eq!(parsed, log);
        // And rewriting the parsed log reproduces the bytes.
        let mut again = Vec::new();
        write_csv(&parsed, &mut again).unwrap();
        assert_eq!(bytes, again);
        // Summaries agree exactly.
        assert_eq!(summarize(&parsed, 1.0, 10), summarize(&log, 1.0, 10));
    }

    #[test]
    fn series_rows_land_on_the_sampling_grid() {
        let log = synthetic(&["agent"], 1, 250, |t| Some(t % 2).filter(|&w| w == 0), |_, _| true);
        let mut bytes = Vec::new();
        write_series(&log, &mut bytes, 100, 50).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "slot,sum,user0");
        assert_eq!(lines.len(), 3); // slots 100 and 200
        assert!(lines[1].starts_with("100,0.5,"));
        assert!(lines[2].starts_with("200,0.5,"));
    }

    proptest! {
        /// At most one user succeeds per slot, so any windowed sum rate and
        /// the summary's final sum stay within [0, 1].
        #[test]
        fn windowed_sums_never_exceed_one(
            winners in proptest::collection::vec(proptest::option::of(0usize..3), 1..400),
            w in 1usize..100,
        ) {
            let kinds = ["agent", "tdma", "aloha"];
            let slots = winners.len();
            let log = synthetic(&kinds, 1, slots, |t| winners[t], |_, _| false);
            for t in [1, slots.div_ceil(2), slots] {
                let sum: f64 = (0..3).map(|u| short_term_throughput(&log, u, t, w)).sum();
                prop_assert!((0.0..=1.0 + 1e-12).contains(&sum));
            }
            let s = summarize(&log, 0.0, w);
            prop_assert!(s.sum_final <= 1.0 + 1e-12);
        }
    }
}
