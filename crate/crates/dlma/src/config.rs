//! Experiment description files: a TOML schema covering the users, the
//! channel, the fairness target, the training hyperparameters, and the output
//! knobs, plus `key=value` override plumbing for sweeps from the command
//! line. Parsing is strict — unknown keys are rejected — and validation turns
//! the raw schema into runtime types (TDMA slots arrive 1-indexed here and
//! leave 0-indexed).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{ChannelConfig, DownlinkMode, UserConfig, UserSpec};
use crate::metrics::DEFAULT_WINDOW;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

/// Raw experiment file. Field defaults make the minimal file just a `name`
/// and a `users` list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_total_slots")]
    pub total_slots: usize,
    #[serde(default)]
    pub alpha: f64,
    /// State window override; wins over `[train] m` when both appear.
    #[serde(default)]
    pub m: Option<usize>,
    /// Acknowledgement history depth override; wins over `[train] k`.
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub channel: ChannelSection,
    pub users: Vec<UserSection>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsSection,
}

fn default_seed() -> u64 {
    1
}

fn default_total_slots() -> usize {
    100_000
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub e_up: f64,
    pub e_down: f64,
    pub downlink_mode: DownlinkMode,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self { e_up: 0.0, e_down: 0.0, downlink_mode: DownlinkMode::Dependent }
    }
}

/// One `[[users]]` entry. TDMA `slots` are 1-indexed frame positions.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum UserSection {
    Agent {
        #[serde(default)]
        e_up: Option<f64>,
    },
    Tdma {
        frame: usize,
        slots: Vec<usize>,
        #[serde(default)]
        e_up: Option<f64>,
    },
    Aloha {
        p: f64,
        #[serde(default)]
        e_up: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Short-term throughput window, in slots.
    pub window: usize,
    /// Emit one series row every this many slots.
    pub series_every: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, series_every: 100 }
    }
}

/// Validated, runtime-ready experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub seed: u64,
    pub total_slots: usize,
    pub alpha: f64,
    pub out_dir: Option<PathBuf>,
    pub users: Vec<UserConfig>,
    /// Number of (leading) agent users.
    pub l: usize,
    pub channel: ChannelConfig,
    pub train: TrainConfig,
    pub metrics: MetricsSection,
}

impl ExperimentConfig {
    /// Parses a TOML string (schema errors name the offending key).
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and parses a file, with `overrides` (see [`apply_override`])
    /// applied between parsing and schema interpretation.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let mut value: toml::Value = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        value.try_into().map_err(|e: toml::de::Error| {
            Error::Config(format!("{}: {e}", path.display()))
        })
    }

    /// Checks every invariant and produces runtime types.
    pub fn validate(&self) -> Result<Experiment> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad(format!("name {:?} must be a non-empty path-free label", self.name));
        }
        if self.total_slots == 0 {
            return bad("total_slots must be at least 1".into());
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return bad(format!("alpha {} must be finite and non-negative", self.alpha));
        }
        for (label, p) in [
            ("channel.e_up", self.channel.e_up),
            ("channel.e_down", self.channel.e_down),
        ] {
            check_probability(label, p)?;
        }

        let mut users = Vec::with_capacity(self.users.len());
        let mut seen_non_agent = false;
        for (i, u) in self.users.iter().enumerate() {
            let (spec, e_up) = match u {
                UserSection::Agent { e_up } => {
                    if seen_non_agent {
                        return bad(format!(
                            "users[{i}]: agents must be listed before other users"
                        ));
                    }
                    (UserSpec::Agent, e_up)
                }
                UserSection::Tdma { frame, slots, e_up } => {
                    seen_non_agent = true;
                    let frame = *frame;
                    if frame == 0 {
                        return bad(format!("users[{i}]: frame must be at least 1"));
                    }
                    if slots.is_empty() {
                        return bad(format!("users[{i}]: slots must not be empty"));
                    }
                    let mut zero_based = Vec::with_capacity(slots.len());
                    for &s in slots {
                        if s < 1 || s > frame {
                            return bad(format!(
                                "users[{i}]: slot {s} outside 1..={frame} (slots are 1-indexed)"
                            ));
                        }
                        if zero_based.contains(&(s - 1)) {
                            return bad(format!("users[{i}]: duplicate slot {s}"));
                        }
                        zero_based.push(s - 1);
                    }
                    zero_based.sort_unstable();
                    (UserSpec::Tdma { frame, slots: zero_based }, e_up)
                }
                UserSection::Aloha { p, e_up } => {
                    seen_non_agent = true;
                    check_probability(&format!("users[{i}].p"), *p)?;
                    (UserSpec::Aloha { p: *p }, e_up)
                }
            };
            if let Some(p) = e_up {
                check_probability(&format!("users[{i}].e_up"), *p)?;
            }
            users.push(UserConfig { spec, e_up: *e_up });
        }
        let l = users.iter().filter(|u| matches!(u.spec, UserSpec::Agent)).count();
        if l == 0 {
            return bad("at least one agent user is required".into());
        }

        let mut train = self.train;
        if let Some(m) = self.m {
            train.m = m;
        }
        if let Some(k) = self.k {
            train.k = k;
        }
        train.validate()?;
        if self.metrics.window == 0 || self.metrics.series_every == 0 {
            return bad("metrics.window and metrics.series_every must be at least 1".into());
        }

        Ok(Experiment {
            name: self.name.clone(),
            seed: self.seed,
            total_slots: self.total_slots,
            alpha: self.alpha,
            out_dir: self.out_dir.clone(),
            users,
            l,
            channel: ChannelConfig {
                e_up: self.channel.e_up,
                e_down: self.channel.e_down,
                mode: self.channel.downlink_mode,
            },
            train,
            metrics: self.metrics,
        })
    }
}

fn check_probability(label: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("{label} = {p} must lie in [0, 1]")));
    }
    Ok(())
}

/// Applies one `dotted.path=value` override to a parsed TOML tree. Path
/// segments traverse tables by key and arrays by index (`users.1.p=0.3`);
/// missing table keys are created. The value is parsed as TOML and falls
/// back to a plain string.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} must look like key=value")))?;
    let value = parse_scalar(raw);

    let mut node = root;
    let segments: Vec<&str> = path.split('.').collect();
    let (last, walk) = segments.split_last().unwrap();
    for seg in walk {
        node = match node {
            toml::Value::Table(t) => t
                .entry(seg.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default())),
            toml::Value::Array(a) => {
                let i: usize = seg.parse().map_err(|_| {
                    Error::Config(format!("override {spec:?}: {seg:?} is not an array index"))
                })?;
                a.get_mut(i).ok_or_else(|| {
                    Error::Config(format!("override {spec:?}: index {i} out of bounds"))
                })?
            }
            _ => {
                return Err(Error::Config(format!(
                    "override {spec:?}: {seg:?} is not a table or array"
                )))
            }
        };
    }
    match node {
        toml::Value::Table(t) => {
            t.insert(last.to_string(), value);
        }
        toml::Value::Array(a) => {
            let i: usize = last.parse().map_err(|_| {
                Error::Config(format!("override {spec:?}: {last:?} is not an array index"))
            })?;
            *a.get_mut(i).ok_or_else(|| {
                Error::Config(format!("override {spec:?}: index {i} out of bounds"))
            })? = value;
        }
        _ => {
            return Err(Error::Config(format!(
                "override {spec:?}: parent of {last:?} is not a table or array"
            )))
        }
    }
    Ok(())
}

fn parse_scalar(raw: &str) -> toml::Value {
    // TOML has no bare-value grammar, so wrap and unwrap a one-key table.
    format!("v = {raw}")
        .parse::<toml::Value>()
        .ok()
        .and_then(|mut t| t.as_table_mut().and_then(|t| t.remove("v")))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
        name = "mixed"
        seed = 7
        total_slots = 50000
        alpha = 1.0
        k = 16

        [channel]
        e_up = 0.1
        e_down = 0.2
        downlink_mode = "independent"

        [[users]]
        kind = "agent"

        [[users]]
        kind = "agent"
        e_up = 0.3

        [[users]]
        kind = "tdma"
        frame = 5
        slots = [2, 4]

        [[users]]
        kind = "aloha"
        p = 0.2

        [train]
        lr = 0.002
        minibatch = 32

        [metrics]
        window = 1000
        series_every = 50
    "#;

    #[test]
    fn full_schema_parses_and_validates() {
        let cfg = ExperimentConfig::from_toml(FULL).unwrap();
        let exp = cfg.validate().unwrap();
        assert_eq!(exp.name, "mixed");
        assert_eq!(exp.seed, 7);
        assert_eq!(exp.total_slots, 50_000);
        assert_eq!(exp.alpha, 1.0);
        assert_eq!(exp.l, 2);
        assert_eq!(exp.users[1].e_up, Some(0.3));
        assert_eq!(
            exp.users[2].spec,
            UserSpec::Tdma { frame: 5, slots: vec![1, 3] },
            "file slots are 1-indexed"
        );
        assert_eq!(exp.channel.e_down, 0.2);
        assert_eq!(exp.channel.mode, DownlinkMode::Independent);
        assert_eq!(exp.train.lr, 0.002);
        assert_eq!(exp.train.minibatch, 32);
        assert_eq!(exp.train.k, 16, "top-level k wins");
        assert_eq!(exp.train.m, 20, "untouched default");
        assert_eq!(exp.metrics.window, 1000);
    }

    #[test]
    fn minimal_file_gets_all_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "name = \"tiny\"\n[[users]]\nkind = \"agent\"\n",
        )
        .unwrap();
        let exp = cfg.validate().unwrap();
        assert_eq!(exp.seed, 1);
        assert_eq!(exp.total_slots, 100_000);
        assert_eq!(exp.alpha, 0.0);
        assert_eq!(exp.channel, ChannelConfig::default());
        assert_eq!(exp.train.m, 20);
        assert_eq!(exp.train.k, 8);
        assert_eq!(exp.metrics.window, 2000);
        assert_eq!(exp.metrics.series_every, 100);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("name = \"x\"\nbogus = 1\n[[users]]\nkind = \"agent\"\n");
        assert!(matches!(err, Err(Error::Config(_))), "{err:?}");
    }

    fn validate_snippet(users: &str) -> Result<Experiment> {
        ExperimentConfig::from_toml(&format!("name = \"t\"\n{users}"))?.validate()
    }

    #[test]
    fn validation_rejects_bad_topologies() {
        // No agents at all.
        assert!(validate_snippet("[[users]]\nkind = \"aloha\"\np = 0.5\n").is_err());
        // Agent after a non-agent.
        assert!(validate_snippet(
            "[[users]]\nkind = \"aloha\"\np = 0.5\n[[users]]\nkind = \"agent\"\n"
        )
        .is_err());
        // TDMA slot 0 is out of the 1-indexed range.
        assert!(validate_snippet(
            "[[users]]\nkind = \"agent\"\n[[users]]\nkind = \"tdma\"\nframe = 5\nslots = [0]\n"
        )
        .is_err());
        // TDMA slot beyond the frame.
        assert!(validate_snippet(
            "[[users]]\nkind = \"agent\"\n[[users]]\nkind = \"tdma\"\nframe = 5\nslots = [6]\n"
        )
        .is_err());
        // Duplicate TDMA slots.
        assert!(validate_snippet(
            "[[users]]\nkind = \"agent\"\n[[users]]\nkind = \"tdma\"\nframe = 5\nslots = [2, 2]\n"
        )
        .is_err());
        // ALOHA probability out of range.
        assert!(validate_snippet("[[users]]\nkind = \"agent\"\n[[users]]\nkind = \"aloha\"\np = 1.5\n").is_err());
    }

    #[test]
    fn validation_rejects_bad_scalars() {
        let base = "[[users]]\nkind = \"agent\"\n";
        for extra in [
            "total_slots = 0\n",
            "alpha = -1.0\n",
            "[channel]\ne_down = 1.2\n",
            "[train]\nminibatch = 2000\n", // exceeds the default 1000 capacity
            "[metrics]\nwindow = 0\n",
        ] {
            let text = format!("name = \"t\"\n{extra}{base}");
            let res = ExperimentConfig::from_toml(&text).and_then(|c| c.validate());
            assert!(res.is_err(), "{extra:?} should fail");
        }
    }

    #[test]
    fn overrides_navigate_tables_arrays_and_create_keys() {
        let mut v: toml::Value = FULL.parse().unwrap();
        apply_override(&mut v, "alpha=0.0").unwrap();
        apply_override(&mut v, "channel.e_down=0.6").unwrap();
        apply_override(&mut v, "train.lr=0.01").unwrap();
        apply_override(&mut v, "users.3.p=0.25").unwrap();
        apply_override(&mut v, "out_dir=somewhere").unwrap(); // creates key, string fallback
        let cfg: ExperimentConfig = v.try_into().map_err(|e: toml::de::Error| e).unwrap();
        let exp = cfg.validate().unwrap();
        assert_eq!(exp.alpha, 0.0);
        assert_eq!(exp.channel.e_down, 0.6);
        assert_eq!(exp.train.lr, 0.01);
        assert_eq!(exp.users[3].spec, UserSpec::Aloha { p: 0.25 });
        assert_eq!(exp.out_dir, Some(PathBuf::from("somewhere")));
    }

    #[test]
    fn override_errors_are_descriptive() {
        let mut v: toml::Value = FULL.parse().unwrap();
        assert!(apply_override(&mut v, "no-equals").is_err());
        assert!(apply_override(&mut v, "users.9.p=0.1").is_err(), "index out of bounds");
        assert!(apply_override(&mut v, "users.x.p=0.1").is_err(), "non-numeric index");
        assert!(apply_override(&mut v, "name.deep=1").is_err(), "scalar is not a table");
    }

    #[test]
    fn load_reads_files_and_applies_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, FULL).unwrap();
        let cfg =
            ExperimentConfig::load(&path, &["seed=99".to_string(), "k=2".to_string()]).unwrap();
        let exp = cfg.validate().unwrap();
        assert_eq!(exp.seed, 99);
        assert_eq!(exp.train.k, 2);
        assert!(ExperimentConfig::load(Path::new("/nonexistent/x.toml"), &[]).is_err());
    }
}
