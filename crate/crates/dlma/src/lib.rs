//! Simulator of heterogeneous time-slotted spectrum sharing.
//!
//! A set of learned-MAC agents ("DLMA" nodes) shares one collision channel
//! with scheduled TDMA nodes and p-persistent ALOHA nodes. An access point
//! acknowledges every slot over a lossy downlink; agents train a recurrent
//! value network online to maximize a configurable alpha-fairness objective
//! over all users, recovering lost feedback from later acknowledgements.
//!
//! Module map:
//! - [`fairness`]: alpha-fair utility, objective, network-action scoring
//! - [`env`]: users, erasure channel, slot outcomes, acknowledgements
//! - [`agent`]: observations, state windows, two-stage action selection
//! - [`neural`]: hand-rolled LSTM value network, RMSProp, checkpoints
//! - [`replay`]: dual experience store with feedback recovery
//! - [`trainer`]: loss, target policy, epsilon schedule, per-slot cadence
//! - [`oracle`]: model-aware benchmark for the best periodic policy
//! - [`metrics`]: run logs, windowed throughput, summaries, CSV output
//! - [`config`] / [`harness`]: experiment description and lock-step driver

pub mod agent;
pub mod config;
pub mod env;
pub mod fairness;
pub mod harness;
pub mod metrics;
pub mod neural;
pub mod oracle;
pub mod replay;
pub mod rng;
pub mod trainer;


use std::path::PathBuf;

/// Scalar type used by the simulation runtime. Tests instantiate the network
/// at `f64` where finite-difference gradient checks need the headroom.
pub type Real = f32;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),
    #[error("capability exceeded: {0}")]
    Capability(String),
    #[error("numerical fault at slot {slot}: {detail}")]
    Fault { slot: usize, detail: String },
    #[error("numerical fault: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
