//! Experience-replay prioritization for off-policy actor-critic training.
//!
//! The crate provides the building blocks of the LA3P sampling framework:
//! a sum-tree for proportional sampling ([`SumTree`]), a replay buffer with
//! uniform / PER / LAP-clipped / inverse prioritized sampling ([`ReplayBuffer`]),
//! the Huber and PAL corrected critic losses ([`losses`]), a small
//! hand-differentiated MLP ([`Mlp`]), toy continuous-control environments
//! ([`Env`]), a TD3-style agent implementing the full LA3P update loop
//! ([`Agent`]), numerical probes relating TD errors to estimation error
//! and policy-gradient divergence ([`diagnostics`]), and an experiment
//! harness with a CLI ([`harness`]).

pub mod agent;
pub mod config;
pub mod diagnostics;
pub mod env;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod replay;
pub mod stats;
pub mod sum_tree;

pub use agent::{Agent, AgentConfig, SamplerScheme, TraceEvent};
pub use config::RunConfig;
pub use env::{Env, EnvKind, EnvSpec, StepResult};
pub use losses::LossKind;
pub use nn::{AdamState, Head, Mlp};
pub use replay::{PriorityMode, ReplayBuffer, SampleBatch, Transition};
pub use sum_tree::SumTree;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("capacity must be at least 1")]
    ZeroCapacity,
    #[error("leaf index {index} out of range (capacity {capacity})")]
    IndexOutOfRange { index: usize, capacity: usize },
    #[error("priority must be finite and non-negative, got {0}")]
    InvalidPriority(f64),
    #[error("tree is empty (total priority is zero)")]
    EmptyTree,
    #[error("value {value} outside sampling range [0, {total})")]
    ValueOutOfRange { value: f64, total: f64 },
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("buffer holds {count} transitions, need at least {need}")]
    BufferUnderfull { count: usize, need: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("inverse priority tree is stale; call rebuild_inverse first")]
    StaleInverse,
    #[error("operation requires the {required} sampling mode")]
    WrongMode { required: &'static str },
    #[error("TD error must be finite, got {0}")]
    NonFiniteTdError(f64),
    #[error("batch must be non-empty")]
    EmptyBatch,
    #[error("loss normalizer must be positive, got {0}")]
    InvalidNormalizer(f64),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch in {0}")]
    ShapeMismatch(&'static str),
    #[error("forward cache is stale (parameters changed since the forward pass)")]
    StaleCache,
    #[error("operation is only defined for the {required} environment")]
    WrongEnvKind { required: &'static str },
    #[error("episode already finished; call reset")]
    EpisodeFinished,
    #[error("unknown environment '{0}'")]
    UnknownEnv(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("probe needs at least {need} pairs for correlations, got {got}")]
    TooFewPairs { got: usize, need: usize },
    #[error("no completed runs found in '{0}'")]
    MissingRuns(String),
    #[error("invalid snapshot: {0}")]
    InvalidSnapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
