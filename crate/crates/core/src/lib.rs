//! Federated-learning simulation with Paillier-encrypted aggregation.
//!
//! The crate provides four server strategies over one encrypted-aggregation
//! core: synchronous averaging (`sfl`), per-arrival asynchronous mixing
//! (`afl`), a K-slot buffer (`fedbuff`), and the weighted-average-time
//! deadline variant (`bfl`) that fixes a fast-client cohort after the first
//! round. A deterministic virtual-time harness drives the strategies over
//! heterogeneous clients and records accuracy, simulated training time, and
//! convergence speed.
//!
//! See the `book/` guide for worked examples; its code snippets compile and
//! run as this crate's doc-tests.

pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod mlp;
pub mod paillier;
pub mod protocol;
pub mod sim;

mod book;

pub use codec::FixedPointCodec;
pub use config::ExperimentConfig;
pub use data::{Dataset, ScalerParams, ShardSpec, SynthSpec};
pub use error::{Error, Result};
pub use mlp::{Architecture, HyperParams, ModelParams};
pub use paillier::{Ciphertext, KeyPair, PublicKey, SecretKey};
pub use protocol::{ClientUpdate, SelectionResult, StrategyKind, StrategyState};
pub use sim::{run_experiment, ClientProfile, MetricsLog, VirtualClock};
