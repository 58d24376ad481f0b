//! Deterministic virtual-time simulation of heterogeneous federated
//! clients. A single-threaded event loop over a priority queue keyed by
//! (virtual time, client id) drives any of the four strategies end to end
//! and records per-round metrics.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::data::{self, Dataset, ShardSpec};
use crate::error::{Error, Result};
use crate::mlp::{self, Architecture, HyperParams};
use crate::paillier::{self, KeyPair};
use crate::codec::FixedPointCodec;
use crate::protocol::{
    self, ClientUpdate, CryptoCtx, StrategyKind, StrategyState, UpdatePayload,
};

/// Tags for the independent random streams derived from the master seed.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const SHARD: u64 = 3;
    pub const INIT: u64 = 4;
    pub const KEYGEN: u64 = 5;
    pub const ENCRYPT: u64 = 6;
    pub const TRAIN: u64 = 7;
}

/// SplitMix-style derivation of a sub-seed from the master seed and tags.
pub fn subseed(master: u64, tags: &[u64]) -> u64 {
    let mut state = master;
    for &tag in tags {
        state = state
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(tag.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

/// Static description of one simulated client.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientProfile {
    pub client_id: usize,
    /// Heterogeneity delay added to every round, in simulated seconds.
    pub speed_delay_s: f64,
    pub shard_fraction: f64,
    pub hyper: HyperParams,
}

/// Per-round training time: deterministic local compute plus the profile's
/// injected delay.
pub fn client_training_time(profile: &ClientProfile, measured_compute_ms: f64) -> f64 {
    measured_compute_ms + profile.speed_delay_s * 1000.0
}

/// Monotonically non-decreasing simulated clock.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VirtualClock {
    now_ms: f64,
}

impl VirtualClock {
    pub fn new() -> Self {
        VirtualClock { now_ms: 0.0 }
    }

    pub fn now_ms(&self) -> f64 {
        self.now_ms
    }

    pub fn advance(&mut self, delta_ms: f64) {
        debug_assert!(delta_ms >= 0.0, "clock may not run backwards");
        self.now_ms += delta_ms;
    }

    pub fn advance_to(&mut self, time_ms: f64) {
        debug_assert!(time_ms >= self.now_ms, "clock may not run backwards");
        self.now_ms = time_ms;
    }
}

/// One CSV row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub sim_time_ms: f64,
    pub val_accuracy: f64,
    pub participants: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum EventKind {
    Arrival { client: usize },
    Aggregate { contributors: Vec<usize> },
}

/// Timeline entry; arrivals and aggregations are both logged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEvent {
    pub time_ms: f64,
    pub round: usize,
    pub kind: EventKind,
}

/// Everything an experiment run produces.
#[derive(Debug, Clone)]
pub struct MetricsLog {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub rounds: Vec<RoundRecord>,
    pub events: Vec<SimEvent>,
    pub final_test_accuracy: f64,
    pub convergence_round: Option<usize>,
    pub total_sim_time_ms: f64,
    /// Decoded global parameters after the last round.
    pub final_global: Vec<f64>,
    /// Host wall-clock time of the run; informational only and not part of
    /// the deterministic outputs.
    pub wall_clock_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub strategy: String,
    pub seed: u64,
    pub rounds_completed: usize,
    pub aggregate_events: usize,
    pub final_test_accuracy: f64,
    pub convergence_round: Option<usize>,
    pub convergence_sim_time_ms: Option<f64>,
    pub total_sim_time_ms: f64,
    pub wall_clock_ms: f64,
}

impl MetricsLog {
    pub fn aggregate_event_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Aggregate { .. }))
            .count()
    }

    /// First aggregation event, with its contributor set.
    pub fn first_aggregate(&self) -> Option<&SimEvent> {
        self.events
            .iter()
            .find(|e| matches!(e.kind, EventKind::Aggregate { .. }))
    }

    /// Per-round durations (differences of consecutive round completion
    /// times).
    pub fn round_durations_ms(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.rounds
            .iter()
            .map(|r| {
                let d = r.sim_time_ms - prev;
                prev = r.sim_time_ms;
                d
            })
            .collect()
    }

    /// Simulated time at which validation accuracy first reached `target`.
    pub fn time_to_target_ms(&self, target: f64) -> Option<f64> {
        self.rounds
            .iter()
            .find(|r| r.val_accuracy >= target)
            .map(|r| r.sim_time_ms)
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("round,sim_time_ms,val_accuracy,participants\n");
        for r in &self.rounds {
            let participants: Vec<String> = r.participants.iter().map(|p| p.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.round,
                r.sim_time_ms,
                r.val_accuracy,
                participants.join(";")
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn summary(&self) -> Summary {
        Summary {
            strategy: self.strategy.to_string(),
            seed: self.seed,
            rounds_completed: self.rounds.len(),
            aggregate_events: self.aggregate_event_count(),
            final_test_accuracy: self.final_test_accuracy,
            convergence_round: self.convergence_round,
            convergence_sim_time_ms: self
                .convergence_round
                .and_then(|r| self.rounds.iter().find(|rec| rec.round == r))
                .map(|rec| rec.sim_time_ms),
            total_sim_time_ms: self.total_sim_time_ms,
            wall_clock_ms: self.wall_clock_ms,
        }
    }

    pub fn write_summary_json(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.summary())
            .map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }
}

/// Index of the first round whose validation accuracy reached the target,
/// or `None` if it never did (or the log is empty).
pub fn convergence_speed(log: &MetricsLog, target_accuracy: f64) -> Option<usize> {
    log.rounds
        .iter()
        .find(|r| r.val_accuracy >= target_accuracy)
        .map(|r| r.round)
}

/// The scaled train/val/test splits an experiment runs on.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Load, split, and scale the configured dataset. Scaler statistics come
/// from the training split only.
pub fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let full = config.load_dataset()?;
    let (train, val, test) = data::split(
        &full,
        config.dataset.split,
        subseed(config.seed, &[streams::SPLIT]),
    )?;
    if train.is_empty() || val.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "dataset too small to split: {} train / {} val / {} test rows",
            train.len(),
            val.len(),
            test.len()
        )));
    }
    let scaler = data::fit_scaler(&train)?;
    Ok(PreparedData {
        train: data::apply_scaler(&scaler, &train)?,
        val: data::apply_scaler(&scaler, &val)?,
        test: data::apply_scaler(&scaler, &test)?,
    })
}

/// Accuracy of a single model trained on the full training split; the
/// convergence-target baseline.
pub fn centralized_accuracy(config: &ExperimentConfig, epochs: usize) -> Result<f64> {
    let prepared = prepare_data(config)?;
    let arch = config.architecture()?;
    let mut hyper = config.hyper.clone();
    hyper.local_epochs = epochs;
    let params = mlp::init_model(&arch, subseed(config.seed, &[streams::INIT]));
    let (trained, _) = mlp::train_epochs(
        &params,
        &prepared.train,
        &hyper,
        subseed(config.seed, &[streams::TRAIN, 0, u64::MAX]),
    )?;
    mlp::evaluate(&trained, &prepared.val)
}

struct SimClient {
    profile: ClientProfile,
    shard: Dataset,
    training_time_ms: f64,
    enc_rng: ChaCha8Rng,
    /// Parameters this client trains from in its current local round.
    base: Vec<f64>,
    rounds_started: u64,
}

struct Experiment<'a> {
    config: &'a ExperimentConfig,
    arch: Architecture,
    clients: Vec<SimClient>,
    val: Dataset,
    test: Dataset,
    keypair: Option<KeyPair>,
    codec: Option<FixedPointCodec>,
}

/// Heap key ordering events by (time, client id).
#[derive(PartialEq)]
struct EventKey(f64, usize);

impl Eq for EventKey {}

impl PartialOrd for EventKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for EventKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl<'a> Experiment<'a> {
    fn crypto(&self) -> CryptoCtx<'_> {
        match (&self.keypair, &self.codec) {
            (Some(keypair), Some(codec)) => CryptoCtx::Encrypted {
                keypair,
                codec: codec.clone(),
                chained: self.config.he.chained_scaling,
            },
            _ => CryptoCtx::Plain,
        }
    }

    fn train_update(
        &mut self,
        client_idx: usize,
        global: &[f64],
        round_index: usize,
    ) -> Result<ClientUpdate> {
        let seed = self.config.seed;
        let client = &mut self.clients[client_idx];
        client.rounds_started += 1;
        let params = mlp::unflatten(&self.arch, global)?;
        let (trained, _trace) = mlp::train_epochs(
            &params,
            &client.shard,
            &client.profile.hyper,
            subseed(
                seed,
                &[
                    streams::TRAIN,
                    client.rounds_started,
                    client.profile.client_id as u64,
                ],
            ),
        )?;
        let flat = mlp::flatten(&trained);
        let payload = match (&self.keypair, &self.codec) {
            (Some(keypair), Some(codec)) => UpdatePayload::Encrypted(protocol::encrypt_vector(
                &keypair.public,
                codec,
                &flat,
                &mut client.enc_rng,
            )?),
            _ => UpdatePayload::Plain(flat),
        };
        Ok(ClientUpdate {
            client_id: client.profile.client_id,
            payload,
            training_time_ms: client.training_time_ms,
            round_index,
        })
    }

    fn evaluate_global(&self, global: &[f64], dataset: &Dataset) -> Result<f64> {
        let params = mlp::unflatten(&self.arch, global)?;
        mlp::evaluate(&params, dataset)
    }
}

fn ensure_finite(global: &[f64]) -> Result<()> {
    if global.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("global model contains non-finite values".into()));
    }
    Ok(())
}

/// Run the configured experiment to completion. Fully deterministic for a
/// fixed config and master seed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricsLog> {
    config.validate()?;
    let wall_start = Instant::now();

    let prepared = prepare_data(config)?;
    let arch = config.architecture()?;
    if arch.input_dim() != prepared.train.feature_dim() {
        return Err(Error::Config(format!(
            "model input width {} does not match dataset feature count {}",
            arch.input_dim(),
            prepared.train.feature_dim()
        )));
    }
    if arch.output_dim() != prepared.train.class_count() {
        return Err(Error::Config(format!(
            "model output width {} does not match dataset class count {}",
            arch.output_dim(),
            prepared.train.class_count()
        )));
    }

    let mut client_configs = config.clients.clone();
    client_configs.sort_by_key(|c| c.id);
    let fractions: Vec<f64> = client_configs.iter().map(|c| c.shard_fraction).collect();
    let shards = data::shard(
        &prepared.train,
        &ShardSpec::new(fractions)?,
        subseed(config.seed, &[streams::SHARD]),
    )?;

    let keypair = if config.he.enabled {
        Some(paillier::keygen(
            config.he.key_bits,
            subseed(config.seed, &[streams::KEYGEN]),
        )?)
    } else {
        None
    };
    let codec = keypair
        .as_ref()
        .map(|kp| FixedPointCodec::for_key(config.he.scale, &kp.public))
        .transpose()?;

    let mut clients = Vec::with_capacity(client_configs.len());
    for (cfg, shard) in client_configs.iter().zip(shards) {
        if shard.is_empty() {
            return Err(Error::Config(format!(
                "clients.shard_fraction {} gives client {} an empty shard",
                cfg.shard_fraction, cfg.id
            )));
        }
        let hyper = config.client_hyper(cfg);
        let profile = ClientProfile {
            client_id: cfg.id,
            speed_delay_s: cfg.speed_delay_s,
            shard_fraction: cfg.shard_fraction,
            hyper,
        };
        let compute_ms = config.simulation.compute_ms_per_sample_epoch
            * shard.len() as f64
            * profile.hyper.local_epochs as f64;
        let training_time_ms = client_training_time(&profile, compute_ms);
        let enc_rng = ChaCha8Rng::seed_from_u64(subseed(
            config.seed,
            &[streams::ENCRYPT, cfg.id as u64],
        ));
        clients.push(SimClient {
            profile,
            shard,
            training_time_ms,
            enc_rng,
            base: Vec::new(),
            rounds_started: 0,
        });
    }

    let global = mlp::flatten(&mlp::init_model(
        &arch,
        subseed(config.seed, &[streams::INIT]),
    ));

    let mut experiment = Experiment {
        config,
        arch,
        clients,
        val: prepared.val,
        test: prepared.test,
        keypair,
        codec,
    };

    let (rounds, events, global, clock) = match config.strategy {
        StrategyKind::Sfl | StrategyKind::Bfl => run_synchronous(config, &mut experiment, global)?,
        StrategyKind::Afl | StrategyKind::FedBuff => {
            run_event_driven(config, &mut experiment, global)?
        }
    };

    let final_test_accuracy = experiment.evaluate_global(&global, &experiment.test)?;
    let mut log = MetricsLog {
        strategy: config.strategy,
        seed: config.seed,
        rounds,
        events,
        final_test_accuracy,
        convergence_round: None,
        total_sim_time_ms: clock.now_ms(),
        final_global: global,
        wall_clock_ms: wall_start.elapsed().as_secs_f64() * 1000.0,
    };
    if let Some(target) = config.simulation.target_accuracy {
        log.convergence_round = convergence_speed(&log, target);
    }
    Ok(log)
}

type LoopOutput = (Vec<RoundRecord>, Vec<SimEvent>, Vec<f64>, VirtualClock);

/// SFL and BFL: lock-step rounds; the round ends when its slowest
/// participant arrives.
fn run_synchronous(
    config: &ExperimentConfig,
    experiment: &mut Experiment,
    mut global: Vec<f64>,
) -> Result<LoopOutput> {
    let n = experiment.clients.len();
    let mut state = StrategyState::new(
        config.strategy,
        n,
        config.strategy_params.fedbuff_buffer,
        config.strategy_params.afl_alpha,
    )?;
    let mut clock = VirtualClock::new();
    let mut records = Vec::new();
    let mut events = Vec::new();

    for round in 1..=config.simulation.rounds {
        // Round 1 trains everyone; BFL rounds ≥ 2 train only the selected
        // set fixed by the round-1 deadline.
        let participant_idx: Vec<usize> = match (config.strategy, state.selection()) {
            (StrategyKind::Bfl, Some(selection)) => (0..n)
                .filter(|&i| {
                    selection
                        .selected
                        .contains(&experiment.clients[i].profile.client_id)
                })
                .collect(),
            _ => (0..n).collect(),
        };
        if participant_idx.is_empty() {
            return Err(Error::Protocol("no participants left for this round".into()));
        }

        // Times are known before any training happens, so the horizon check
        // comes first.
        let duration = participant_idx
            .iter()
            .map(|&i| experiment.clients[i].training_time_ms)
            .fold(f64::NEG_INFINITY, f64::max);
        if let Some(horizon) = config.simulation.time_horizon_ms {
            if clock.now_ms() + duration > horizon {
                break;
            }
        }

        let mut arrivals = Vec::with_capacity(participant_idx.len());
        for &i in &participant_idx {
            let update = experiment.train_update(i, &global, round)?;
            events.push(SimEvent {
                time_ms: clock.now_ms() + update.training_time_ms,
                round,
                kind: EventKind::Arrival {
                    client: update.client_id,
                },
            });
            arrivals.push(update);
        }
        arrivals.sort_by(|a, b| {
            a.training_time_ms
                .total_cmp(&b.training_time_ms)
                .then(a.client_id.cmp(&b.client_id))
        });

        let crypto = experiment.crypto();
        let outcome = protocol::run_round(&mut state, &global, &arrivals, &crypto)?;
        for agg in &outcome.aggregates {
            let mut contributors = agg.contributors.clone();
            contributors.sort_unstable();
            events.push(SimEvent {
                time_ms: clock.now_ms() + agg.at_ms,
                round,
                kind: EventKind::Aggregate { contributors },
            });
        }
        clock.advance(outcome.duration_ms);
        global = outcome
            .new_global
            .ok_or_else(|| Error::Protocol("synchronous round produced no global".into()))?;
        ensure_finite(&global)?;

        let val_accuracy = experiment.evaluate_global(&global, &experiment.val)?;
        records.push(RoundRecord {
            round,
            sim_time_ms: clock.now_ms(),
            val_accuracy,
            participants: outcome.participants,
        });

        if config.simulation.stop_on_target {
            if let Some(target) = config.simulation.target_accuracy {
                if val_accuracy >= target {
                    break;
                }
            }
        }
    }
    Ok((records, events, global, clock))
}

/// AFL and FedBuff: free-running clients; each finish event feeds the server
/// and the client immediately restarts from the current global.
fn run_event_driven(
    config: &ExperimentConfig,
    experiment: &mut Experiment,
    mut global: Vec<f64>,
) -> Result<LoopOutput> {
    let n = experiment.clients.len();
    let mut state = StrategyState::new(
        config.strategy,
        n,
        config.strategy_params.fedbuff_buffer,
        config.strategy_params.afl_alpha,
    )?;
    let mut clock = VirtualClock::new();
    let mut records = Vec::new();
    let mut events = Vec::new();

    let mut heap: BinaryHeap<Reverse<EventKey>> = BinaryHeap::new();
    for (i, client) in experiment.clients.iter_mut().enumerate() {
        client.base = global.clone();
        heap.push(Reverse(EventKey(client.training_time_ms, i)));
    }

    let mut agg_round = 0usize;
    'outer: while agg_round < config.simulation.rounds {
        let Reverse(EventKey(time_ms, idx)) = heap.pop().expect("heap never empties");
        if let Some(horizon) = config.simulation.time_horizon_ms {
            if time_ms > horizon {
                break;
            }
        }
        clock.advance_to(time_ms);

        let base = std::mem::take(&mut experiment.clients[idx].base);
        let update = experiment.train_update(idx, &base, agg_round + 1)?;
        let client_id = update.client_id;
        events.push(SimEvent {
            time_ms,
            round: agg_round + 1,
            kind: EventKind::Arrival { client: client_id },
        });

        let crypto = experiment.crypto();
        let outcome = protocol::run_round(&mut state, &global, &[update], &crypto)?;
        if let Some(new_global) = outcome.new_global {
            global = new_global;
            ensure_finite(&global)?;
        }
        for agg in &outcome.aggregates {
            agg_round += 1;
            let mut contributors = agg.contributors.clone();
            contributors.sort_unstable();
            events.push(SimEvent {
                time_ms,
                round: agg_round,
                kind: EventKind::Aggregate { contributors },
            });
            let val_accuracy = experiment.evaluate_global(&global, &experiment.val)?;
            records.push(RoundRecord {
                round: agg_round,
                sim_time_ms: time_ms,
                val_accuracy,
                participants: {
                    let mut p = agg.contributors.clone();
                    p.sort_unstable();
                    p
                },
            });
            if config.simulation.stop_on_target {
                if let Some(target) = config.simulation.target_accuracy {
                    if val_accuracy >= target {
                        break 'outer;
                    }
                }
            }
        }

        // the client restarts immediately from the current global
        let client = &mut experiment.clients[idx];
        client.base = global.clone();
        heap.push(Reverse(EventKey(time_ms + client.training_time_ms, idx)));
    }
    Ok((records, events, global, clock))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{
        ClientConfig, DatasetConfig, HeConfig, ModelConfig, OutputConfig, SimulationConfig,
        StrategyParams,
    };

    fn hyper_quick() -> HyperParams {
        HyperParams {
            learning_rate: 0.05,
            momentum: 0.8,
            batch_size: 32,
            local_epochs: 2,
        }
    }

    fn paper_clients() -> Vec<ClientConfig> {
        // three fast clients with tiny shards, two slow ones with most of
        // the data
        let delays = [1.0, 2.0, 3.0, 7.0, 9.0];
        let fractions = [0.05, 0.05, 0.05, 0.8, 0.9];
        delays
            .iter()
            .zip(fractions)
            .enumerate()
            .map(|(id, (&d, f))| ClientConfig {
                id,
                speed_delay_s: d,
                shard_fraction: f,
                local_epochs: None,
                batch_size: None,
                learning_rate: None,
            })
            .collect()
    }

    fn test_config(strategy: StrategyKind, rounds: usize) -> ExperimentConfig {
        ExperimentConfig {
            seed: 2024,
            strategy,
            dataset: DatasetConfig {
                source: "synthetic".into(),
                preset: Some("gas-like".into()),
                samples: Some(600),
                spread: Some(0.05),
                path: None,
                label_column: None,
                class_count: None,
                split: [0.8, 0.1, 0.1],
            },
            model: ModelConfig {
                architecture: "gas-pipeline".into(),
                dims: None,
            },
            hyper: hyper_quick(),
            he: HeConfig {
                enabled: false,
                ..HeConfig::default()
            },
            simulation: SimulationConfig {
                rounds,
                target_accuracy: None,
                stop_on_target: false,
                time_horizon_ms: None,
                compute_ms_per_sample_epoch: 0.1,
            },
            strategy_params: StrategyParams {
                fedbuff_buffer: Some(2),
                afl_alpha: 0.5,
            },
            clients: paper_clients(),
            output: OutputConfig::default(),
        }
    }

    #[test]
    fn training_time_composes_compute_and_delay() {
        let profile = ClientProfile {
            client_id: 0,
            speed_delay_s: 0.0,
            shard_fraction: 1.0,
            hyper: HyperParams::default(),
        };
        assert_eq!(client_training_time(&profile, 120.0), 120.0);
        let slow = ClientProfile {
            speed_delay_s: 9.0,
            ..profile
        };
        assert_eq!(client_training_time(&slow, 120.0), 9120.0);
    }

    #[test]
    fn fast_slow_ordering_preserved_for_bounded_compute() {
        // delays from {1..3}s (fast) and {5..10}s (slow): any compute up to
        // 1000 ms keeps every fast client ahead of every slow one
        for fast_delay in 1..=3u64 {
            for slow_delay in 5..=10u64 {
                let fast = ClientProfile {
                    client_id: 0,
                    speed_delay_s: fast_delay as f64,
                    shard_fraction: 1.0,
                    hyper: HyperParams::default(),
                };
                let slow = ClientProfile {
                    client_id: 1,
                    speed_delay_s: slow_delay as f64,
                    shard_fraction: 1.0,
                    hyper: HyperParams::default(),
                };
                assert!(client_training_time(&fast, 1000.0) < client_training_time(&slow, 0.0));
            }
        }
    }

    #[test]
    fn convergence_rules() {
        let base = MetricsLog {
            strategy: StrategyKind::Sfl,
            seed: 0,
            rounds: vec![0.5, 0.9, 0.96]
                .into_iter()
                .enumerate()
                .map(|(i, acc)| RoundRecord {
                    round: i + 1,
                    sim_time_ms: (i + 1) as f64 * 100.0,
                    val_accuracy: acc,
                    participants: vec![0],
                })
                .collect(),
            events: vec![],
            final_test_accuracy: 0.96,
            convergence_round: None,
            total_sim_time_ms: 300.0,
            final_global: vec![],
            wall_clock_ms: 0.0,
        };
        assert_eq!(convergence_speed(&base, 0.0), Some(1));
        assert_eq!(convergence_speed(&base, 1.01), None);
        assert_eq!(convergence_speed(&base, 0.95), Some(3));
    }

    #[test]
    fn sfl_round_duration_is_slowest_client() {
        let config = test_config(StrategyKind::Sfl, 3);
        let log = run_experiment(&config).unwrap();
        assert_eq!(log.rounds.len(), 3);
        // slowest: delay 9 s + 0.1 ms × (0.9·480 rounded) samples × 2 epochs
        let durations = log.round_durations_ms();
        let expected = 9000.0 + 0.1 * 432.0 * 2.0;
        for d in durations {
            assert!((d - expected).abs() < 1e-9, "duration {d} vs {expected}");
        }
        // every round includes all five clients
        for r in &log.rounds {
            assert_eq!(r.participants, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn bfl_fixes_selection_and_shortens_rounds() {
        let config = test_config(StrategyKind::Bfl, 4);
        let log = run_experiment(&config).unwrap();
        assert_eq!(log.rounds[0].participants, vec![0, 1, 2, 3, 4]);
        for r in &log.rounds[1..] {
            assert_eq!(r.participants, vec![0, 1, 2], "round {}", r.round);
        }
        let durations = log.round_durations_ms();
        // rounds ≥ 2 wait only for the fast class
        for d in &durations[1..] {
            assert!(*d < durations[0]);
        }
        // no arrivals from non-selected clients after round 1
        for e in &log.events {
            if e.round >= 2 {
                if let EventKind::Arrival { client } = e.kind {
                    assert!(client <= 2, "slow client {client} trained in round {}", e.round);
                }
            }
        }
    }

    #[test]
    fn afl_merges_once_per_arrival() {
        let mut config = test_config(StrategyKind::Afl, 50);
        config.simulation.time_horizon_ms = Some(30_000.0);
        let log = run_experiment(&config).unwrap();
        let arrivals = log
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::Arrival { .. }))
            .count();
        assert_eq!(log.aggregate_event_count(), arrivals);
        assert!(log.aggregate_event_count() > 0);
    }

    #[test]
    fn fedbuff_first_flush_contains_only_fast_clients() {
        let mut config = test_config(StrategyKind::FedBuff, 10);
        config.simulation.time_horizon_ms = Some(60_000.0);
        let log = run_experiment(&config).unwrap();
        let first = log.first_aggregate().expect("no aggregation happened");
        match &first.kind {
            EventKind::Aggregate { contributors } => {
                assert_eq!(contributors.len(), 2);
                for c in contributors {
                    assert!(*c <= 2, "slow client {c} in first buffer");
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn experiment_is_deterministic() {
        let config = test_config(StrategyKind::Bfl, 3);
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.rounds, b.rounds);
        assert_eq!(a.events, b.events);
        assert_eq!(a.final_test_accuracy, b.final_test_accuracy);
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn global_stays_finite_and_accuracies_valid() {
        let config = test_config(StrategyKind::Sfl, 3);
        let log = run_experiment(&config).unwrap();
        for r in &log.rounds {
            assert!((0.0..=1.0).contains(&r.val_accuracy));
        }
        assert!((0.0..=1.0).contains(&log.final_test_accuracy));
    }

    #[test]
    fn config_errors_surface_before_rounds() {
        let mut config = test_config(StrategyKind::Sfl, 3);
        config.dataset.split = [0.5, 0.1, 0.1];
        assert!(matches!(run_experiment(&config), Err(Error::Config(_))));
    }

    #[test]
    fn he_on_and_off_agree_within_codec_tolerance() {
        // tiny scenario so the encrypted run stays quick
        let mut config = test_config(StrategyKind::Sfl, 2);
        config.dataset.samples = Some(200);
        config.model = ModelConfig {
            architecture: "custom".into(),
            dims: Some(vec![18, 6, 8]),
        };
        config.hyper.local_epochs = 1;
        config.clients = vec![
            ClientConfig {
                id: 0,
                speed_delay_s: 1.0,
                shard_fraction: 0.3,
                local_epochs: None,
                batch_size: None,
                learning_rate: None,
            },
            ClientConfig {
                id: 1,
                speed_delay_s: 2.0,
                shard_fraction: 0.3,
                local_epochs: None,
                batch_size: None,
                learning_rate: None,
            },
        ];
        config.he = HeConfig {
            enabled: false,
            ..HeConfig::default()
        };

        let plain = run_experiment(&config).unwrap();
        config.he = HeConfig {
            enabled: true,
            key_bits: 128,
            scale: 1_000_000,
            chained_scaling: false,
        };
        let encrypted = run_experiment(&config).unwrap();

        // codec noise budget: 2/scale per element per round; gradient-path
        // amplification of earlier rounds' noise gets a ×2 allowance
        let rounds = plain.rounds.len() as f64;
        let tolerance = rounds * 2e-6 * 2.0;
        assert_eq!(plain.final_global.len(), encrypted.final_global.len());
        for (i, (p, e)) in plain
            .final_global
            .iter()
            .zip(&encrypted.final_global)
            .enumerate()
        {
            assert!(
                (p - e).abs() <= tolerance,
                "param {i}: plain {p} vs encrypted {e} beyond {tolerance}"
            );
        }
    }
}
