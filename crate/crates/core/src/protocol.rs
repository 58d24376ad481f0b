//! Server-side federated learning strategies: synchronous (SFL),
//! asynchronous (AFL), buffered (FedBuff), and the weighted-average-time
//! variant (BFL), all over the same encrypted-aggregation core.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::codec::FixedPointCodec;
use crate::error::{Error, Result};
use crate::paillier::{self, Ciphertext, KeyPair, PublicKey};

pub type ClientId = usize;

/// A vector of ciphertexts under one key. `scale_power` tracks how many
/// fixed-point scale factors the underlying plaintexts carry.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedVector {
    pub values: Vec<Ciphertext>,
    pub modulus: BigUint,
    pub scale_power: u32,
}

impl EncryptedVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Model parameters as carried by a client update.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdatePayload {
    Encrypted(EncryptedVector),
    Plain(Vec<f64>),
}

impl UpdatePayload {
    pub fn len(&self) -> usize {
        match self {
            UpdatePayload::Encrypted(v) => v.len(),
            UpdatePayload::Plain(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One agent's trained parameters plus its reported training time.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: ClientId,
    pub payload: UpdatePayload,
    pub training_time_ms: f64,
    pub round_index: usize,
}

/// Outcome of the deadline computation: the weighted average time and the
/// set of clients at or under it.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub t_wavg_ms: f64,
    pub selected: BTreeSet<ClientId>,
}

/// The four server strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Sfl,
    Afl,
    FedBuff,
    Bfl,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Sfl,
        StrategyKind::Afl,
        StrategyKind::FedBuff,
        StrategyKind::Bfl,
    ];
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            StrategyKind::Sfl => "sfl",
            StrategyKind::Afl => "afl",
            StrategyKind::FedBuff => "fedbuff",
            StrategyKind::Bfl => "bfl",
        };
        write!(f, "{name}")
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sfl" => Ok(StrategyKind::Sfl),
            "afl" => Ok(StrategyKind::Afl),
            "fedbuff" => Ok(StrategyKind::FedBuff),
            "bfl" => Ok(StrategyKind::Bfl),
            other => Err(Error::Config(format!(
                "unknown strategy '{other}' (expected sfl | afl | fedbuff | bfl)"
            ))),
        }
    }
}

/// Whether aggregation math runs over ciphertexts or plaintext vectors.
#[derive(Debug, Clone)]
pub enum CryptoCtx<'a> {
    Plain,
    Encrypted {
        keypair: &'a KeyPair,
        codec: FixedPointCodec,
        /// Apply the scalar factor inside the accumulation loop instead of
        /// once after the sum. Kept for study; see
        /// [`encrypted_aggregate_chained`].
        chained: bool,
    },
}

// --- weighted average time (the BFL deadline) ---

/// Deadline over per-client training times: sort descending, invert each
/// time, reverse the weight list so the slowest time pairs with the largest
/// weight, and take the weighted mean.
pub fn weighted_average_time(times_ms: &[f64]) -> Result<f64> {
    if times_ms.is_empty() {
        return Err(Error::Domain("weighted average time of an empty list".into()));
    }
    if times_ms.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(Error::Domain(
            "training times must be positive and finite".into(),
        ));
    }
    let mut sorted = times_ms.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let initial: Vec<f64> = sorted.iter().map(|t| 1.0 / t).collect();
    let final_weights: Vec<f64> = initial.into_iter().rev().collect();
    let weight_sum: f64 = final_weights.iter().sum();
    let weighted: f64 = sorted.iter().zip(&final_weights).map(|(t, w)| t * w).sum();
    let t_wavg = weighted / weight_sum;
    // The exact value is a convex combination of the times; clamp out the
    // floating-point residue so min ≤ t_wavg ≤ max holds exactly.
    Ok(t_wavg.clamp(*sorted.last().unwrap(), sorted[0]))
}

/// Clients whose training time is at or under the weighted average time.
pub fn select_clients(updates: &[ClientUpdate]) -> Result<SelectionResult> {
    let times: Vec<f64> = updates.iter().map(|u| u.training_time_ms).collect();
    let t_wavg_ms = weighted_average_time(&times)?;
    let selected = updates
        .iter()
        .filter(|u| u.training_time_ms <= t_wavg_ms)
        .map(|u| u.client_id)
        .collect();
    Ok(SelectionResult { t_wavg_ms, selected })
}

// --- encrypted transport ---

/// Fixed-point encode and encrypt a parameter vector.
pub fn encrypt_vector<R: RngCore>(
    pk: &PublicKey,
    codec: &FixedPointCodec,
    values: &[f64],
    rng: &mut R,
) -> Result<EncryptedVector> {
    let mut out = Vec::with_capacity(values.len());
    for &x in values {
        out.push(paillier::encrypt(pk, &codec.encode(x)?, rng)?);
    }
    Ok(EncryptedVector {
        values: out,
        modulus: pk.modulus().clone(),
        scale_power: 1,
    })
}

/// Decrypt and decode a vector at its recorded scale power.
pub fn decrypt_vector(
    keypair: &KeyPair,
    codec: &FixedPointCodec,
    enc: &EncryptedVector,
) -> Result<Vec<f64>> {
    if &enc.modulus != keypair.public.modulus() {
        return Err(Error::Protocol("ciphertext vector is under a different key".into()));
    }
    let decode = match enc.scale_power {
        1 => FixedPointCodec::decode,
        2 => FixedPointCodec::decode_double_scale,
        p => {
            return Err(Error::Protocol(format!(
                "unsupported scale power {p} (expected 1 or 2)"
            )))
        }
    };
    enc.values
        .iter()
        .map(|c| Ok(decode(codec, &paillier::decrypt(&keypair.secret, c)?)))
        .collect()
}

// --- aggregation ---

fn check_aggregate_inputs(
    pk: &PublicKey,
    codec: &FixedPointCodec,
    updates: &[&EncryptedVector],
) -> Result<usize> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Protocol("aggregation needs at least one update".into()))?;
    let len = first.len();
    if codec.modulus() != pk.modulus() {
        return Err(Error::Protocol("codec modulus does not match the key".into()));
    }
    for u in updates {
        if u.len() != len {
            return Err(Error::Protocol(format!(
                "update length mismatch: {} vs {len}",
                u.len()
            )));
        }
        if &u.modulus != pk.modulus() {
            return Err(Error::Protocol("updates were encrypted under different keys".into()));
        }
        if u.scale_power != 1 {
            return Err(Error::Protocol(
                "aggregation inputs must carry a single scale factor".into(),
            ));
        }
    }
    Ok(len)
}

/// Element-wise homomorphic sum of all updates followed by one scalar
/// multiplication with the encoded reciprocal of the update count.
/// Decrypting with double-scale decoding yields the element-wise mean of the
/// contributed plaintexts.
pub fn encrypted_aggregate(
    pk: &PublicKey,
    codec: &FixedPointCodec,
    updates: &[&EncryptedVector],
) -> Result<EncryptedVector> {
    check_aggregate_inputs(pk, codec, updates)?;
    let mut acc = updates[0].values.clone();
    for u in &updates[1..] {
        for (a, c) in acc.iter_mut().zip(&u.values) {
            *a = paillier::he_add(pk, a, c)?;
        }
    }
    let reciprocal = codec.encode(1.0 / updates.len() as f64)?;
    for a in acc.iter_mut() {
        *a = paillier::he_scalar_mul(pk, a, &reciprocal)?;
    }
    Ok(EncryptedVector {
        values: acc,
        modulus: pk.modulus().clone(),
        scale_power: 2,
    })
}

/// The accumulation loop with the scalar factor applied at every step:
/// `M ← (cⱼ ⊕ M) ⊗ enc(1/divisor)`. Update `j` of `m` ends up scaled by
/// `enc(1/divisor)^(m-j+1)`, so the result is not a mean; the last update
/// dominates after double-scale decoding. Kept for comparison with
/// [`encrypted_aggregate`].
pub fn encrypted_aggregate_chained(
    pk: &PublicKey,
    codec: &FixedPointCodec,
    updates: &[&EncryptedVector],
    divisor: usize,
) -> Result<Vec<Ciphertext>> {
    let len = check_aggregate_inputs(pk, codec, updates)?;
    if divisor == 0 {
        return Err(Error::Domain("divisor must be positive".into()));
    }
    let w = codec.encode(1.0 / divisor as f64)?;
    let mut acc = vec![Ciphertext::trivial_zero(); len];
    for u in updates {
        for (a, c) in acc.iter_mut().zip(&u.values) {
            *a = paillier::he_scalar_mul(pk, &paillier::he_add(pk, c, a)?, &w)?;
        }
    }
    Ok(acc)
}

/// Element-wise mean of plaintext vectors.
pub fn plain_aggregate(updates: &[&[f64]]) -> Result<Vec<f64>> {
    let first = updates
        .first()
        .ok_or_else(|| Error::Protocol("aggregation needs at least one update".into()))?;
    let len = first.len();
    if updates.iter().any(|u| u.len() != len) {
        return Err(Error::Protocol("update length mismatch".into()));
    }
    let mut mean = vec![0.0; len];
    for u in updates {
        for (m, v) in mean.iter_mut().zip(u.iter()) {
            *m += v;
        }
    }
    let inv = 1.0 / updates.len() as f64;
    for m in mean.iter_mut() {
        *m *= inv;
    }
    Ok(mean)
}

/// Convex mixing of a local model into the global one:
/// `new = (1-α)·global + α·local`.
pub fn afl_merge(global: &[f64], local: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if global.len() != local.len() {
        return Err(Error::Shape(format!(
            "global has {} parameters, local has {}",
            global.len(),
            local.len()
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha must be in (0, 1], got {alpha}")));
    }
    Ok(global
        .iter()
        .zip(local)
        .map(|(g, l)| (1.0 - alpha) * g + alpha * l)
        .collect())
}

// --- strategy state machine ---

/// FedBuff's K-slot update buffer.
#[derive(Debug, Clone)]
pub struct FedBuffState {
    capacity: usize,
    buffer: Vec<ClientUpdate>,
}

impl FedBuffState {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("fedbuff buffer capacity must be positive".into()));
        }
        Ok(FedBuffState {
            capacity,
            buffer: Vec::new(),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }
}

/// Default FedBuff capacity: half the client count, rounded up.
pub fn default_fedbuff_capacity(n_clients: usize) -> usize {
    n_clients.div_ceil(2)
}

/// Buffer one update; when the buffer reaches capacity, aggregate its
/// contents, clear it, and return the new global with the contributor set.
pub fn fedbuff_step(
    state: &mut FedBuffState,
    update: ClientUpdate,
    crypto: &CryptoCtx,
) -> Result<Option<(Vec<f64>, Vec<ClientId>)>> {
    state.buffer.push(update);
    if state.buffer.len() < state.capacity {
        return Ok(None);
    }
    let contributors: Vec<ClientId> = state.buffer.iter().map(|u| u.client_id).collect();
    let global = aggregate_mean(&state.buffer, crypto)?;
    state.buffer.clear();
    Ok(Some((global, contributors)))
}

/// Server-side per-strategy state carried across rounds.
#[derive(Debug, Clone)]
pub struct StrategyState {
    kind: StrategyKind,
    rounds_completed: usize,
    bfl_selection: Option<SelectionResult>,
    fedbuff: FedBuffState,
    afl_alpha: f64,
}

impl StrategyState {
    pub fn new(
        kind: StrategyKind,
        n_clients: usize,
        fedbuff_capacity: Option<usize>,
        afl_alpha: f64,
    ) -> Result<Self> {
        if !(afl_alpha > 0.0 && afl_alpha <= 1.0) {
            return Err(Error::Config(format!(
                "strategy_params.afl_alpha must be in (0, 1], got {afl_alpha}"
            )));
        }
        let capacity = fedbuff_capacity.unwrap_or_else(|| default_fedbuff_capacity(n_clients));
        Ok(StrategyState {
            kind,
            rounds_completed: 0,
            bfl_selection: None,
            fedbuff: FedBuffState::new(capacity.max(1))?,
            afl_alpha,
        })
    }

    pub fn kind(&self) -> StrategyKind {
        self.kind
    }

    pub fn rounds_completed(&self) -> usize {
        self.rounds_completed
    }

    /// BFL's client selection, fixed after round 1.
    pub fn selection(&self) -> Option<&SelectionResult> {
        self.bfl_selection.as_ref()
    }

    pub fn fedbuff_capacity(&self) -> usize {
        self.fedbuff.capacity()
    }

    pub fn afl_alpha(&self) -> f64 {
        self.afl_alpha
    }
}

/// One server aggregation with its contributor set, timed relative to the
/// round start.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateEvent {
    pub contributors: Vec<ClientId>,
    pub at_ms: f64,
}

/// Result of processing one batch of arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    /// Decoded global parameters after the batch, if any aggregation fired.
    pub new_global: Option<Vec<f64>>,
    /// Time from round start until the last required arrival.
    pub duration_ms: f64,
    pub participants: Vec<ClientId>,
    pub aggregates: Vec<AggregateEvent>,
    /// Set when a BFL first round computed the deadline selection.
    pub selection: Option<SelectionResult>,
}

fn payload_vector<'a>(update: &'a ClientUpdate, crypto: &CryptoCtx) -> Result<&'a EncryptedVector> {
    match (&update.payload, crypto) {
        (UpdatePayload::Encrypted(v), CryptoCtx::Encrypted { .. }) => Ok(v),
        _ => Err(Error::Protocol(
            "expected an encrypted payload for the encrypted context".into(),
        )),
    }
}

/// Mean of the updates' parameters under the given crypto context, decoded
/// to plaintext. Divides by the number of contributing updates.
pub fn aggregate_mean(updates: &[ClientUpdate], crypto: &CryptoCtx) -> Result<Vec<f64>> {
    match crypto {
        CryptoCtx::Plain => {
            let vectors: Result<Vec<&[f64]>> = updates
                .iter()
                .map(|u| match &u.payload {
                    UpdatePayload::Plain(v) => Ok(v.as_slice()),
                    UpdatePayload::Encrypted(_) => Err(Error::Protocol(
                        "encrypted payload in plaintext context".into(),
                    )),
                })
                .collect();
            plain_aggregate(&vectors?)
        }
        CryptoCtx::Encrypted {
            keypair,
            codec,
            chained,
        } => {
            let vectors: Result<Vec<&EncryptedVector>> =
                updates.iter().map(|u| payload_vector(u, crypto)).collect();
            let vectors = vectors?;
            if *chained {
                let cipher =
                    encrypted_aggregate_chained(&keypair.public, codec, &vectors, vectors.len())?;
                // Mixed scale factors: only the final term carries exactly
                // scale²; earlier terms decay by 1/(divisor·scale) each.
                cipher
                    .iter()
                    .map(|c| {
                        Ok(codec.decode_double_scale(&paillier::decrypt(&keypair.secret, c)?))
                    })
                    .collect()
            } else {
                let aggregated = encrypted_aggregate(&keypair.public, codec, &vectors)?;
                decrypt_vector(keypair, codec, &aggregated)
            }
        }
    }
}

fn quantized(values: Vec<f64>, crypto: &CryptoCtx) -> Result<Vec<f64>> {
    match crypto {
        CryptoCtx::Plain => Ok(values),
        // Re-encryption only quantizes: the Paillier roundtrip is exact on
        // the encoded integers.
        CryptoCtx::Encrypted { codec, .. } => values.iter().map(|&v| codec.quantize(v)).collect(),
    }
}

/// Process one batch of arrivals (in time order) under the state's strategy.
///
/// SFL aggregates the whole batch; BFL additionally computes the deadline
/// selection in round 1 and restricts later rounds to selected clients; AFL
/// merges once per arrival; FedBuff forwards each arrival through the
/// buffer.
pub fn run_round(
    state: &mut StrategyState,
    global: &[f64],
    arrivals: &[ClientUpdate],
    crypto: &CryptoCtx,
) -> Result<RoundOutcome> {
    if arrivals.is_empty() {
        return Err(Error::Protocol("round received no arrivals".into()));
    }
    let round = state.rounds_completed + 1;
    let duration_ms = arrivals
        .iter()
        .map(|u| u.training_time_ms)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut participants: Vec<ClientId> = arrivals.iter().map(|u| u.client_id).collect();
    participants.sort_unstable();

    let outcome = match state.kind {
        StrategyKind::Sfl => {
            let new_global = aggregate_mean(arrivals, crypto)?;
            RoundOutcome {
                new_global: Some(new_global),
                duration_ms,
                participants: participants.clone(),
                aggregates: vec![AggregateEvent {
                    contributors: participants,
                    at_ms: duration_ms,
                }],
                selection: None,
            }
        }
        StrategyKind::Bfl => {
            let selection = if round == 1 {
                let selection = select_clients(arrivals)?;
                state.bfl_selection = Some(selection.clone());
                Some(selection)
            } else {
                let selection = state.bfl_selection.as_ref().ok_or_else(|| {
                    Error::Protocol("BFL round ≥ 2 without a round-1 selection".into())
                })?;
                if let Some(stray) = arrivals
                    .iter()
                    .find(|u| !selection.selected.contains(&u.client_id))
                {
                    return Err(Error::Protocol(format!(
                        "client {} arrived in round {round} but is not selected",
                        stray.client_id
                    )));
                }
                None
            };
            let new_global = aggregate_mean(arrivals, crypto)?;
            RoundOutcome {
                new_global: Some(new_global),
                duration_ms,
                participants: participants.clone(),
                aggregates: vec![AggregateEvent {
                    contributors: participants,
                    at_ms: duration_ms,
                }],
                selection,
            }
        }
        StrategyKind::Afl => {
            let mut current = global.to_vec();
            let mut aggregates = Vec::with_capacity(arrivals.len());
            for update in arrivals {
                let local = match (&update.payload, crypto) {
                    (UpdatePayload::Plain(v), CryptoCtx::Plain) => v.clone(),
                    (UpdatePayload::Encrypted(v), CryptoCtx::Encrypted { keypair, codec, .. }) => {
                        decrypt_vector(keypair, codec, v)?
                    }
                    _ => {
                        return Err(Error::Protocol(
                            "payload kind does not match the crypto context".into(),
                        ))
                    }
                };
                current = quantized(afl_merge(&current, &local, state.afl_alpha)?, crypto)?;
                aggregates.push(AggregateEvent {
                    contributors: vec![update.client_id],
                    at_ms: update.training_time_ms,
                });
            }
            RoundOutcome {
                new_global: Some(current),
                duration_ms,
                participants,
                aggregates,
                selection: None,
            }
        }
        StrategyKind::FedBuff => {
            let mut aggregates = Vec::new();
            let mut new_global = None;
            for update in arrivals {
                let at_ms = update.training_time_ms;
                if let Some((global, contributors)) =
                    fedbuff_step(&mut state.fedbuff, update.clone(), crypto)?
                {
                    aggregates.push(AggregateEvent { contributors, at_ms });
                    new_global = Some(global);
                }
            }
            RoundOutcome {
                new_global,
                duration_ms,
                participants,
                aggregates,
                selection: None,
            }
        }
    };
    state.rounds_completed = round;
    Ok(outcome)
}
