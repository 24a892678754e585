//! Client behavior profiles for attack injection, plus the per-client
//! state the round loop owns.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::SigningKey;
use crate::error::Result;
use crate::fl::{evaluate, local_train, Dataset, ModelParameters, TrainConfig};
use crate::ledger::{hash_model, Address, Digest, ModelRecord};
use crate::monitor::Submission;

/// How a client behaves when asked for a round's submission.
#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorProfile {
    /// Trains and submits truthfully.
    Honest,
    /// Trains until `start_round`, then re-submits its previous parameters
    /// bit for bit (a free-rider).
    Lazy { start_round: u64 },
    /// Trains and signs the truthful hash record, then perturbs the
    /// transmitted parameters so the recomputed hash cannot match.
    Falsifier { noise_magnitude: f64 },
    /// Submits under a fabricated identity absent from the authorization
    /// list, with a fresh unregistered key per round.
    Sybil,
    /// Re-emits its own earlier mined record and parameters verbatim.
    Replayer,
}

impl BehaviorProfile {
    pub fn is_honest(&self) -> bool {
        matches!(self, BehaviorProfile::Honest)
    }

    pub fn name(&self) -> &'static str {
        match self {
            BehaviorProfile::Honest => "honest",
            BehaviorProfile::Lazy { .. } => "lazy",
            BehaviorProfile::Falsifier { .. } => "falsifier",
            BehaviorProfile::Sybil => "sybil",
            BehaviorProfile::Replayer => "replayer",
        }
    }
}

/// Everything the round loop tracks per client.
#[derive(Debug)]
pub struct ClientState {
    pub address: Address,
    pub signing_key: SigningKey,
    pub dataset: Dataset,
    pub behavior: BehaviorProfile,
    /// Next fresh per-client sequence number (starts at 1).
    next_sequence: u64,
    /// Most recent transmitted parameters and their record.
    pub last_submitted: Option<(ModelParameters, ModelRecord)>,
    /// Most recent submission confirmed mined, kept for replays.
    pub last_mined: Option<(ModelParameters, ModelRecord)>,
    /// Chain head this client last received via broadcast.
    pub head: Option<Digest>,
}

impl ClientState {
    pub fn new(
        address: Address,
        signing_key: SigningKey,
        dataset: Dataset,
        behavior: BehaviorProfile,
    ) -> Self {
        ClientState {
            address,
            signing_key,
            dataset,
            behavior,
            next_sequence: 1,
            last_submitted: None,
            last_mined: None,
            head: None,
        }
    }

    pub fn data_size(&self) -> u64 {
        self.dataset.len() as u64
    }

    fn take_sequence(&mut self) -> u64 {
        let seq = self.next_sequence;
        self.next_sequence += 1;
        seq
    }

    /// Whether this client will actually run local training this round.
    /// Frozen lazy clients and replaying clients skip it entirely (they
    /// pay transmission latency but no training time).
    pub fn will_train(&self, round: u64) -> bool {
        match self.behavior {
            BehaviorProfile::Lazy { start_round } => {
                round < start_round || self.last_submitted.is_none()
            }
            BehaviorProfile::Replayer => self.last_mined.is_none(),
            _ => true,
        }
    }
}

fn train_and_sign(
    state: &mut ClientState,
    global: &ModelParameters,
    round: u64,
    signed_at: u64,
    train_cfg: &TrainConfig,
) -> Result<(ModelParameters, ModelRecord)> {
    let trained = local_train(global, &state.dataset, train_cfg)?;
    let self_reported = evaluate(&trained, &state.dataset)?;
    let sequence = state.take_sequence();
    let record = ModelRecord::signed(
        &state.signing_key,
        state.address.clone(),
        round,
        hash_model(&trained)?,
        self_reported,
        state.data_size(),
        signed_at,
        sequence,
    );
    Ok((trained, record))
}

/// Produces the round's submission according to the client's profile.
/// `signed_at` is the tick at which the client finishes and signs;
/// `rng` drives adversarial randomness (falsifier noise, sybil keys).
pub fn produce_submission(
    state: &mut ClientState,
    global: &ModelParameters,
    round: u64,
    signed_at: u64,
    train_cfg: &TrainConfig,
    rng: &mut ChaCha20Rng,
) -> Result<Submission> {
    let submission = match state.behavior {
        BehaviorProfile::Honest => {
            let (params, record) = train_and_sign(state, global, round, signed_at, train_cfg)?;
            state.last_submitted = Some((params.clone(), record.clone()));
            Submission::new(params, record, signed_at)
        }
        BehaviorProfile::Lazy { start_round } => {
            if round >= start_round && state.last_submitted.is_some() {
                // stale parameters, fresh signed record
                let stale = state
                    .last_submitted
                    .as_ref()
                    .expect("checked above")
                    .0
                    .clone();
                let self_reported = evaluate(&stale, &state.dataset)?;
                let sequence = state.take_sequence();
                let record = ModelRecord::signed(
                    &state.signing_key,
                    state.address.clone(),
                    round,
                    hash_model(&stale)?,
                    self_reported,
                    state.data_size(),
                    signed_at,
                    sequence,
                );
                state.last_submitted = Some((stale.clone(), record.clone()));
                Submission::new(stale, record, signed_at)
            } else {
                let (params, record) =
                    train_and_sign(state, global, round, signed_at, train_cfg)?;
                state.last_submitted = Some((params.clone(), record.clone()));
                Submission::new(params, record, signed_at)
            }
        }
        BehaviorProfile::Falsifier { noise_magnitude } => {
            let (trained, record) = train_and_sign(state, global, round, signed_at, train_cfg)?;
            let mut perturbed = trained.values().to_vec();
            for v in &mut perturbed {
                *v += rng.gen_range(-noise_magnitude..noise_magnitude);
            }
            let perturbed = ModelParameters::new(trained.arch().clone(), perturbed)?;
            state.last_submitted = Some((perturbed.clone(), record.clone()));
            Submission::new(perturbed, record, signed_at)
        }
        BehaviorProfile::Sybil => {
            let trained = local_train(global, &state.dataset, train_cfg)?;
            let self_reported = evaluate(&trained, &state.dataset)?;
            let fake_key = SigningKey::from_seed(rng.gen());
            let fake_address = Address::new(format!("sybil-{}-r{round}", state.address));
            let record = ModelRecord::signed(
                &fake_key,
                fake_address,
                round,
                hash_model(&trained)?,
                self_reported,
                state.data_size(),
                signed_at,
                1,
            );
            Submission::new(trained, record, signed_at)
        }
        BehaviorProfile::Replayer => {
            if let Some((params, record)) = state.last_mined.clone() {
                // verbatim re-emission, stale timestamp and sequence included
                Submission::new(params, record, signed_at)
            } else {
                let (params, record) =
                    train_and_sign(state, global, round, signed_at, train_cfg)?;
                state.last_submitted = Some((params.clone(), record.clone()));
                Submission::new(params, record, signed_at)
            }
        }
    };
    Ok(submission)
}
