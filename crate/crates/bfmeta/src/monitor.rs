//! Server-side screening of submissions before aggregation: lazy and
//! falsification indicators, batch accuracy thresholding, replay and
//! identity checks, and blacklist bookkeeping.
//!
//! Screening is split around mining. Identity, replay, and duplicate-hash
//! checks run against the chain as it stood *before* this round's block —
//! rejected records are never mined, which is what keeps the chain's
//! signature and sequence invariants intact. The falsification check needs
//! the committed hash, so it runs against the chain *after* mining.
//! [`screen`] performs the whole pipeline in one pass over the post-mining
//! chain plus the length of its pre-mining prefix; [`gate_submission`] is
//! the pre-mining half the orchestrator uses to decide what to hand the
//! miner, and both agree by construction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::{evaluate, Dataset, ModelParameters};
use crate::ledger::{
    hash_model, latest_record_before, latest_record_for, record_for_round, verify_identity,
    Address, AuthorizationList, Block, ModelRecord,
};

/// A client's delivery for one round: the transmitted parameters plus the
/// signed record the miner was given.
#[derive(Clone, Debug)]
pub struct Submission {
    pub client_address: Address,
    pub params: ModelParameters,
    pub record: ModelRecord,
    pub arrival_timestamp: u64,
}

impl Submission {
    pub fn new(params: ModelParameters, record: ModelRecord, arrival_timestamp: u64) -> Self {
        Submission {
            client_address: record.client_address.clone(),
            params,
            record,
            arrival_timestamp,
        }
    }
}

/// Why a submission was excluded, or `Ok` if it wasn't.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    Ok,
    LazyDuplicate,
    HashMismatch,
    LowAccuracy,
    Replay,
    Unauthorized,
    Blacklisted,
}

/// Per-submission screening outcome.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub client_address: Address,
    /// Falsification indicator: committed hash does not match the
    /// transmitted parameters.
    pub alpha: bool,
    /// Lazy indicator: parameters duplicate the client's previous upload.
    pub beta: bool,
    pub measured_accuracy: f64,
    pub included: bool,
    pub reason: Reason,
}

/// Grow-only set of detected malicious addresses with the round each was
/// added.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Blacklist {
    entries: BTreeMap<Address, u64>,
}

impl Blacklist {
    pub fn new() -> Self {
        Blacklist::default()
    }

    pub fn contains(&self, addr: &Address) -> bool {
        self.entries.contains_key(addr)
    }

    pub fn add(&mut self, addr: Address, round: u64) {
        self.entries.entry(addr).or_insert(round);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Address, &u64)> {
        self.entries.iter()
    }
}

/// Lazy-client indicator: 1 iff the transmitted parameters hash to the
/// model hash of the client's latest *prior* on-chain record. The
/// submission's own record (if already mined) has the submission's
/// sequence number and is not a prior record.
pub fn detect_lazy(sub: &Submission, chain: &[Block]) -> Result<bool> {
    let digest = hash_model(&sub.params)?;
    Ok(
        match latest_record_before(chain, &sub.client_address, sub.record.sequence_number) {
            Some(prior) => prior.model_hash == digest,
            None => false,
        },
    )
}

/// Falsification indicator: 1 iff the recomputed hash of the transmitted
/// parameters differs from the hash committed on chain for this client and
/// round. Requires the record mined first.
pub fn detect_falsification(sub: &Submission, chain: &[Block]) -> Result<bool> {
    let Some(on_chain) = record_for_round(chain, &sub.client_address, sub.record.round) else {
        return Err(Error::VerificationPending {
            address: sub.client_address.as_str().to_string(),
            round: sub.record.round,
        });
    };
    Ok(hash_model(&sub.params)? != on_chain.model_hash)
}

/// Exclusion threshold: the batch mean accuracy scaled by the slack factor
/// (1.0 applies the plain mean).
pub fn accuracy_threshold(accuracies: &[f64], slack: f64) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::invalid_input(
            "accuracy threshold needs a non-empty batch",
        ));
    }
    let mean = accuracies.iter().sum::<f64>() / accuracies.len() as f64;
    Ok(mean * slack)
}

/// Replay check against the chain as it stood before this round was mined:
/// flags a submission whose sequence number or timestamp does not advance
/// past the client's latest on-chain record.
pub fn check_replay(sub: &Submission, chain: &[Block]) -> bool {
    match latest_record_for(chain, &sub.client_address) {
        Some(latest) => {
            sub.record.sequence_number <= latest.sequence_number
                || sub.record.timestamp <= latest.timestamp
        }
        None => false,
    }
}

/// Pre-mining gate: the first reason this submission must not reach the
/// miner, or `None` if its record is fit to mine. `chain` is the
/// pre-mining snapshot.
pub fn gate_submission(
    sub: &Submission,
    chain: &[Block],
    auth: &AuthorizationList,
    blacklist: &Blacklist,
) -> Result<Option<Reason>> {
    if blacklist.contains(&sub.client_address) {
        return Ok(Some(Reason::Blacklisted));
    }
    if !verify_identity(&sub.record, auth) {
        return Ok(Some(Reason::Unauthorized));
    }
    if check_replay(sub, chain) {
        return Ok(Some(Reason::Replay));
    }
    if detect_lazy(sub, chain)? {
        return Ok(Some(Reason::LazyDuplicate));
    }
    Ok(None)
}

/// Everything [`screen`] needs besides the submissions themselves.
pub struct ScreenContext<'a> {
    /// Chain including this round's mined block(s).
    pub chain: &'a [Block],
    /// Number of leading blocks that existed before this round's mining;
    /// `chain[..pre_mining_len]` is the pre-mining snapshot.
    pub pre_mining_len: usize,
    pub auth: &'a AuthorizationList,
    pub test_set: &'a Dataset,
    pub blacklist: &'a Blacklist,
    /// Multiplier on the batch mean accuracy (1.0 = plain mean).
    pub slack: f64,
}

/// Runs the whole screening pipeline over one batch, first failure wins
/// per submission: blacklisted, unauthorized, replay, lazy duplicate,
/// falsified hash, low accuracy — anything left is included. Results come
/// back in input order.
///
/// Every submission is evaluated on the held-out test set; the exclusion
/// threshold is the slack-scaled mean over the submissions that survive
/// the pre-mining gate (their models are the ones actually received for
/// aggregation).
pub fn screen(subs: &[Submission], ctx: &ScreenContext<'_>) -> Result<Vec<ScreeningResult>> {
    if ctx.test_set.is_empty() {
        return Err(Error::invalid_input("screening needs a non-empty test set"));
    }
    if ctx.pre_mining_len > ctx.chain.len() {
        return Err(Error::invalid_input(
            "pre_mining_len exceeds the chain length",
        ));
    }
    let pre_chain = &ctx.chain[..ctx.pre_mining_len];

    let mut accuracies = Vec::with_capacity(subs.len());
    let mut gates = Vec::with_capacity(subs.len());
    for sub in subs {
        accuracies.push(evaluate(&sub.params, ctx.test_set)?);
        gates.push(gate_submission(sub, pre_chain, ctx.auth, ctx.blacklist)?);
    }

    let survivor_accuracies: Vec<f64> = accuracies
        .iter()
        .zip(&gates)
        .filter(|(_, g)| g.is_none())
        .map(|(&a, _)| a)
        .collect();
    let threshold = if survivor_accuracies.is_empty() {
        None
    } else {
        Some(accuracy_threshold(&survivor_accuracies, ctx.slack)?)
    };

    let mut results = Vec::with_capacity(subs.len());
    for ((sub, gate), &accuracy) in subs.iter().zip(&gates).zip(&accuracies) {
        let result = match gate {
            Some(reason) => ScreeningResult {
                client_address: sub.client_address.clone(),
                alpha: false,
                beta: *reason == Reason::LazyDuplicate,
                measured_accuracy: accuracy,
                included: false,
                reason: *reason,
            },
            None => {
                let alpha = detect_falsification(sub, ctx.chain)?;
                let threshold = threshold.expect("batch has at least this survivor");
                if alpha {
                    ScreeningResult {
                        client_address: sub.client_address.clone(),
                        alpha: true,
                        beta: false,
                        measured_accuracy: accuracy,
                        included: false,
                        reason: Reason::HashMismatch,
                    }
                } else if accuracy < threshold {
                    ScreeningResult {
                        client_address: sub.client_address.clone(),
                        alpha: false,
                        beta: false,
                        measured_accuracy: accuracy,
                        included: false,
                        reason: Reason::LowAccuracy,
                    }
                } else {
                    ScreeningResult {
                        client_address: sub.client_address.clone(),
                        alpha: false,
                        beta: false,
                        measured_accuracy: accuracy,
                        included: true,
                        reason: Reason::Ok,
                    }
                }
            }
        };
        results.push(result);
    }
    Ok(results)
}

/// Reasons that put an address on the blacklist when they appear in a
/// screening result.
pub fn blacklists(reason: Reason) -> bool {
    matches!(
        reason,
        Reason::Unauthorized | Reason::Replay | Reason::LazyDuplicate
    )
}

#[cfg(test)]
mod tests;
