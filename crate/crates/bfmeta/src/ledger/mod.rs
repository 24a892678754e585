//! Append-only blockchain of signed model-hash records, sealed by proof of
//! work and queryable per client address.
//!
//! Canonical byte layouts (all integers little-endian):
//!
//! * record signing bytes — address (`u32` length + UTF-8), round `u64`,
//!   model hash (32 bytes), reported accuracy (`f64` bit pattern), data
//!   size `u64`, timestamp `u64`, sequence number `u64`
//! * record bytes — signing bytes followed by the 64-byte signature
//! * block header — index `u64`, previous hash (32), payload hash (32),
//!   difficulty `u32`, miner id (`u32` length + UTF-8), timestamp `u64`,
//!   nonce `u64`
//!
//! The block hash is SHA-256 over the header; the payload hash is SHA-256
//! over the record count (`u32`) followed by each record's bytes. A block
//! satisfies proof of work when its hash has at least `difficulty` leading
//! zero bits.

mod export;

pub use export::{export_chain, import_chain};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::crypto::{Signature, SigningKey, VerifyKey, SIGNATURE_LEN};
use crate::error::{Error, Result};
use crate::fl::ModelParameters;

/// 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn of(bytes: &[u8]) -> Digest {
        let mut hasher = Sha256::new();
        hasher.update(bytes);
        Digest(hasher.finalize().into())
    }

    pub fn to_hex(self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Digest> {
        let bytes = hex::decode(s)
            .map_err(|e| Error::invalid_input(format!("bad digest hex: {e}")))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::invalid_input("digest must be exactly 32 bytes"))?;
        Ok(Digest(arr))
    }

    /// Number of leading zero bits, the proof-of-work measure.
    pub fn leading_zero_bits(&self) -> u32 {
        let mut bits = 0;
        for &b in &self.0 {
            if b == 0 {
                bits += 8;
            } else {
                bits += b.leading_zeros();
                break;
            }
        }
        bits
    }
}

impl std::fmt::Debug for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", hex::encode(self.0))
    }
}

impl std::fmt::Display for Digest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", hex::encode(self.0))
    }
}

/// Opaque client / miner / server identity token.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct Address(pub String);

impl Address {
    pub fn new(s: impl Into<String>) -> Self {
        Address(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// A client's signed claim binding it to a model digest for one round.
#[derive(Clone, PartialEq, Debug)]
pub struct ModelRecord {
    pub client_address: Address,
    pub round: u64,
    pub model_hash: Digest,
    pub reported_accuracy: f64,
    pub data_size: u64,
    pub timestamp: u64,
    pub sequence_number: u64,
    pub signature: Signature,
}

impl ModelRecord {
    /// Builds and signs a record over the canonical signing bytes.
    #[allow(clippy::too_many_arguments)]
    pub fn signed(
        key: &SigningKey,
        client_address: Address,
        round: u64,
        model_hash: Digest,
        reported_accuracy: f64,
        data_size: u64,
        timestamp: u64,
        sequence_number: u64,
    ) -> ModelRecord {
        let mut record = ModelRecord {
            client_address,
            round,
            model_hash,
            reported_accuracy,
            data_size,
            timestamp,
            sequence_number,
            signature: Signature([0u8; SIGNATURE_LEN]),
        };
        record.signature = key.sign(&record.signing_bytes());
        record
    }

    /// Every field preceding the signature, in canonical order.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        push_str(&mut out, self.client_address.as_str());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&self.model_hash.0);
        out.extend_from_slice(&self.reported_accuracy.to_bits().to_le_bytes());
        out.extend_from_slice(&self.data_size.to_le_bytes());
        out.extend_from_slice(&self.timestamp.to_le_bytes());
        out.extend_from_slice(&self.sequence_number.to_le_bytes());
        out
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = self.signing_bytes();
        out.extend_from_slice(&self.signature.0);
        out
    }

    fn from_reader(r: &mut ByteReader<'_>) -> Result<ModelRecord> {
        let client_address = Address::new(r.read_string()?);
        let round = r.read_u64()?;
        let model_hash = Digest(r.read_array::<32>()?);
        let reported_accuracy = f64::from_bits(r.read_u64()?);
        let data_size = r.read_u64()?;
        let timestamp = r.read_u64()?;
        let sequence_number = r.read_u64()?;
        let signature = Signature(r.read_array::<SIGNATURE_LEN>()?);
        Ok(ModelRecord {
            client_address,
            round,
            model_hash,
            reported_accuracy,
            data_size,
            timestamp,
            sequence_number,
            signature,
        })
    }
}

/// One sealed ledger entry.
#[derive(Clone, PartialEq, Debug)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Digest,
    pub payload_hash: Digest,
    pub records: Vec<ModelRecord>,
    pub nonce: u64,
    pub difficulty: u32,
    pub miner_id: Address,
    pub block_timestamp: u64,
}

impl Block {
    fn header_bytes(&self, nonce: u64) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.index.to_le_bytes());
        out.extend_from_slice(&self.prev_hash.0);
        out.extend_from_slice(&self.payload_hash.0);
        out.extend_from_slice(&self.difficulty.to_le_bytes());
        push_str(&mut out, self.miner_id.as_str());
        out.extend_from_slice(&self.block_timestamp.to_le_bytes());
        out.extend_from_slice(&nonce.to_le_bytes());
        out
    }

    /// SHA-256 of the canonical header serialization.
    pub fn hash(&self) -> Digest {
        Digest::of(&self.header_bytes(self.nonce))
    }

    pub fn satisfies_pow(&self) -> bool {
        self.hash().leading_zero_bits() >= self.difficulty
    }

    /// Digest over the contained records.
    pub fn compute_payload_hash(records: &[ModelRecord]) -> Digest {
        Digest::of(&payload_bytes(records))
    }

    /// Full canonical serialization: header fields, then the record list.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = self.header_bytes(self.nonce);
        out.extend_from_slice(&payload_bytes(&self.records));
        out
    }

    /// Inverse of [`Block::canonical_bytes`]. Fails on truncated or
    /// structurally impossible input; a decodable result may still violate
    /// chain invariants, which is [`validate_chain`]'s job to catch.
    pub fn from_canonical_bytes(bytes: &[u8]) -> Result<Block> {
        let mut r = ByteReader::new(bytes);
        let index = r.read_u64()?;
        let prev_hash = Digest(r.read_array::<32>()?);
        let payload_hash = Digest(r.read_array::<32>()?);
        let difficulty = r.read_u32()?;
        let miner_id = Address::new(r.read_string()?);
        let block_timestamp = r.read_u64()?;
        let nonce = r.read_u64()?;
        let count = r.read_u32()? as usize;
        let mut records = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            records.push(ModelRecord::from_reader(&mut r)?);
        }
        r.finish()?;
        Ok(Block {
            index,
            prev_hash,
            payload_hash,
            records,
            nonce,
            difficulty,
            miner_id,
            block_timestamp,
        })
    }
}

fn payload_bytes(records: &[ModelRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.canonical_bytes());
    }
    out
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::invalid_input("truncated block bytes"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn read_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn read_array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("sized slice"))
    }

    fn read_string(&mut self) -> Result<String> {
        let len = self.read_u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::invalid_input("identity token is not UTF-8"))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::invalid_input("trailing bytes after block"));
        }
        Ok(())
    }
}

/// Registered address-to-public-key mapping, fixed at experiment start.
#[derive(Clone, Debug)]
pub struct AuthorizationList {
    keys: BTreeMap<Address, VerifyKey>,
}

impl AuthorizationList {
    pub fn new(entries: impl IntoIterator<Item = (Address, VerifyKey)>) -> Result<Self> {
        let mut keys = BTreeMap::new();
        for (addr, key) in entries {
            if keys.insert(addr.clone(), key).is_some() {
                return Err(Error::invalid_input(format!(
                    "duplicate address in authorization list: {addr}"
                )));
            }
        }
        Ok(AuthorizationList { keys })
    }

    pub fn key_for(&self, addr: &Address) -> Option<&VerifyKey> {
        self.keys.get(addr)
    }

    pub fn contains(&self, addr: &Address) -> bool {
        self.keys.contains_key(addr)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Address, &VerifyKey)> {
        self.keys.iter()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// SHA-256 over the model's canonical serialization (architecture
/// descriptor, then little-endian parameter bit patterns).
pub fn hash_model(params: &ModelParameters) -> Result<Digest> {
    if params.is_empty() {
        return Err(Error::invalid_input("cannot hash an empty parameter set"));
    }
    Ok(Digest::of(&params.canonical_bytes()))
}

/// First violated invariant found while validating a chain.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ChainViolation {
    EmptyChain,
    BadGenesis,
    NonConsecutiveIndex { index: u64 },
    BrokenLink { index: u64 },
    PayloadMismatch { index: u64 },
    PowNotSatisfied { index: u64 },
    UnknownAddress { index: u64, address: Address },
    BadSignature { index: u64, address: Address },
    NonMonotoneSequence { index: u64, address: Address },
}

impl std::fmt::Display for ChainViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChainViolation::EmptyChain => write!(f, "chain is empty"),
            ChainViolation::BadGenesis => write!(f, "genesis block malformed"),
            ChainViolation::NonConsecutiveIndex { index } => {
                write!(f, "block {index}: index not consecutive")
            }
            ChainViolation::BrokenLink { index } => {
                write!(f, "block {index}: prev_hash does not match predecessor")
            }
            ChainViolation::PayloadMismatch { index } => {
                write!(f, "block {index}: payload hash does not cover its records")
            }
            ChainViolation::PowNotSatisfied { index } => {
                write!(f, "block {index}: proof of work not satisfied")
            }
            ChainViolation::UnknownAddress { index, address } => {
                write!(f, "block {index}: address {address} not in authorization list")
            }
            ChainViolation::BadSignature { index, address } => {
                write!(f, "block {index}: bad signature from {address}")
            }
            ChainViolation::NonMonotoneSequence { index, address } => {
                write!(f, "block {index}: sequence number for {address} not increasing")
            }
        }
    }
}

/// Full-chain audit: genesis shape, consecutive indices, hash links,
/// payload hashes, proof of work, record signatures against the
/// authorization list, and strictly increasing per-client sequence numbers.
pub fn validate_chain(
    chain: &[Block],
    auth: &AuthorizationList,
) -> std::result::Result<(), ChainViolation> {
    let Some(genesis) = chain.first() else {
        return Err(ChainViolation::EmptyChain);
    };
    if genesis.index != 0 || genesis.prev_hash != Digest::ZERO {
        return Err(ChainViolation::BadGenesis);
    }
    let mut last_seq: BTreeMap<&Address, u64> = BTreeMap::new();
    let mut prev_hash: Option<Digest> = None;
    for (i, block) in chain.iter().enumerate() {
        if block.index != i as u64 {
            return Err(ChainViolation::NonConsecutiveIndex { index: block.index });
        }
        if let Some(expected) = prev_hash {
            if block.prev_hash != expected {
                return Err(ChainViolation::BrokenLink { index: block.index });
            }
        }
        if Block::compute_payload_hash(&block.records) != block.payload_hash {
            return Err(ChainViolation::PayloadMismatch { index: block.index });
        }
        if !block.satisfies_pow() {
            return Err(ChainViolation::PowNotSatisfied { index: block.index });
        }
        for record in &block.records {
            let Some(key) = auth.key_for(&record.client_address) else {
                return Err(ChainViolation::UnknownAddress {
                    index: block.index,
                    address: record.client_address.clone(),
                });
            };
            if !key.verify(&record.signing_bytes(), &record.signature) {
                return Err(ChainViolation::BadSignature {
                    index: block.index,
                    address: record.client_address.clone(),
                });
            }
            if let Some(&prev_seq) = last_seq.get(&record.client_address) {
                if record.sequence_number <= prev_seq {
                    return Err(ChainViolation::NonMonotoneSequence {
                        index: block.index,
                        address: record.client_address.clone(),
                    });
                }
            }
            last_seq.insert(&record.client_address, record.sequence_number);
        }
        prev_hash = Some(block.hash());
    }
    Ok(())
}

/// `validate_chain` folded to a boolean.
pub fn is_valid_chain(chain: &[Block], auth: &AuthorizationList) -> bool {
    validate_chain(chain, auth).is_ok()
}

fn seal(mut block: Block) -> Result<Block> {
    if block.difficulty > 256 {
        // no 256-bit hash can carry more than 256 leading zeros
        return Err(Error::MiningFailed {
            difficulty: block.difficulty,
        });
    }
    let mut nonce = 0u64;
    loop {
        let digest = Digest::of(&block.header_bytes(nonce));
        if digest.leading_zero_bits() >= block.difficulty {
            block.nonce = nonce;
            return Ok(block);
        }
        nonce = nonce.checked_add(1).ok_or(Error::MiningFailed {
            difficulty: block.difficulty,
        })?;
    }
}

/// Seals a new block on top of `prev` by deterministic nonce search from
/// zero upward, so identical inputs always reproduce the same nonce.
pub fn mine_block(
    records: Vec<ModelRecord>,
    prev: &Block,
    difficulty: u32,
    miner_id: Address,
    block_timestamp: u64,
) -> Result<Block> {
    let payload_hash = Block::compute_payload_hash(&records);
    seal(Block {
        index: prev.index + 1,
        prev_hash: prev.hash(),
        payload_hash,
        records,
        nonce: 0,
        difficulty,
        miner_id,
        block_timestamp,
    })
}

/// Index 0, all-zero previous hash, no records, mined like any other block.
pub fn genesis_block(difficulty: u32, miner_id: Address, block_timestamp: u64) -> Result<Block> {
    seal(Block {
        index: 0,
        prev_hash: Digest::ZERO,
        payload_hash: Block::compute_payload_hash(&[]),
        records: Vec::new(),
        nonce: 0,
        difficulty,
        miner_id,
        block_timestamp,
    })
}

fn records(chain: &[Block]) -> impl Iterator<Item = &ModelRecord> {
    chain.iter().flat_map(|b| b.records.iter())
}

/// The record with the highest sequence number for `address`, if any.
pub fn latest_record_for<'a>(chain: &'a [Block], address: &Address) -> Option<&'a ModelRecord> {
    records(chain)
        .filter(|r| &r.client_address == address)
        .max_by_key(|r| r.sequence_number)
}

/// The client's newest record strictly below `sequence_bound` — its latest
/// *prior* upload when the bound is the sequence number of a submission
/// already mined into the chain.
pub fn latest_record_before<'a>(
    chain: &'a [Block],
    address: &Address,
    sequence_bound: u64,
) -> Option<&'a ModelRecord> {
    records(chain)
        .filter(|r| &r.client_address == address && r.sequence_number < sequence_bound)
        .max_by_key(|r| r.sequence_number)
}

/// The client's on-chain record for a specific round.
pub fn record_for_round<'a>(
    chain: &'a [Block],
    address: &Address,
    round: u64,
) -> Option<&'a ModelRecord> {
    records(chain).find(|r| &r.client_address == address && r.round == round)
}

/// True iff the address is registered and the signature verifies under the
/// registered key.
pub fn verify_identity(record: &ModelRecord, auth: &AuthorizationList) -> bool {
    match auth.key_for(&record.client_address) {
        Some(key) => key.verify(&record.signing_bytes(), &record.signature),
        None => false,
    }
}
