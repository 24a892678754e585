//! Chain export/import as JSON so external tools can audit a ledger.
//!
//! Layout: an `authorization` array of `{address, public_key_hex}` entries
//! followed by a `blocks` array, one object per block, with hex-encoded
//! digests and base64-encoded signatures. The per-block `hash` field is
//! informational (recomputed on validation, ignored on import).

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::crypto::{Signature, VerifyKey, PUBLIC_KEY_LEN, SIGNATURE_LEN};
use crate::error::{Error, Result};
use crate::ledger::{Address, AuthorizationList, Block, Digest, ModelRecord};

#[derive(Serialize, Deserialize)]
struct ChainFile {
    authorization: Vec<AuthEntry>,
    blocks: Vec<BlockJson>,
}

#[derive(Serialize, Deserialize)]
struct AuthEntry {
    address: String,
    public_key_hex: String,
}

#[derive(Serialize, Deserialize)]
struct BlockJson {
    index: u64,
    prev_hash: String,
    payload_hash: String,
    nonce: u64,
    difficulty: u32,
    miner_id: String,
    timestamp: u64,
    hash: String,
    records: Vec<RecordJson>,
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    client_address: String,
    round: u64,
    model_hash: String,
    reported_accuracy: f64,
    data_size: u64,
    timestamp: u64,
    sequence_number: u64,
    signature_b64: String,
}

/// Serializes a chain together with its authorization list.
pub fn export_chain(chain: &[Block], auth: &AuthorizationList) -> String {
    let file = ChainFile {
        authorization: auth
            .iter()
            .map(|(addr, key)| AuthEntry {
                address: addr.as_str().to_string(),
                public_key_hex: hex::encode(key.as_bytes()),
            })
            .collect(),
        blocks: chain
            .iter()
            .map(|b| BlockJson {
                index: b.index,
                prev_hash: b.prev_hash.to_hex(),
                payload_hash: b.payload_hash.to_hex(),
                nonce: b.nonce,
                difficulty: b.difficulty,
                miner_id: b.miner_id.as_str().to_string(),
                timestamp: b.block_timestamp,
                hash: b.hash().to_hex(),
                records: b
                    .records
                    .iter()
                    .map(|r| RecordJson {
                        client_address: r.client_address.as_str().to_string(),
                        round: r.round,
                        model_hash: r.model_hash.to_hex(),
                        reported_accuracy: r.reported_accuracy,
                        data_size: r.data_size,
                        timestamp: r.timestamp,
                        sequence_number: r.sequence_number,
                        signature_b64: BASE64.encode(r.signature.0),
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("chain file always serializes")
}

/// Parses an exported chain file. Purely syntactic; run [`validate_chain`]
/// on the result for a semantic audit.
///
/// [`validate_chain`]: crate::ledger::validate_chain
pub fn import_chain(json: &str) -> Result<(Vec<Block>, AuthorizationList)> {
    let file: ChainFile =
        serde_json::from_str(json).map_err(|e| Error::ChainFormat(e.to_string()))?;
    let mut entries = Vec::with_capacity(file.authorization.len());
    for e in &file.authorization {
        let bytes = hex::decode(&e.public_key_hex)
            .map_err(|err| Error::ChainFormat(format!("public key hex: {err}")))?;
        let arr: [u8; PUBLIC_KEY_LEN] = bytes
            .try_into()
            .map_err(|_| Error::ChainFormat("public key must be 32 bytes".into()))?;
        entries.push((Address::new(e.address.clone()), VerifyKey::from_bytes(arr)));
    }
    let auth = AuthorizationList::new(entries)
        .map_err(|e| Error::ChainFormat(e.to_string()))?;

    let mut blocks = Vec::with_capacity(file.blocks.len());
    for b in &file.blocks {
        let mut records = Vec::with_capacity(b.records.len());
        for r in &b.records {
            let sig = BASE64
                .decode(&r.signature_b64)
                .map_err(|e| Error::ChainFormat(format!("signature base64: {e}")))?;
            let sig: [u8; SIGNATURE_LEN] = sig
                .try_into()
                .map_err(|_| Error::ChainFormat("signature must be 64 bytes".into()))?;
            records.push(ModelRecord {
                client_address: Address::new(r.client_address.clone()),
                round: r.round,
                model_hash: digest_from_hex(&r.model_hash)?,
                reported_accuracy: r.reported_accuracy,
                data_size: r.data_size,
                timestamp: r.timestamp,
                sequence_number: r.sequence_number,
                signature: Signature(sig),
            });
        }
        blocks.push(Block {
            index: b.index,
            prev_hash: digest_from_hex(&b.prev_hash)?,
            payload_hash: digest_from_hex(&b.payload_hash)?,
            records,
            nonce: b.nonce,
            difficulty: b.difficulty,
            miner_id: Address::new(b.miner_id.clone()),
            block_timestamp: b.timestamp,
        });
    }
    Ok((blocks, auth))
}

fn digest_from_hex(s: &str) -> Result<Digest> {
    Digest::from_hex(s).map_err(|e| Error::ChainFormat(e.to_string()))
}
