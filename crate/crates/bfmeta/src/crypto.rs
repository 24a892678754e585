//! Signing primitives for model records.
//!
//! Records are signed with Ed25519. The rest of the crate only sees opaque
//! byte wrappers plus `sign`/`verify`, so the scheme can be swapped in one
//! place. Simulation keys are derived deterministically from the experiment
//! seed so identical seeds reproduce identical chains.

use ed25519_dalek::{Signer, Verifier};
use sha2::{Digest as _, Sha256};

/// Byte length of an Ed25519 signature.
pub const SIGNATURE_LEN: usize = 64;

/// Byte length of an Ed25519 public key.
pub const PUBLIC_KEY_LEN: usize = 32;

/// Private signing half of a client key pair.
#[derive(Clone)]
pub struct SigningKey(ed25519_dalek::SigningKey);

/// Public verification half, as registered in the authorization list.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct VerifyKey([u8; PUBLIC_KEY_LEN]);

/// Detached signature over a record's canonical bytes.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);

impl SigningKey {
    /// Derives a key pair from a 32-byte seed.
    pub fn from_seed(seed: [u8; 32]) -> Self {
        SigningKey(ed25519_dalek::SigningKey::from_bytes(&seed))
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.0.sign(message).to_bytes())
    }

    pub fn verify_key(&self) -> VerifyKey {
        VerifyKey(self.0.verifying_key().to_bytes())
    }
}

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // Never print private key material.
        write!(f, "SigningKey(..)")
    }
}

impl VerifyKey {
    pub fn from_bytes(bytes: [u8; PUBLIC_KEY_LEN]) -> Self {
        VerifyKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; PUBLIC_KEY_LEN] {
        &self.0
    }

    /// Checks `signature` over `message`. Malformed key or signature bytes
    /// simply fail verification.
    pub fn verify(&self, message: &[u8], signature: &Signature) -> bool {
        let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
        key.verify(message, &sig).is_ok()
    }
}

/// Derives a labelled 32-byte seed from the master experiment seed.
///
/// Every consumer of randomness (key generation, data synthesis, per-round
/// training, latency draws) uses its own label, so streams never alias.
pub fn derive_seed(master: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.finalize().into()
}

/// Same derivation, folded to a `u64` for RNG seeding.
pub fn derive_seed_u64(master: u64, label: &str) -> u64 {
    let bytes = derive_seed(master, label);
    u64::from_le_bytes(bytes[..8].try_into().expect("slice of 8 bytes"))
}
