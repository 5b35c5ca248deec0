//! Hashing, digital signatures, Merkle trees and Bloom filters.
//!
//! The hash is SHA-256 and signatures are Ed25519. The protocol does not
//! depend on these particular choices, but fixing them (together with the
//! canonical encoding) makes every digest reproducible across
//! implementations.

pub mod bloom;
pub mod merkle;

use std::collections::BTreeMap;
use std::fmt;

use ed25519_dalek::{Signer, Verifier};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::encoding::{self, Encode};
use crate::types::Address;

/// 32-byte hash output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest(")?;
        for b in &self.0[..6] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

impl Encode for Digest {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_bytes(out, &self.0);
    }

    fn encoded_len(&self) -> usize {
        32
    }
}

/// SHA-256.
pub fn hash(data: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(data);
    Digest(h.finalize().into())
}

/// SHA-256 over the concatenation of two byte strings.
pub fn hash_pair(a: &[u8], b: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update(a);
    h.update(b);
    Digest(h.finalize().into())
}

/// Hash of the canonical encoding of a value.
pub fn hash_encoded<T: Encode>(v: &T) -> Digest {
    hash(&v.encode())
}

/// Fixed-width Ed25519 signature.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

impl Signature {
    pub const ZERO: Signature = Signature([0; 64]);
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature(..)")
    }
}

impl Encode for Signature {
    fn write(&self, out: &mut Vec<u8>) {
        encoding::put_bytes(out, &self.0);
    }

    fn encoded_len(&self) -> usize {
        64
    }
}

/// 32-byte Ed25519 public key.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct PublicKey(pub [u8; 32]);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("malformed public key")]
    MalformedKey,
}

/// Signing and verifying key pair. The node's address is the hash of the
/// public key.
#[derive(Clone)]
pub struct KeyPair {
    signing: ed25519_dalek::SigningKey,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        KeyPair {
            signing: ed25519_dalek::SigningKey::from_bytes(&seed),
        }
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn address(&self) -> Address {
        address_of(&self.public())
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.signing.sign(msg).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({})", self.address())
    }
}

pub fn address_of(pk: &PublicKey) -> Address {
    Address(hash(&pk.0).0)
}

pub fn verify(pk: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&pk.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    vk.verify(msg, &sig).is_ok()
}

/// Address -> public key directory, seeded from the genesis configuration.
#[derive(Clone, Debug, Default)]
pub struct KeyDirectory {
    keys: BTreeMap<Address, PublicKey>,
}

impl KeyDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, pk: PublicKey) -> Address {
        let addr = address_of(&pk);
        self.keys.insert(addr, pk);
        addr
    }

    pub fn lookup(&self, addr: &Address) -> Option<&PublicKey> {
        self.keys.get(addr)
    }

    /// Verify a signature attributed to `addr`. Unknown addresses fail.
    pub fn verify(&self, addr: &Address, msg: &[u8], sig: &Signature) -> bool {
        match self.lookup(addr) {
            Some(pk) => verify(pk, msg, sig),
            None => false,
        }
    }
}
