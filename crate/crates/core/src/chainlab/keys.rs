//! Simulated signing keys.
//!
//! Signatures are HMAC-SHA256 tags over a 32-byte digest. Only the holder of
//! the secret can produce a tag; verification goes through a [`KeyRegistry`]
//! that plays the role of the public-key infrastructure.

use std::collections::HashMap;
use std::fmt;

use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::hash::{sha256, Hash256};

type HmacSha256 = Hmac<Sha256>;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PubKey(pub [u8; 32]);

impl fmt::Debug for PubKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PubKey({})", hex::encode(&self.0[..6]))
    }
}

impl fmt::Display for PubKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub signer: PubKey,
    pub tag: [u8; 32],
}

#[derive(Clone)]
pub struct KeyPair {
    secret: [u8; 32],
    public: PubKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn from_secret(secret: [u8; 32]) -> Self {
        let mut buf = Vec::with_capacity(40);
        buf.extend_from_slice(b"comit-pk");
        buf.extend_from_slice(&secret);
        KeyPair { secret, public: PubKey(sha256(&buf)) }
    }

    /// Derives a key pair from arbitrary seed material.
    pub fn from_seed(seed: &[u8]) -> Self {
        Self::from_secret(sha256(seed))
    }

    pub fn public(&self) -> PubKey {
        self.public
    }

    /// Derives secret material bound to this key and `label`.
    pub fn derive(&self, label: &[u8]) -> [u8; 32] {
        let mut m = HmacSha256::new_from_slice(&self.secret).expect("hmac accepts any key length");
        m.update(b"derive");
        m.update(label);
        m.finalize().into_bytes().into()
    }

    pub fn sign(&self, digest: &Hash256) -> Signature {
        Signature { signer: self.public, tag: mac(&self.secret, digest) }
    }
}

fn mac(secret: &[u8; 32], digest: &Hash256) -> [u8; 32] {
    let mut m = HmacSha256::new_from_slice(secret).expect("hmac accepts any key length");
    m.update(digest);
    m.finalize().into_bytes().into()
}

/// Verifier for simulated signatures.
#[derive(Clone, Default)]
pub struct KeyRegistry {
    secrets: HashMap<PubKey, [u8; 32]>,
}

impl fmt::Debug for KeyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyRegistry").field("keys", &self.secrets.len()).finish()
    }
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, key: &KeyPair) {
        self.secrets.insert(key.public, key.secret);
    }

    pub fn contains(&self, key: &PubKey) -> bool {
        self.secrets.contains_key(key)
    }

    pub fn verify(&self, sig: &Signature, digest: &Hash256) -> bool {
        match self.secrets.get(&sig.signer) {
            Some(secret) => mac(secret, digest) == sig.tag,
            None => false,
        }
    }
}
