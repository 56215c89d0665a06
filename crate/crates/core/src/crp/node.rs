use std::fmt;
use std::str::FromStr;

use secp256k1::{PublicKey, SecretKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::chainlab::hash_digest;
use crate::chainlab::HashFnId;

/// A node's identity: its compressed secp256k1 public key. The same key is
/// used for onion key agreement and for signing adverts.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub [u8; 33]);

impl NodeId {
    pub const ZERO: NodeId = NodeId([0; 33]);

    pub fn public_key(&self) -> Option<PublicKey> {
        PublicKey::from_slice(&self.0).ok()
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", hex::encode(&self.0[..6]))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl FromStr for NodeId {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 33];
        hex::decode_to_slice(s, &mut out)?;
        Ok(NodeId(out))
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone)]
pub struct NodeKey {
    secret: SecretKey,
    id: NodeId,
}

impl fmt::Debug for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NodeKey").field("id", &self.id).finish_non_exhaustive()
    }
}

impl NodeKey {
    pub fn from_secret(secret: SecretKey) -> Self {
        let public = PublicKey::from_secret_key_global(&secret);
        NodeKey { secret, id: NodeId(public.serialize()) }
    }

    /// Deterministic key from seed material (re-hashes in the negligible
    /// case the digest is not a valid scalar).
    pub fn from_seed(seed: &[u8]) -> Self {
        let mut digest = hash_digest(HashFnId::Sha256, seed);
        loop {
            if let Ok(secret) = SecretKey::from_slice(&digest) {
                return Self::from_secret(secret);
            }
            digest = hash_digest(HashFnId::Sha256, &digest);
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn secret(&self) -> &SecretKey {
        &self.secret
    }
}
