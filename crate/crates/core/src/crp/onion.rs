//! Fixed-size layered onion packets.
//!
//! Packet layout: `version (1) | ephemeral_key (33) | routing_info (20 × 160) | hmac (32)`,
//! 3266 bytes regardless of route length. Each 160-byte slot holds a
//! 128-byte hop payload followed by the 32-byte HMAC for the next hop.
//!
//! Per hop `i`: `ss_i = SHA256(compressed(e_i · P_i))`;
//! `rho/mu = HMAC-SHA256(key = "rho"/"mu", ss_i)`; the routing info is
//! encrypted with the ChaCha20 stream (zero nonce) under `rho`, integrity is
//! `HMAC-SHA256(mu, routing_info || associated_data)`; the ephemeral key is
//! blinded with `b_i = SHA256(E_i || ss_i)`. Filler bytes keep the length
//! constant as slots are consumed; the unused tail starts as pseudo-random
//! bytes from a pad key derived from the session key.

use chacha20::cipher::{KeyIvInit, StreamCipher};
use chacha20::ChaCha20;
use hmac::{Hmac, Mac};
use secp256k1::ecdh::SharedSecret;
use secp256k1::{PublicKey, Scalar, SecretKey, SECP256K1};
use sha2::Sha256;
use thiserror::Error;

use super::node::{NodeId, NodeKey};
use crate::chainlab::{hash_digest, HashFnId};

pub const VERSION: u8 = 0;
pub const MAX_HOPS: usize = 20;
pub const PAYLOAD_LEN: usize = 128;
pub const HMAC_LEN: usize = 32;
pub const SLOT_LEN: usize = PAYLOAD_LEN + HMAC_LEN;
pub const ROUTING_INFO_LEN: usize = MAX_HOPS * SLOT_LEN;
pub const PACKET_LEN: usize = 1 + 33 + ROUTING_INFO_LEN + HMAC_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OnionError {
    #[error("route must have at least one hop")]
    EmptyRoute,
    #[error("route of {0} hops exceeds the maximum of 20")]
    RouteTooLong(usize),
    #[error("payload of {0} bytes does not fit a slot")]
    PayloadOverflow(usize),
    #[error("hmac check failed")]
    HmacFailure,
    #[error("invalid ephemeral or node key")]
    InvalidKey,
    #[error("unknown packet version {0}")]
    UnknownVersion(u8),
    #[error("packet must be {PACKET_LEN} bytes, got {0}")]
    BadLength(usize),
    #[error("malformed hop payload")]
    BadPayload,
}

#[derive(Clone, PartialEq, Eq)]
pub struct OnionPacket {
    pub version: u8,
    pub ephemeral_key: [u8; 33],
    pub routing_info: Vec<u8>,
    pub hmac: [u8; 32],
}

impl std::fmt::Debug for OnionPacket {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnionPacket")
            .field("version", &self.version)
            .field("ephemeral_key", &hex::encode(&self.ephemeral_key[..6]))
            .field("hmac", &hex::encode(&self.hmac[..6]))
            .finish_non_exhaustive()
    }
}

impl OnionPacket {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(PACKET_LEN);
        out.push(self.version);
        out.extend_from_slice(&self.ephemeral_key);
        out.extend_from_slice(&self.routing_info);
        out.extend_from_slice(&self.hmac);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, OnionError> {
        if bytes.len() != PACKET_LEN {
            return Err(OnionError::BadLength(bytes.len()));
        }
        Ok(OnionPacket {
            version: bytes[0],
            ephemeral_key: bytes[1..34].try_into().expect("33 bytes"),
            routing_info: bytes[34..34 + ROUTING_INFO_LEN].to_vec(),
            hmac: bytes[34 + ROUTING_INFO_LEN..].try_into().expect("32 bytes"),
        })
    }
}

/// Result of processing a packet at one node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Peeled {
    Forward { payload: [u8; PAYLOAD_LEN], next: OnionPacket },
    Final { payload: [u8; PAYLOAD_LEN] },
}

impl Peeled {
    pub fn payload(&self) -> &[u8; PAYLOAD_LEN] {
        match self {
            Peeled::Forward { payload, .. } | Peeled::Final { payload } => payload,
        }
    }
}

fn hmac_sha256(key: &[u8], parts: &[&[u8]]) -> [u8; 32] {
    let mut m = Hmac::<Sha256>::new_from_slice(key).expect("any key length");
    for p in parts {
        m.update(p);
    }
    m.finalize().into_bytes().into()
}

fn stream(key: &[u8; 32], len: usize) -> Vec<u8> {
    let mut buf = vec![0u8; len];
    ChaCha20::new(key.into(), &[0u8; 12].into()).apply_keystream(&mut buf);
    buf
}

fn xor_into(dst: &mut [u8], src: &[u8]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

fn blinding(ephemeral: &PublicKey, shared: &[u8; 32]) -> Result<Scalar, OnionError> {
    let mut data = ephemeral.serialize().to_vec();
    data.extend_from_slice(shared);
    Scalar::from_be_bytes(hash_digest(HashFnId::Sha256, &data)).map_err(|_| OnionError::InvalidKey)
}

/// Builds the packet for `hops` (every node after the sender, in order),
/// with `payloads[i]` readable only by `hops[i]`.
pub fn onion_create(
    hops: &[NodeId],
    session_key: &[u8; 32],
    payloads: &[Vec<u8>],
    associated_data: &[u8],
) -> Result<OnionPacket, OnionError> {
    let n = hops.len();
    if n == 0 {
        return Err(OnionError::EmptyRoute);
    }
    if n > MAX_HOPS {
        return Err(OnionError::RouteTooLong(n));
    }
    assert_eq!(payloads.len(), n, "one payload per hop");
    if let Some(p) = payloads.iter().find(|p| p.len() > PAYLOAD_LEN) {
        return Err(OnionError::PayloadOverflow(p.len()));
    }

    let session = SecretKey::from_slice(session_key).map_err(|_| OnionError::InvalidKey)?;
    let first_ephemeral = PublicKey::from_secret_key_global(&session);
    let mut ephemeral_secret = session;
    let mut secrets = Vec::with_capacity(n);
    for hop in hops {
        let node = hop.public_key().ok_or(OnionError::InvalidKey)?;
        let ephemeral = PublicKey::from_secret_key_global(&ephemeral_secret);
        let shared = SharedSecret::new(&node, &ephemeral_secret).secret_bytes();
        let b = blinding(&ephemeral, &shared)?;
        ephemeral_secret = ephemeral_secret.mul_tweak(&b).map_err(|_| OnionError::InvalidKey)?;
        secrets.push(shared);
    }
    let rho: Vec<[u8; 32]> = secrets.iter().map(|s| hmac_sha256(b"rho", &[s])).collect();
    let mu: Vec<[u8; 32]> = secrets.iter().map(|s| hmac_sha256(b"mu", &[s])).collect();

    let mut filler = vec![0u8; (n - 1) * SLOT_LEN];
    for (i, key) in rho.iter().enumerate().take(n - 1) {
        let s = stream(key, ROUTING_INFO_LEN + SLOT_LEN);
        xor_into(&mut filler[..(i + 1) * SLOT_LEN], &s[ROUTING_INFO_LEN - i * SLOT_LEN..]);
    }

    let pad_key = hmac_sha256(b"pad", &[session_key]);
    let mut info = stream(&pad_key, ROUTING_INFO_LEN);
    let mut next_hmac = [0u8; HMAC_LEN];
    for i in (0..n).rev() {
        info.copy_within(0..ROUTING_INFO_LEN - SLOT_LEN, SLOT_LEN);
        info[..PAYLOAD_LEN].fill(0);
        info[..payloads[i].len()].copy_from_slice(&payloads[i]);
        info[PAYLOAD_LEN..SLOT_LEN].copy_from_slice(&next_hmac);
        xor_into(&mut info, &stream(&rho[i], ROUTING_INFO_LEN));
        if i == n - 1 {
            info[ROUTING_INFO_LEN - filler.len()..].copy_from_slice(&filler);
        }
        next_hmac = hmac_sha256(&mu[i], &[&info, associated_data]);
    }
    Ok(OnionPacket {
        version: VERSION,
        ephemeral_key: first_ephemeral.serialize(),
        routing_info: info,
        hmac: next_hmac,
    })
}

/// Processes `packet` with this node's key.
pub fn onion_peel(packet: &OnionPacket, node: &NodeKey, associated_data: &[u8]) -> Result<Peeled, OnionError> {
    if packet.version != VERSION {
        return Err(OnionError::UnknownVersion(packet.version));
    }
    if packet.routing_info.len() != ROUTING_INFO_LEN {
        return Err(OnionError::BadLength(packet.routing_info.len() + 1 + 33 + HMAC_LEN));
    }
    let ephemeral = PublicKey::from_slice(&packet.ephemeral_key).map_err(|_| OnionError::InvalidKey)?;
    let shared = SharedSecret::new(&ephemeral, node.secret()).secret_bytes();
    let mu = hmac_sha256(b"mu", &[&shared]);
    if hmac_sha256(&mu, &[&packet.routing_info, associated_data]) != packet.hmac {
        return Err(OnionError::HmacFailure);
    }
    let rho = hmac_sha256(b"rho", &[&shared]);
    let mut buf = packet.routing_info.clone();
    buf.resize(ROUTING_INFO_LEN + SLOT_LEN, 0);
    xor_into(&mut buf, &stream(&rho, ROUTING_INFO_LEN + SLOT_LEN));

    let payload: [u8; PAYLOAD_LEN] = buf[..PAYLOAD_LEN].try_into().expect("slot payload");
    let hmac: [u8; HMAC_LEN] = buf[PAYLOAD_LEN..SLOT_LEN].try_into().expect("slot hmac");
    if hmac == [0u8; HMAC_LEN] {
        return Ok(Peeled::Final { payload });
    }
    let b = blinding(&ephemeral, &shared)?;
    let next_ephemeral = ephemeral.mul_tweak(SECP256K1, &b).map_err(|_| OnionError::InvalidKey)?;
    let next = OnionPacket {
        version: VERSION,
        ephemeral_key: next_ephemeral.serialize(),
        routing_info: buf[SLOT_LEN..].to_vec(),
        hmac,
    };
    Ok(Peeled::Forward { payload, next })
}

/// A valid session key drawn from `rng`.
pub fn session_key(rng: &mut impl rand::RngCore) -> [u8; 32] {
    loop {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        if SecretKey::from_slice(&bytes).is_ok() {
            return bytes;
        }
    }
}
