//! Signed LP adverts and their epidemic propagation.
//!
//! Advert wire layout (little-endian):
//! `node (33) | timestamp u64 | n_channels u32 | { chain u32, peer (33), capacity u64 }*
//!  | n_quotes u32 | { asset_in u32, asset_out u32, rate_num u64, rate_den u64, base_fee u64, fee_ppm u32 }*
//!  | signature (64, compact ECDSA over SHA256("comit-advert" || everything before it))`

use std::collections::BTreeMap;

use secp256k1::ecdsa::Signature;
use secp256k1::{Message, SECP256K1};
use serde::{Deserialize, Serialize};

use super::node::{NodeId, NodeKey};
use super::quote::RateQuote;
use super::RoutingError;
use crate::chainlab::{hash_digest, AssetId, ChainId, Encoder, HashFnId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelAnnouncement {
    pub chain: ChainId,
    pub peer: NodeId,
    /// Advisory; route finding filters on it but forwarding may still fail.
    pub capacity: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpAdvert {
    pub node: NodeId,
    pub channels: Vec<ChannelAnnouncement>,
    pub quotes: Vec<RateQuote>,
    /// Per-origin sequence number; higher replaces lower.
    pub timestamp: u64,
    #[serde(with = "sig_hex")]
    pub signature: [u8; 64],
}

mod sig_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(sig: &[u8; 64], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(sig))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 64], D::Error> {
        let text = String::deserialize(d)?;
        let mut out = [0u8; 64];
        hex::decode_to_slice(&text, &mut out).map_err(serde::de::Error::custom)?;
        Ok(out)
    }
}

impl LpAdvert {
    pub fn signed(key: &NodeKey, channels: Vec<ChannelAnnouncement>, quotes: Vec<RateQuote>, timestamp: u64) -> Self {
        let mut advert = LpAdvert { node: key.id(), channels, quotes, timestamp, signature: [0; 64] };
        let msg = advert.message();
        advert.signature = SECP256K1.sign_ecdsa(&msg, key.secret()).serialize_compact();
        advert
    }

    fn body(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.fixed(&self.node.0).u64(self.timestamp).len(self.channels.len());
        for ch in &self.channels {
            enc.u32(ch.chain.0).fixed(&ch.peer.0).u64(ch.capacity);
        }
        enc.len(self.quotes.len());
        for q in &self.quotes {
            enc.u32(q.asset_in.0).u32(q.asset_out.0).u64(q.rate_num).u64(q.rate_den).u64(q.base_fee).u32(q.fee_ppm);
        }
        enc.finish()
    }

    fn message(&self) -> Message {
        let mut data = b"comit-advert".to_vec();
        data.extend_from_slice(&self.body());
        Message::from_digest(hash_digest(HashFnId::Sha256, &data))
    }

    pub fn verify(&self) -> bool {
        let Some(pk) = self.node.public_key() else { return false };
        let Ok(sig) = Signature::from_compact(&self.signature) else { return false };
        SECP256K1.verify_ecdsa(&self.message(), &sig, &pk).is_ok()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.body();
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RoutingError> {
        let mut r = Reader { bytes, pos: 0 };
        let node = NodeId(r.array()?);
        let timestamp = r.u64()?;
        let n = r.u32()? as usize;
        let mut channels = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            channels.push(ChannelAnnouncement {
                chain: ChainId(r.u32()?),
                peer: NodeId(r.array()?),
                capacity: r.u64()?,
            });
        }
        let n = r.u32()? as usize;
        let mut quotes = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            quotes.push(RateQuote {
                asset_in: AssetId(r.u32()?),
                asset_out: AssetId(r.u32()?),
                rate_num: r.u64()?,
                rate_den: r.u64()?,
                base_fee: r.u64()?,
                fee_ppm: r.u32()?,
            });
        }
        let signature = r.array()?;
        if r.pos != bytes.len() {
            return Err(RoutingError::Malformed("trailing bytes"));
        }
        Ok(LpAdvert { node, channels, quotes, timestamp, signature })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], RoutingError> {
        let end =
            self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(RoutingError::Malformed("truncated"))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], RoutingError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32, RoutingError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, RoutingError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
}

/// One node's view of the advert set.
#[derive(Clone, Debug, Default)]
pub struct GossipState {
    known: BTreeMap<NodeId, LpAdvert>,
    /// What each peer is known to have, per origin.
    peer_has: BTreeMap<NodeId, BTreeMap<NodeId, u64>>,
    invalid_dropped: u64,
}

impl GossipState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn adverts(&self) -> impl Iterator<Item = &LpAdvert> {
        self.known.values()
    }

    pub fn get(&self, origin: &NodeId) -> Option<&LpAdvert> {
        self.known.get(origin)
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    pub fn invalid_dropped(&self) -> u64 {
        self.invalid_dropped
    }

    /// `(origin, timestamp)` pairs: two nodes with equal summaries know the
    /// same adverts.
    pub fn summary(&self) -> Vec<(NodeId, u64)> {
        self.known.iter().map(|(k, a)| (*k, a.timestamp)).collect()
    }

    fn accept(&mut self, advert: &LpAdvert) -> bool {
        if !advert.verify() {
            self.invalid_dropped += 1;
            return false;
        }
        match self.known.get(&advert.node) {
            Some(current) if current.timestamp >= advert.timestamp => false,
            _ => {
                self.known.insert(advert.node, advert.clone());
                true
            }
        }
    }

    /// Inserts a locally originated (or otherwise obtained) advert.
    pub fn announce(&mut self, advert: LpAdvert) -> bool {
        self.accept(&advert)
    }

    /// Merges adverts received from `peer`, keeping the freshest per origin.
    /// Returns the adverts that were new to this node, i.e. the delta to
    /// re-broadcast. Adverts with invalid signatures are dropped and counted.
    pub fn gossip_step(&mut self, peer: NodeId, adverts: &[LpAdvert]) -> Vec<LpAdvert> {
        let mut delta = Vec::new();
        for advert in adverts {
            if self.accept(advert) {
                delta.push(advert.clone());
            }
            if advert.verify() {
                let seen = self.peer_has.entry(peer).or_default().entry(advert.node).or_insert(0);
                *seen = (*seen).max(advert.timestamp);
            }
        }
        delta
    }

    /// Adverts `peer` is not known to have yet; marks them as sent.
    pub fn outgoing(&mut self, peer: NodeId) -> Vec<LpAdvert> {
        let has = self.peer_has.entry(peer).or_default();
        let mut out = Vec::new();
        for (origin, advert) in &self.known {
            if has.get(origin).is_none_or(|ts| *ts < advert.timestamp) {
                has.insert(*origin, advert.timestamp);
                out.push(advert.clone());
            }
        }
        out
    }
}

/// One synchronous gossip round over undirected `links` between nodes
/// `ids[i]`. Muted nodes neither send nor receive. Returns true if any node
/// learnt something.
pub fn gossip_round(
    states: &mut [GossipState],
    ids: &[NodeId],
    links: &[(usize, usize)],
    muted: &dyn Fn(usize) -> bool,
) -> bool {
    let mut mail: Vec<(usize, usize, Vec<LpAdvert>)> = Vec::new();
    for &(x, y) in links {
        for (from, to) in [(x, y), (y, x)] {
            if muted(from) || muted(to) {
                continue;
            }
            let msgs = states[from].outgoing(ids[to]);
            if !msgs.is_empty() {
                mail.push((from, to, msgs));
            }
        }
    }
    let mut changed = false;
    for (from, to, msgs) in mail {
        changed |= !states[to].gossip_step(ids[from], &msgs).is_empty();
    }
    changed
}

#[cfg(test)]
mod tests {
    use super::*;

    fn advert(key: &NodeKey, ts: u64) -> LpAdvert {
        let peer = NodeKey::from_seed(b"peer").id();
        LpAdvert::signed(
            key,
            vec![ChannelAnnouncement { chain: ChainId(1), peer, capacity: 5000 }],
            vec![RateQuote { base_fee: 3, fee_ppm: 100, ..RateQuote::identity(AssetId(1)) }],
            ts,
        )
    }

    #[test]
    fn freshest_advert_wins() {
        let lp = NodeKey::from_seed(b"lp");
        let peer = NodeKey::from_seed(b"peer").id();
        let mut state = GossipState::new();
        assert_eq!(state.gossip_step(peer, &[advert(&lp, 1)]).len(), 1);
        assert_eq!(state.gossip_step(peer, &[advert(&lp, 2)]).len(), 1);
        assert_eq!(state.get(&lp.id()).unwrap().timestamp, 2);
        assert!(state.gossip_step(peer, &[advert(&lp, 1)]).is_empty());
        assert_eq!(state.get(&lp.id()).unwrap().timestamp, 2);
    }

    #[test]
    fn bad_signatures_are_counted_and_dropped() {
        let lp = NodeKey::from_seed(b"lp");
        let mut forged = advert(&lp, 5);
        forged.quotes[0].base_fee = 0;
        let mut state = GossipState::new();
        assert!(state.gossip_step(NodeId::ZERO, &[forged]).is_empty());
        assert_eq!(state.invalid_dropped(), 1);
        assert!(state.is_empty());
    }

    #[test]
    fn wire_round_trip() {
        let a = advert(&NodeKey::from_seed(b"lp"), 9);
        let bytes = a.to_bytes();
        assert_eq!(bytes.len(), 33 + 8 + 4 + (4 + 33 + 8) + 4 + 36 + 64);
        let back = LpAdvert::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);
        assert!(back.verify());
        assert!(LpAdvert::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn ring_of_five_converges_within_diameter() {
        let keys: Vec<NodeKey> = (0..5).map(|i| NodeKey::from_seed(format!("ring-{i}").as_bytes())).collect();
        let ids: Vec<NodeId> = keys.iter().map(|k| k.id()).collect();
        let links: Vec<(usize, usize)> = (0..5).map(|i| (i, (i + 1) % 5)).collect();
        let mut states = vec![GossipState::new(); 5];
        states[0].announce(advert(&keys[0], 1));
        let mut rounds = 0;
        while gossip_round(&mut states, &ids, &links, &|_| false) {
            rounds += 1;
        }
        assert!(rounds <= 2, "ring of 5 has diameter 2, took {rounds}");
        assert!(states.iter().all(|s| s.summary() == states[0].summary()));
    }
}
