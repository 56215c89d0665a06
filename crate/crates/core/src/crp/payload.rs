//! Per-hop payload carried in each onion slot.
//!
//! Layout (little-endian), zero-padded to [`PAYLOAD_LEN`]:
//! `kind u8 (0 = forward, 1 = final) | next_node (33, zero if final) | chain u32 | asset u32
//!  | amount u64 | outgoing_expiry u64 | quote echo: asset_in u32, asset_out u32, rate_num u64,
//!  rate_den u64, base_fee u64, fee_ppm u32 (all zero when absent)`

use serde::{Deserialize, Serialize};

use super::graph::Route;
use super::node::NodeId;
use super::onion::{OnionError, PAYLOAD_LEN};
use super::quote::RateQuote;
use crate::chainlab::{AssetId, ChainId, Encoder};

pub const ENCODED_LEN: usize = 1 + 33 + 4 + 4 + 8 + 8 + 36;

/// Instructions for one node on the route. A forwarding node learns the next
/// node, the outgoing channel's chain and asset, what to send and with what
/// expiry, and the quote the sender priced against. The final node learns
/// what it should receive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopPayload {
    pub next: Option<NodeId>,
    pub chain: ChainId,
    pub asset: AssetId,
    pub amount: u64,
    /// Absolute expiry height of the outgoing HTLC (final: of the incoming one).
    pub outgoing_expiry: u64,
    pub quote: Option<RateQuote>,
}

impl HopPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.u8(u8::from(self.next.is_none()))
            .fixed(&self.next.unwrap_or(NodeId::ZERO).0)
            .u32(self.chain.0)
            .u32(self.asset.0)
            .u64(self.amount)
            .u64(self.outgoing_expiry);
        let q = self.quote.unwrap_or(RateQuote {
            asset_in: AssetId(0),
            asset_out: AssetId(0),
            rate_num: 0,
            rate_den: 0,
            base_fee: 0,
            fee_ppm: 0,
        });
        enc.u32(q.asset_in.0).u32(q.asset_out.0).u64(q.rate_num).u64(q.rate_den).u64(q.base_fee).u32(q.fee_ppm);
        let mut out = enc.finish();
        debug_assert_eq!(out.len(), ENCODED_LEN);
        out.resize(PAYLOAD_LEN, 0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, OnionError> {
        if bytes.len() < ENCODED_LEN {
            return Err(OnionError::BadPayload);
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let u64_at = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        let next = match bytes[0] {
            0 => Some(NodeId(bytes[1..34].try_into().expect("33 bytes"))),
            1 => None,
            _ => return Err(OnionError::BadPayload),
        };
        let quote = RateQuote {
            asset_in: AssetId(u32_at(58)),
            asset_out: AssetId(u32_at(62)),
            rate_num: u64_at(66),
            rate_den: u64_at(74),
            base_fee: u64_at(82),
            fee_ppm: u32_at(90),
        };
        Ok(HopPayload {
            next,
            chain: ChainId(u32_at(34)),
            asset: AssetId(u32_at(38)),
            amount: u64_at(42),
            outgoing_expiry: u64_at(50),
            quote: (quote.rate_num != 0).then_some(quote),
        })
    }
}

/// Payloads for every node after the sender, given absolute per-hop expiries.
pub fn route_payloads(route: &Route, expiries: &[u64]) -> Vec<HopPayload> {
    let n = route.hops.len();
    (0..n)
        .map(|i| {
            let hop = &route.hops[i];
            if i + 1 < n {
                let next = &route.hops[i + 1];
                HopPayload {
                    next: Some(next.node),
                    chain: next.chain,
                    asset: next.asset,
                    amount: next.amount,
                    outgoing_expiry: expiries[i + 1],
                    quote: hop.quote,
                }
            } else {
                HopPayload {
                    next: None,
                    chain: hop.chain,
                    asset: hop.asset,
                    amount: hop.amount,
                    outgoing_expiry: expiries[i],
                    quote: None,
                }
            }
        })
        .collect()
}
