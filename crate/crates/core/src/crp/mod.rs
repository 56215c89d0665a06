//! Routing: gossip of signed LP adverts, multi-asset source routing over the
//! advertised graph, integer quote math, and constant-size onion packets.

mod gossip;
mod graph;
mod node;
mod onion;
mod payload;
mod quote;

use thiserror::Error;

pub use gossip::{gossip_round, ChannelAnnouncement, GossipState, LpAdvert};
pub use graph::{find_route, ChainInfo, EdgeKey, Graph, HopSpec, Route, TimelockPolicy, MAX_ROUTE_HOPS};
pub use node::{NodeId, NodeKey};
pub use onion::{
    onion_create, onion_peel, session_key, OnionError, OnionPacket, Peeled, HMAC_LEN, MAX_HOPS, PACKET_LEN,
    PAYLOAD_LEN, ROUTING_INFO_LEN, SLOT_LEN, VERSION,
};
pub use payload::{route_payloads, HopPayload};
pub use quote::{apply_quotes, compute_hop_amounts, RateQuote};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RoutingError {
    #[error("no admissible route")]
    NoRoute,
    #[error("amount overflow")]
    Overflow,
    #[error("invalid quote: {0}")]
    InvalidQuote(&'static str),
    #[error("timelock deltas must be >= 1")]
    InvalidPolicy,
    #[error("malformed advert: {0}")]
    Malformed(&'static str),
}
