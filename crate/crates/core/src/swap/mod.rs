//! Cross-chain payments over chains of HTLCs: invoices, stacked expiries,
//! hop-by-hop dispatch with onion packets, settlement and refunds.

mod invoice;
mod network;
mod payment;

use thiserror::Error;

pub use crate::crp::TimelockPolicy;
pub use invoice::{make_invoice, Invoice};
pub use network::{ChannelSlot, HopOutcome, Network, Participant};
pub use payment::{
    build_onion, dispatch_payment, read_packet, refund_sweep, settle_hop, settle_payment, stack_expiries,
    AttemptStatus, HopHtlc, PaymentAttempt,
};

use crate::chainlab::ChainId;
use crate::channels::ChannelError;
use crate::crp::{NodeId, OnionError, RoutingError};

#[derive(Debug, Error)]
pub enum SwapError {
    #[error("route is empty")]
    EmptyRoute,
    #[error("unknown chain {0}")]
    UnknownChain(ChainId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a party to the channel")]
    NotAParty(NodeId),
    #[error("a channel already exists between these nodes on this chain")]
    DuplicateChannel,
    #[error("payment hash already used")]
    HashReused,
    #[error("route does not deliver the invoice")]
    RouteMismatch,
    #[error("adding hop {hop_index} failed: {reason}")]
    HopAddFailed { hop_index: usize, reason: String, attempt: Box<PaymentAttempt> },
    #[error("preimage does not match the payment hash")]
    BadPreimage,
    #[error("attempt is not pending")]
    NotPending,
    #[error("no htlc of the attempt has expired")]
    NotExpired,
    #[error("on-chain refund did not resolve")]
    Unresolved,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Onion(#[from] OnionError),
}
