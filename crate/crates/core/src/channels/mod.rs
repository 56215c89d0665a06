//! Bidirectional payment channels on top of [`crate::chainlab`].
//!
//! A channel is funded by a 2-of-2 multisig output. Every off-chain update
//! produces a new pair of asymmetric commitment transactions; the previous
//! pair is revoked by revealing its invalidation keys. Broadcasting a revoked
//! commitment lets the counterparty sweep everything the cheater could have
//! claimed from it.

mod channel;
mod onchain;
mod state;

use serde::Serialize;
use thiserror::Error;

use crate::chainlab::{ChainError, HashFnId, Outpoint, Rejection};

pub use channel::{open_channel, Channel, ChannelConfig, CloseKind, CloseRecord, Update};
pub use onchain::{ClaimKind, ClaimTx, HtlcResolution, OutputRole};
pub use state::{ChannelId, ChannelPhase, CommitmentState, Direction, Htlc, Party};

/// Structured lifecycle records for the simulation report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ChannelEvent {
    Open { funding_amount: u64 },
    Update { commitment_number: u64 },
    HtlcAdded { htlc_id: u64, amount: u64 },
    Fulfill { htlc_id: u64 },
    Fail { htlc_id: u64 },
    Close { cooperative: bool, by: Option<Party>, commitment_number: Option<u64> },
    Breach { by: Party, commitment_number: u64 },
    Punish { by: Party, amount: u64 },
    Settled,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("insufficient funds: need {needed}, have {available}")]
    InsufficientFunds { needed: u64, available: u64 },
    #[error("funding conflict on {0}")]
    FundingConflict(Outpoint),
    #[error("insufficient balance: need {needed}, have {available}")]
    InsufficientBalance { needed: u64, available: u64 },
    #[error("unsupported hash function {0}")]
    UnsupportedHashFunction(HashFnId),
    #[error("operation not allowed in phase {0}")]
    StalePhase(ChannelPhase),
    #[error("channel has pending htlcs")]
    PendingHtlcs,
    #[error("unknown htlc {0}")]
    UnknownHtlc(u64),
    #[error("preimage does not match payment hash")]
    BadPreimage,
    #[error("expiry {expiry} not above current height {height}")]
    ExpiryTooSoon { expiry: u64, height: u64 },
    #[error("htlc amount {amount} below dust limit {minimum}")]
    BelowDust { amount: u64, minimum: u64 },
    #[error("previous update awaits revocation")]
    UpdateInProgress,
    #[error("no update awaits revocation")]
    NoPendingUpdate,
    #[error("no commitment number {0}")]
    NoSuchCommitment(u64),
    #[error("commitment {0} is not revoked")]
    NotRevoked(u64),
    #[error("no commitment of the counterparty was broadcast")]
    NoBreach,
    #[error("breaching commitment is not confirmed yet")]
    CommitmentUnconfirmed,
    #[error("punishment window expired")]
    WindowExpired,
    #[error("nothing left to claim")]
    NothingToClaim,
    #[error("both channel parties use the same key")]
    InvalidParties,
    #[error("channel funding must be positive")]
    ZeroFunding,
    #[error("amount overflow")]
    Overflow,
    #[error("transaction rejected: {0}")]
    Rejected(Rejection),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

impl From<Rejection> for ChannelError {
    fn from(r: Rejection) -> Self {
        ChannelError::Rejected(r)
    }
}
