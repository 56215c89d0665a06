use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chainlab::{Hash256, HashFnId, Outpoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    A,
    B,
}

impl Party {
    pub fn other(self) -> Party {
        match self {
            Party::A => Party::B,
            Party::B => Party::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Party::A => 0,
            Party::B => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    AToB,
    BToA,
}

impl Direction {
    pub fn from_offerer(offerer: Party) -> Direction {
        match offerer {
            Party::A => Direction::AToB,
            Party::B => Direction::BToA,
        }
    }

    pub fn offerer(self) -> Party {
        match self {
            Direction::AToB => Party::A,
            Direction::BToA => Party::B,
        }
    }

    pub fn receiver(self) -> Party {
        self.offerer().other()
    }
}

/// A channel is identified by its funding output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChannelId(pub Outpoint);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Htlc {
    pub id: u64,
    pub direction: Direction,
    pub amount: u64,
    pub hash_fn: HashFnId,
    pub payment_hash: Hash256,
    pub expiry_height: u64,
}

impl Htlc {
    pub fn matches(&self, preimage: &[u8]) -> bool {
        self.hash_fn.digest(preimage) == self.payment_hash
    }
}

/// One version of the off-chain state. Both parties hold a commitment
/// transaction for every version.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitmentState {
    pub commitment_number: u64,
    pub balance_a: u64,
    pub balance_b: u64,
    pub pending_htlcs: Vec<Htlc>,
    /// Hash of A's invalidation key for this commitment; guards A's copy.
    pub revocation_hash_a: Hash256,
    pub revocation_hash_b: Hash256,
}

impl CommitmentState {
    pub fn balance(&self, party: Party) -> u64 {
        match party {
            Party::A => self.balance_a,
            Party::B => self.balance_b,
        }
    }

    pub(crate) fn balance_mut(&mut self, party: Party) -> &mut u64 {
        match party {
            Party::A => &mut self.balance_a,
            Party::B => &mut self.balance_b,
        }
    }

    pub fn revocation_hash(&self, holder: Party) -> Hash256 {
        match holder {
            Party::A => self.revocation_hash_a,
            Party::B => self.revocation_hash_b,
        }
    }

    pub fn htlc(&self, id: u64) -> Option<&Htlc> {
        self.pending_htlcs.iter().find(|h| h.id == id)
    }

    pub fn htlc_total(&self) -> u128 {
        self.pending_htlcs.iter().map(|h| h.amount as u128).sum()
    }

    /// balance_a + balance_b + Σ htlc amounts.
    pub fn total(&self) -> u128 {
        self.balance_a as u128 + self.balance_b as u128 + self.htlc_total()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum ChannelPhase {
    Opening,
    Open,
    CooperativeClosing,
    UnilateralClosed { by: Party, at_height: u64 },
    Breached { by: Party },
    Settled,
}

impl ChannelPhase {
    pub fn is_closing(&self) -> bool {
        !matches!(self, ChannelPhase::Opening | ChannelPhase::Open)
    }
}

impl fmt::Display for ChannelPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelPhase::Opening => f.write_str("opening"),
            ChannelPhase::Open => f.write_str("open"),
            ChannelPhase::CooperativeClosing => f.write_str("cooperative-closing"),
            ChannelPhase::UnilateralClosed { by, at_height } => write!(f, "unilateral-closed({by:?}@{at_height})"),
            ChannelPhase::Breached { by } => write!(f, "breached({by:?})"),
            ChannelPhase::Settled => f.write_str("settled"),
        }
    }
}
