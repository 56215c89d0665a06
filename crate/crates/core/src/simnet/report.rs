use std::fmt::Write as _;

use serde::Serialize;

use super::scenario::{FaultKind, Role};
use crate::chainlab::{hash_digest, HashFnId};
use crate::channels::ChannelEvent;
use crate::swap::HopOutcome;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Report {
    pub seed: u64,
    /// Ticks simulated, including the final sweep.
    pub ticks: u64,
    pub payments: Vec<PaymentRecord>,
    pub balances: Vec<ActorBalances>,
    pub onchain_tx_counts: Vec<ChainTxCount>,
    pub gossip: GossipStats,
    pub events: Vec<EventRecord>,
    pub violations: Vec<Violation>,
    /// SHA-256 over the JSON encoding of every other field.
    pub digest: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentStatus {
    Settled,
    Refunded,
    /// Only seen if the run was cut off; always reported as a violation.
    Unresolved,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PaymentRecord {
    pub index: usize,
    pub from: String,
    pub to: String,
    pub amount: u64,
    pub asset: u32,
    pub status: PaymentStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    /// Actors along the route, sender first; empty if no route was tried.
    pub route: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amount_in: Option<u64>,
    pub hops: Vec<HopRecord>,
    pub started: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HopRecord {
    pub chain: u32,
    pub amount: u64,
    pub expiry: u64,
    pub outcome: HopOutcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ActorBalances {
    pub actor: String,
    pub role: Role,
    /// Not the target of any fault.
    pub honest: bool,
    pub assets: Vec<AssetBalance>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AssetBalance {
    pub asset: u32,
    pub initial: u64,
    pub onchain: u64,
    pub channel: u64,
    pub total: u64,
    /// On-chain fees of confirmed transactions this actor built.
    pub fees_paid: u64,
    /// Claimed payment legs received minus those sent, plus incoming legs
    /// owed to this actor as a forwarder whose outgoing leg was claimed.
    pub transferred: i128,
}

impl AssetBalance {
    /// What an actor that lost nothing ends up with at least.
    pub fn entitled(&self) -> i128 {
        self.initial as i128 - self.fees_paid as i128 + self.transferred
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChainTxCount {
    pub chain: u32,
    /// Confirmed transactions after genesis.
    pub confirmed: usize,
    pub funding: usize,
    /// Cooperative closes and commitments.
    pub closes: usize,
    /// Claims, sweeps and justice transactions.
    pub claims: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GossipStats {
    /// Rounds until the first round in which nobody learnt anything.
    pub rounds_to_converge: Option<u64>,
    pub rounds: u64,
    pub adverts: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EventRecord {
    pub tick: u64,
    #[serde(flatten)]
    pub event: SimEvent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SimEvent {
    FaultActivated { target: String, kind: FaultKind },
    Dispatched { payment: usize, amount_in: u64 },
    HopAdded { payment: usize, hop: usize, htlc_id: u64 },
    Settled { payment: usize },
    Refunded { payment: usize },
    BreachDetected { channel: usize, by: String },
    Channel { channel: usize, record: ChannelEvent },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub tick: u64,
    pub kind: String,
    pub detail: String,
}

impl Report {
    pub(crate) fn seal(mut self) -> Report {
        self.digest.clear();
        let bytes = serde_json::to_vec(&self).expect("report serializes");
        self.digest = hex::encode(hash_digest(HashFnId::Sha256, &bytes));
        self
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let settled = self.payments.iter().filter(|p| p.status == PaymentStatus::Settled).count();
        let _ = writeln!(s, "seed {}  ticks {}  digest {}", self.seed, self.ticks, &self.digest[..16]);
        let _ = writeln!(s, "payments: {} settled, {} not settled", settled, self.payments.len() - settled);
        for p in &self.payments {
            let status = match p.status {
                PaymentStatus::Settled => "settled",
                PaymentStatus::Refunded => "refunded",
                PaymentStatus::Unresolved => "UNRESOLVED",
            };
            let route = if p.route.is_empty() { "-".to_string() } else { p.route.join(" -> ") };
            let _ = write!(
                s,
                "  #{} {} -> {} {} of asset {}: {status} via {route}",
                p.index, p.from, p.to, p.amount, p.asset
            );
            if let Some(r) = &p.reason {
                let _ = write!(s, " ({r})");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "balances:");
        for a in &self.balances {
            let tag = if a.honest { "" } else { " [faulty]" };
            let _ = write!(s, "  {}{tag}:", a.actor);
            for b in &a.assets {
                let _ = write!(
                    s,
                    " asset {} = {} (chain {} + channels {}, fees {})",
                    b.asset, b.total, b.onchain, b.channel, b.fees_paid
                );
            }
            s.push('\n');
        }
        let _ = writeln!(s, "on-chain transactions:");
        for c in &self.onchain_tx_counts {
            let _ = writeln!(
                s,
                "  chain {}: {} confirmed ({} funding, {} closes, {} claims)",
                c.chain, c.confirmed, c.funding, c.closes, c.claims
            );
        }
        match self.gossip.rounds_to_converge {
            Some(r) => {
                let _ = writeln!(s, "gossip converged after {r} rounds ({} adverts)", self.gossip.adverts);
            }
            None => {
                let _ = writeln!(s, "gossip did not converge");
            }
        }
        if self.violations.is_empty() {
            let _ = writeln!(s, "invariants: all held");
        } else {
            let _ = writeln!(s, "invariant violations: {}", self.violations.len());
            for v in &self.violations {
                let _ = writeln!(s, "  tick {} {}: {}", v.tick, v.kind, v.detail);
            }
        }
        s
    }
}
