use std::collections::{BTreeMap, BTreeSet};

use rand::RngCore;
use serde::Serialize;

use super::network::{HopOutcome, Network};
use super::{Invoice, SwapError};
use crate::chainlab::{ChainId, Hash256, HashFnId};
use crate::channels::ChannelPhase;
use crate::crp::{
    onion_create, onion_peel, route_payloads, session_key, HopPayload, NodeId, OnionPacket, Peeled, Route,
    TimelockPolicy,
};

/// Absolute expiry height of every hop, sender first. Each hop's delta is
/// added to the current height of that hop's own chain.
pub fn stack_expiries(
    route: &Route,
    heights: &BTreeMap<ChainId, u64>,
    policy: &TimelockPolicy,
) -> Result<Vec<u64>, SwapError> {
    if route.hops.is_empty() {
        return Err(SwapError::EmptyRoute);
    }
    let n = route.hops.len();
    route
        .hops
        .iter()
        .enumerate()
        .map(|(i, hop)| {
            let h = heights.get(&hop.chain).ok_or(SwapError::UnknownChain(hop.chain))?;
            Ok(h + policy.expiry_delta(i, n))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AttemptStatus {
    Pending,
    Settled {
        #[serde(with = "hex::serde")]
        secret: [u8; 32],
    },
    Refunded,
    PartialFailure {
        hop_index: usize,
    },
}

/// One HTLC of an attempt.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HopHtlc {
    pub channel: usize,
    pub offerer: NodeId,
    pub receiver: NodeId,
    pub htlc_id: u64,
    pub amount: u64,
    pub expiry: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PaymentAttempt {
    pub route: Route,
    #[serde(with = "hex::serde")]
    pub invoice_hash: Hash256,
    pub hash_fn: HashFnId,
    pub expiries: Vec<u64>,
    /// HTLCs added so far, in hop order.
    pub htlcs: Vec<HopHtlc>,
    pub status: AttemptStatus,
}

impl PaymentAttempt {
    pub fn htlc_ids(&self) -> Vec<u64> {
        self.htlcs.iter().map(|h| h.htlc_id).collect()
    }
}

/// Payload a node reads from the packet it received, checked against the
/// HTLC it is being offered.
pub fn read_packet(
    net: &Network,
    node: NodeId,
    packet: &OnionPacket,
    payment_hash: &Hash256,
) -> Result<(HopPayload, Option<OnionPacket>), SwapError> {
    let key = &net.participant(node).ok_or(SwapError::UnknownNode(node))?.node;
    match onion_peel(packet, key, payment_hash)? {
        Peeled::Forward { payload, next } => Ok((HopPayload::decode(&payload)?, Some(next))),
        Peeled::Final { payload } => Ok((HopPayload::decode(&payload)?, None)),
    }
}

/// Builds the onion for `route`: one payload per receiving node.
pub fn build_onion(
    route: &Route,
    expiries: &[u64],
    payment_hash: &Hash256,
    rng: &mut impl RngCore,
) -> Result<OnionPacket, SwapError> {
    let payloads: Vec<Vec<u8>> = route_payloads(route, expiries).iter().map(HopPayload::encode).collect();
    let nodes: Vec<NodeId> = route.hops.iter().map(|h| h.node).collect();
    Ok(onion_create(&nodes, &session_key(rng), &payloads, payment_hash)?)
}

/// Adds the route's HTLCs hop by hop, each forwarding node acting on what
/// its onion layer tells it. `refuses(i, node)` lets a forwarding node
/// decline to add hop `i`; any failure fails the HTLCs already added and
/// returns the refunded attempt inside the error.
pub fn dispatch_payment(
    net: &mut Network,
    invoice: &Invoice,
    route: &Route,
    policy: &TimelockPolicy,
    rng: &mut impl RngCore,
    refuses: &dyn Fn(usize, NodeId) -> bool,
) -> Result<PaymentAttempt, SwapError> {
    policy.validate()?;
    if route.recipient() != invoice.recipient
        || route.amount_out() != invoice.amount
        || route.hops.last().map(|h| h.asset) != Some(invoice.asset)
        || !route.hash_fns.contains(&invoice.hash_fn)
    {
        return Err(SwapError::RouteMismatch);
    }
    let expiries = stack_expiries(route, &net.heights(), policy)?;
    let onion = build_onion(route, &expiries, &invoice.payment_hash, rng)?;
    net.reserve_hash(invoice.payment_hash)?;

    let nodes = route.nodes();
    let mut attempt = PaymentAttempt {
        route: route.clone(),
        invoice_hash: invoice.payment_hash,
        hash_fn: invoice.hash_fn,
        expiries: expiries.clone(),
        htlcs: Vec::new(),
        status: AttemptStatus::Pending,
    };
    let mut packet = onion;
    for (i, hop) in route.hops.iter().enumerate() {
        let (from, to) = (nodes[i], nodes[i + 1]);
        let outcome = add_hop(net, &mut attempt, i, from, to, hop.chain, hop.amount, expiries[i], refuses);
        if let Err(reason) = outcome {
            attempt.status = AttemptStatus::PartialFailure { hop_index: i };
            fail_back(net, &mut attempt);
            return Err(SwapError::HopAddFailed { hop_index: i, reason, attempt: Box::new(attempt) });
        }
        let (payload, next) = match read_packet(net, to, &packet, &invoice.payment_hash) {
            Ok(p) => p,
            Err(e) => {
                attempt.status = AttemptStatus::PartialFailure { hop_index: i };
                fail_back(net, &mut attempt);
                return Err(SwapError::HopAddFailed {
                    hop_index: i + 1,
                    reason: e.to_string(),
                    attempt: Box::new(attempt),
                });
            }
        };
        let consistent = match (&next, route.hops.get(i + 1)) {
            (Some(_), Some(n)) => {
                payload.next == Some(n.node)
                    && payload.amount == n.amount
                    && payload.chain == n.chain
                    && payload.outgoing_expiry == expiries[i + 1]
            }
            (None, None) => {
                payload.next.is_none() && payload.amount == invoice.amount && payload.outgoing_expiry == expiries[i]
            }
            _ => false,
        };
        if !consistent {
            attempt.status = AttemptStatus::PartialFailure { hop_index: i };
            fail_back(net, &mut attempt);
            return Err(SwapError::HopAddFailed {
                hop_index: i + 1,
                reason: "onion payload disagrees with the offered HTLC".into(),
                attempt: Box::new(attempt),
            });
        }
        if let Some(next) = next {
            packet = next;
        }
    }
    Ok(attempt)
}

#[allow(clippy::too_many_arguments)]
fn add_hop(
    net: &mut Network,
    attempt: &mut PaymentAttempt,
    index: usize,
    from: NodeId,
    to: NodeId,
    chain: ChainId,
    amount: u64,
    expiry: u64,
    refuses: &dyn Fn(usize, NodeId) -> bool,
) -> Result<(), String> {
    if index > 0 && refuses(index, from) {
        return Err(format!("node {from} refused to forward"));
    }
    let channel = net.channel_between(chain, from, to).ok_or_else(|| "no channel for hop".to_string())?;
    let htlc_id = net
        .offer_htlc(channel, from, amount, attempt.hash_fn, attempt.invoice_hash, expiry)
        .map_err(|e| e.to_string())?;
    attempt.htlcs.push(HopHtlc { channel, offerer: from, receiver: to, htlc_id, amount, expiry });
    Ok(())
}

/// Every receiving side fails its HTLC cooperatively, newest first.
fn fail_back(net: &mut Network, attempt: &mut PaymentAttempt) {
    for h in attempt.htlcs.iter().rev() {
        // The HTLCs were just added on open channels, so failing succeeds.
        let _ = net.fail_htlc(h.channel, h.htlc_id);
    }
    attempt.status = AttemptStatus::Refunded;
}

/// Fulfils hop `index` with `secret`: its receiving node claims off-chain.
pub fn settle_hop(net: &mut Network, attempt: &PaymentAttempt, index: usize, secret: &[u8]) -> Result<(), SwapError> {
    let h = attempt.htlcs.get(index).ok_or(SwapError::NotPending)?;
    net.fulfill_htlc(h.channel, h.htlc_id, secret)
}

/// The recipient fulfils its HTLC, then each node towards the sender
/// fulfils its incoming HTLC with the secret it just learned.
pub fn settle_payment(net: &mut Network, attempt: &mut PaymentAttempt, secret: &[u8; 32]) -> Result<(), SwapError> {
    if attempt.hash_fn.digest(secret) != attempt.invoice_hash {
        return Err(SwapError::BadPreimage);
    }
    if attempt.status != AttemptStatus::Pending || attempt.htlcs.len() != attempt.route.hops.len() {
        return Err(SwapError::NotPending);
    }
    if attempt.htlcs.iter().any(|h| net.htlc_outcome(h.channel, h.htlc_id) != HopOutcome::Pending) {
        return Err(SwapError::NotPending);
    }
    for index in (0..attempt.htlcs.len()).rev() {
        settle_hop(net, attempt, index, secret)?;
    }
    attempt.status = AttemptStatus::Settled { secret: *secret };
    Ok(())
}

/// Unwinds a pending attempt whose secret never appeared. Receivers not in
/// `stalling` fail their HTLC off-chain; the HTLCs of stalling receivers
/// are refunded on chain once expired. Chains are mined as needed.
pub fn refund_sweep(
    net: &mut Network,
    attempt: &mut PaymentAttempt,
    stalling: &BTreeSet<NodeId>,
) -> Result<(), SwapError> {
    if attempt.status != AttemptStatus::Pending {
        return Err(SwapError::NotPending);
    }
    let heights = net.heights();
    let expired = attempt.htlcs.iter().any(|h| {
        let chain = net.slot(h.channel).channel.chain();
        heights[&chain] >= h.expiry
    });
    if !expired {
        return Err(SwapError::NotExpired);
    }
    let mut onchain = Vec::new();
    for h in attempt.htlcs.iter().rev() {
        if net.htlc_outcome(h.channel, h.htlc_id) != HopOutcome::Pending {
            continue;
        }
        let open = !net.slot(h.channel).channel.phase().is_closing();
        if open && !stalling.contains(&h.receiver) {
            net.fail_htlc(h.channel, h.htlc_id)?;
        } else {
            if open {
                net.force_close(h.channel, h.offerer, None)?;
            }
            onchain.push(h.clone());
        }
    }
    // Give the on-chain refunds time: mine every chain involved and let the
    // offering sides claim until each HTLC is resolved.
    let chains: BTreeSet<ChainId> = onchain.iter().map(|h| net.slot(h.channel).channel.chain()).collect();
    for _ in 0..10_000 {
        let done = onchain.iter().all(|h| {
            net.htlc_outcome(h.channel, h.htlc_id) != HopOutcome::Pending
                && net.slot(h.channel).channel.phase() == ChannelPhase::Settled
        });
        if done {
            break;
        }
        for h in &onchain {
            net.watch_chain(h.offerer, true);
        }
        for &c in &chains {
            net.mine(c, 1);
        }
    }
    if onchain.iter().any(|h| net.htlc_outcome(h.channel, h.htlc_id) == HopOutcome::Pending) {
        return Err(SwapError::Unresolved);
    }
    attempt.status = AttemptStatus::Refunded;
    Ok(())
}
