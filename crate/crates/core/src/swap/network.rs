//! Ledgers, channels and participants of a payment network, with the
//! bookkeeping needed to reason about who paid which on-chain fee.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::SwapError;
use crate::chainlab::{AssetId, ChainId, Hash256, HashFnId, KeyPair, Ledger, Transaction, Txid};
use crate::channels::{
    open_channel, Channel, ChannelConfig, ChannelError, ChannelEvent, ChannelPhase, CloseKind, Direction,
    HtlcResolution, Party,
};
use crate::crp::{ChainInfo, EdgeKey, Graph, NodeId, NodeKey};

/// A node: its routing identity, its on-chain wallet key and every payment
/// preimage it has learned so far.
#[derive(Clone, Debug)]
pub struct Participant {
    pub node: NodeKey,
    pub wallet: KeyPair,
    preimages: BTreeMap<Hash256, Vec<u8>>,
}

impl Participant {
    pub fn knows(&self, hash_fn: HashFnId, hash: &Hash256) -> Option<&[u8]> {
        self.preimages.get(hash).filter(|p| hash_fn.digest(p) == *hash).map(|p| p.as_slice())
    }

    pub fn learn(&mut self, hash_fn: HashFnId, preimage: &[u8]) {
        self.preimages.insert(hash_fn.digest(preimage), preimage.to_vec());
    }
}

/// A channel and the nodes behind parties A and B.
#[derive(Clone, Debug)]
pub struct ChannelSlot {
    pub channel: Channel,
    pub ends: [NodeId; 2],
}

impl ChannelSlot {
    pub fn party_of(&self, node: NodeId) -> Option<Party> {
        if self.ends[0] == node {
            Some(Party::A)
        } else if self.ends[1] == node {
            Some(Party::B)
        } else {
            None
        }
    }

    pub fn node(&self, party: Party) -> NodeId {
        self.ends[party.index()]
    }
}

/// Where one HTLC of a payment ended up.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HopOutcome {
    Pending,
    Fulfilled,
    Failed,
    /// Swept through a revoked commitment by the receiving (`true`) or the
    /// offering (`false`) side.
    Revoked {
        by_receiver: bool,
    },
}

/// Transaction submitted on behalf of a node, with the fee it leaves.
#[derive(Clone, Copy, Debug)]
struct Authored {
    chain: ChainId,
    txid: Txid,
    payer: NodeId,
    fee: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Network {
    ledgers: BTreeMap<ChainId, Ledger>,
    slots: Vec<ChannelSlot>,
    by_edge: BTreeMap<EdgeKey, usize>,
    participants: BTreeMap<NodeId, Participant>,
    resolved: BTreeMap<(usize, u64), HopOutcome>,
    authored: Vec<Authored>,
    used_hashes: BTreeSet<Hash256>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_ledger(&mut self, mut ledger: Ledger) {
        for p in self.participants.values() {
            ledger.register_key(&p.wallet);
        }
        self.ledgers.insert(ledger.params().chain_id, ledger);
    }

    pub fn add_participant(&mut self, node: NodeKey, wallet: KeyPair) -> NodeId {
        for ledger in self.ledgers.values_mut() {
            ledger.register_key(&wallet);
        }
        let id = node.id();
        self.participants.insert(id, Participant { node, wallet, preimages: BTreeMap::new() });
        id
    }

    pub fn ledger(&self, chain: ChainId) -> Option<&Ledger> {
        self.ledgers.get(&chain)
    }

    pub fn ledger_mut(&mut self, chain: ChainId) -> Option<&mut Ledger> {
        self.ledgers.get_mut(&chain)
    }

    pub fn ledgers(&self) -> impl Iterator<Item = &Ledger> {
        self.ledgers.values()
    }

    pub fn heights(&self) -> BTreeMap<ChainId, u64> {
        self.ledgers.iter().map(|(c, l)| (*c, l.height())).collect()
    }

    pub fn participant(&self, node: NodeId) -> Option<&Participant> {
        self.participants.get(&node)
    }

    pub fn participant_mut(&mut self, node: NodeId) -> Option<&mut Participant> {
        self.participants.get_mut(&node)
    }

    pub fn participants(&self) -> impl Iterator<Item = &Participant> {
        self.participants.values()
    }

    pub fn slots(&self) -> &[ChannelSlot] {
        &self.slots
    }

    pub fn slot(&self, index: usize) -> &ChannelSlot {
        &self.slots[index]
    }

    pub fn channel_between(&self, chain: ChainId, x: NodeId, y: NodeId) -> Option<usize> {
        self.by_edge.get(&EdgeKey::new(chain, x, y)).copied()
    }

    /// Channels `node` is a party to, with its side.
    pub fn channels_of(&self, node: NodeId) -> Vec<(usize, Party)> {
        self.slots.iter().enumerate().filter_map(|(i, s)| s.party_of(node).map(|p| (i, p))).collect()
    }

    /// Records that `hash` is about to be used; a second use is refused.
    pub fn reserve_hash(&mut self, hash: Hash256) -> Result<(), SwapError> {
        if !self.used_hashes.insert(hash) {
            return Err(SwapError::HashReused);
        }
        Ok(())
    }

    /// Routing view of the channels still open, with each side's funding as
    /// the capacity hint.
    pub fn graph(&self) -> Graph {
        let chains = self
            .ledgers
            .values()
            .map(|l| {
                (l.params().chain_id, ChainInfo { asset: l.params().asset_id, hash_fns: l.params().hash_fns.clone() })
            })
            .collect();
        let mut graph = Graph::new(chains);
        for slot in &self.slots {
            if slot.channel.phase() == ChannelPhase::Open {
                graph.add_channel(slot.channel.chain(), slot.ends[0], slot.ends[1], slot.channel.funding_amount());
            }
        }
        graph
    }

    pub fn open_channel(
        &mut self,
        chain: ChainId,
        x: NodeId,
        y: NodeId,
        fund_x: u64,
        fund_y: u64,
        config: ChannelConfig,
    ) -> Result<usize, SwapError> {
        if self.channel_between(chain, x, y).is_some() {
            return Err(SwapError::DuplicateChannel);
        }
        let wx = self.participants.get(&x).ok_or(SwapError::UnknownNode(x))?.wallet.clone();
        let wy = self.participants.get(&y).ok_or(SwapError::UnknownNode(y))?.wallet.clone();
        let ledger = self.ledgers.get_mut(&chain).ok_or(SwapError::UnknownChain(chain))?;
        let fee = ledger.params().tx_fee;
        let channel = open_channel(ledger, &wx, &wy, fund_x, fund_y, config)?;
        // The opener pays the funding fee and the close reserve.
        let payer = if fund_x > 0 { x } else { y };
        let txid = channel.funding_outpoint().txid;
        self.authored.push(Authored { chain, txid, payer, fee: 2 * fee });
        self.by_edge.insert(EdgeKey::new(chain, x, y), self.slots.len());
        self.slots.push(ChannelSlot { channel, ends: [x, y] });
        Ok(self.slots.len() - 1)
    }

    /// `from` offers an HTLC to its counterparty; returns the HTLC id.
    pub fn offer_htlc(
        &mut self,
        index: usize,
        from: NodeId,
        amount: u64,
        hash_fn: HashFnId,
        payment_hash: Hash256,
        expiry: u64,
    ) -> Result<u64, SwapError> {
        let slot = &mut self.slots[index];
        let party = slot.party_of(from).ok_or(SwapError::NotAParty(from))?;
        let height = self.ledgers[&slot.channel.chain()].height();
        let id =
            slot.channel.add_htlc(Direction::from_offerer(party), amount, hash_fn, payment_hash, expiry, height)?;
        Ok(id)
    }

    /// Off-chain fulfilment; the offering side learns the preimage.
    pub fn fulfill_htlc(&mut self, index: usize, htlc_id: u64, preimage: &[u8]) -> Result<(), SwapError> {
        let slot = &mut self.slots[index];
        let htlc = slot.channel.htlc(htlc_id).ok_or(ChannelError::UnknownHtlc(htlc_id))?.clone();
        slot.channel.fulfill_htlc(htlc_id, preimage)?;
        let offerer = slot.node(htlc.direction.offerer());
        let receiver = slot.node(htlc.direction.receiver());
        self.resolved.insert((index, htlc_id), HopOutcome::Fulfilled);
        for node in [offerer, receiver] {
            if let Some(p) = self.participants.get_mut(&node) {
                p.learn(htlc.hash_fn, preimage);
            }
        }
        Ok(())
    }

    pub fn fail_htlc(&mut self, index: usize, htlc_id: u64) -> Result<(), SwapError> {
        self.slots[index].channel.fail_htlc(htlc_id)?;
        self.resolved.insert((index, htlc_id), HopOutcome::Failed);
        Ok(())
    }

    pub fn cooperative_close(&mut self, index: usize) -> Result<Txid, SwapError> {
        let slot = &mut self.slots[index];
        let chain = slot.channel.chain();
        let ledger = self.ledgers.get_mut(&chain).ok_or(SwapError::UnknownChain(chain))?;
        // The close reserve, already charged to the opener, pays the fee.
        Ok(slot.channel.cooperative_close(ledger)?.txid())
    }

    /// Broadcasts `by`'s copy of commitment `number` (the latest if `None`).
    pub fn force_close(&mut self, index: usize, by: NodeId, number: Option<u64>) -> Result<Txid, SwapError> {
        let slot = &mut self.slots[index];
        let party = slot.party_of(by).ok_or(SwapError::NotAParty(by))?;
        let chain = slot.channel.chain();
        let number = number.unwrap_or(slot.channel.latest_number());
        let ledger = self.ledgers.get_mut(&chain).ok_or(SwapError::UnknownChain(chain))?;
        let reserve = slot.channel.close_reserve();
        let tx = slot.channel.unilateral_close(ledger, party, number)?;
        // Beyond the reserve, a commitment only burns the holder's trimmed
        // to_local.
        let fee = tx_fee(ledger, &tx) - reserve;
        if fee > 0 {
            self.authored.push(Authored { chain, txid: tx.txid(), payer: by, fee });
        }
        Ok(tx.txid())
    }

    /// Everything `node` does on chain for its force-closed channels: learn
    /// preimages revealed there, punish breaches, submit every claim it is
    /// entitled to. Returns the number of transactions submitted.
    pub fn watch_chain(&mut self, node: NodeId, punish: bool) -> usize {
        let mut submitted = 0;
        for (index, party) in self.channels_of(node) {
            let chain = self.slots[index].channel.chain();
            let Some(close) = self.slots[index].channel.close_record() else { continue };
            if close.kind == CloseKind::Cooperative {
                continue;
            }
            self.learn_from_chain(index);
            let phase = self.slots[index].channel.phase();
            let ledger = self.ledgers.get_mut(&chain).expect("channel chain exists");
            if let ChannelPhase::Breached { by } = phase {
                if by != party {
                    if punish {
                        if let Ok(tx) = self.slots[index].channel.punish_breach(ledger, party) {
                            let fee = tx_fee(ledger, &tx);
                            self.authored.push(Authored { chain, txid: tx.txid(), payer: node, fee });
                            submitted += 1;
                        }
                    }
                    continue;
                }
            }
            let who = &self.participants[&node];
            let claims =
                self.slots[index].channel.onchain_claims(ledger, party, &|f, h| who.knows(f, h).map(<[u8]>::to_vec));
            for claim in claims {
                let fee = tx_fee(ledger, &claim.tx);
                if let Ok(txid) = ledger.submit_tx(claim.tx) {
                    self.authored.push(Authored { chain, txid, payer: node, fee });
                    submitted += 1;
                }
            }
        }
        submitted
    }

    /// Lifecycle records emitted by every channel since the last call.
    pub fn drain_channel_events(&mut self) -> Vec<(usize, ChannelEvent)> {
        let mut out = Vec::new();
        for (i, slot) in self.slots.iter_mut().enumerate() {
            out.extend(slot.channel.drain_events().into_iter().map(|e| (i, e)));
        }
        out
    }

    /// Mines `n` blocks on `chain` and updates channel phases.
    pub fn mine(&mut self, chain: ChainId, n: u64) {
        let Some(ledger) = self.ledgers.get_mut(&chain) else { return };
        ledger.mine_blocks(n);
        for slot in self.slots.iter_mut().filter(|s| s.channel.chain() == chain) {
            slot.channel.refresh(ledger);
        }
    }

    /// Both ends of a force-closed channel learn preimages revealed by
    /// on-chain HTLC claims.
    fn learn_from_chain(&mut self, index: usize) {
        let slot = &self.slots[index];
        let Some(number) = broadcast_number(&slot.channel) else { return };
        let ledger = &self.ledgers[&slot.channel.chain()];
        let htlcs = slot.channel.state(number).map(|s| s.pending_htlcs.clone()).unwrap_or_default();
        for htlc in htlcs {
            if let HtlcResolution::Fulfilled { preimage } = slot.channel.htlc_resolution(ledger, htlc.id) {
                for node in slot.ends {
                    if let Some(p) = self.participants.get_mut(&node) {
                        p.learn(htlc.hash_fn, &preimage);
                    }
                }
            }
        }
    }

    /// How HTLC `htlc_id` of channel `index` ended up, combining off-chain
    /// resolutions with what the chain shows.
    pub fn htlc_outcome(&self, index: usize, htlc_id: u64) -> HopOutcome {
        if let Some(o) = self.resolved.get(&(index, htlc_id)) {
            return *o;
        }
        let channel = &self.slots[index].channel;
        let ledger = &self.ledgers[&channel.chain()];
        match channel.htlc_resolution(ledger, htlc_id) {
            HtlcResolution::OffChain | HtlcResolution::Pending => HopOutcome::Pending,
            HtlcResolution::Fulfilled { .. } => HopOutcome::Fulfilled,
            HtlcResolution::TimedOut => HopOutcome::Failed,
            HtlcResolution::NotOnChain => {
                // The broadcast commitment predates the HTLC, so its amount
                // stayed with the offering side.
                if channel.close_record().map(|c| ledger.is_confirmed(&c.txid)).unwrap_or(false) {
                    HopOutcome::Failed
                } else {
                    HopOutcome::Pending
                }
            }
            HtlcResolution::Revoked { by } => {
                let receiver = broadcast_number(channel)
                    .and_then(|n| channel.state(n))
                    .and_then(|s| s.htlc(htlc_id))
                    .map(|h| h.direction.receiver());
                HopOutcome::Revoked { by_receiver: receiver == Some(by) }
            }
        }
    }

    /// On-chain fees `node` paid on `asset` through transactions that confirmed.
    pub fn fees_paid(&self, node: NodeId, asset: AssetId) -> u64 {
        self.authored
            .iter()
            .filter(|a| a.payer == node && self.ledgers[&a.chain].params().asset_id == asset)
            .filter(|a| self.ledgers[&a.chain].is_confirmed(&a.txid))
            .map(|a| a.fee)
            .sum()
    }

    /// Spendable on-chain coins of `node` in `asset`.
    pub fn onchain_balance(&self, node: NodeId, asset: AssetId) -> u64 {
        let Some(p) = self.participants.get(&node) else { return 0 };
        self.ledgers.values().filter(|l| l.params().asset_id == asset).map(|l| l.balance_of(p.wallet.public())).sum()
    }

    /// `node`'s balance in channels whose funding output is still unspent.
    pub fn channel_balance(&self, node: NodeId, asset: AssetId) -> u64 {
        self.slots
            .iter()
            .filter(|s| s.channel.asset() == asset && self.funding_live(s))
            .filter_map(|s| s.party_of(node).map(|p| s.channel.balance(p)))
            .sum()
    }

    pub fn total_balance(&self, node: NodeId, asset: AssetId) -> u64 {
        self.onchain_balance(node, asset) + self.channel_balance(node, asset)
    }

    fn funding_live(&self, slot: &ChannelSlot) -> bool {
        self.ledgers[&slot.channel.chain()].utxo(&slot.channel.funding_outpoint()).is_some()
    }

    /// Checks, for every asset, that confirmed outputs (with live channel
    /// funding replaced by the channel's balances, pending HTLCs and close
    /// reserve) plus
    /// burned fees equal the genesis allocation. Returns the offending
    /// assets with (expected, found).
    pub fn conservation_errors(&self) -> Vec<(AssetId, u128, u128)> {
        let mut expected: BTreeMap<AssetId, u128> = BTreeMap::new();
        let mut found: BTreeMap<AssetId, u128> = BTreeMap::new();
        for ledger in self.ledgers.values() {
            let asset = ledger.params().asset_id;
            *expected.entry(asset).or_default() += ledger.genesis_total() as u128;
            let funding: BTreeSet<_> = self
                .slots
                .iter()
                .filter(|s| s.channel.chain() == ledger.params().chain_id)
                .map(|s| s.channel.funding_outpoint())
                .collect();
            let mut sum = ledger.burned() as u128;
            for (op, utxo) in ledger.utxos() {
                if !funding.contains(op) {
                    sum += utxo.amount as u128;
                }
            }
            for slot in self.slots.iter().filter(|s| s.channel.chain() == ledger.params().chain_id) {
                if self.funding_live(slot) {
                    sum += slot.channel.latest().total() + slot.channel.close_reserve() as u128;
                }
            }
            *found.entry(asset).or_default() += sum;
        }
        expected
            .into_iter()
            .filter(|(a, e)| found.get(a) != Some(e))
            .map(|(a, e)| (a, e, found.get(&a).copied().unwrap_or(0)))
            .collect()
    }
}

/// Number of the commitment a force close broadcast.
fn broadcast_number(channel: &Channel) -> Option<u64> {
    match channel.close_record()?.kind {
        CloseKind::Commitment { number, .. } => Some(number),
        CloseKind::Cooperative => None,
    }
}

/// Inputs minus outputs, looking inputs up among unspent outputs and
/// mempool transactions.
fn tx_fee(ledger: &Ledger, tx: &Transaction) -> u64 {
    let mut inputs = 0u64;
    for input in &tx.inputs {
        let op = input.outpoint;
        let amount = ledger
            .utxo(&op)
            .map(|u| u.amount)
            .or_else(|| ledger.mempool_tx(&op.txid).and_then(|t| t.outputs.get(op.index as usize)).map(|o| o.amount))
            .or_else(|| {
                ledger.confirmed_tx(&op.txid).and_then(|c| c.tx.outputs.get(op.index as usize)).map(|o| o.amount)
            })
            .unwrap_or(0);
        inputs += amount;
    }
    inputs.saturating_sub(tx.output_total().unwrap_or(u64::MAX))
}
