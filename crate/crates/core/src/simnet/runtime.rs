//! The tick loop. Every tick runs, in order: fault activation, scheduled
//! payments and closes, one gossip round, every online actor's turn (in
//! declaration order), then mining on the chains scheduled for that tick.
//! Conservation is checked after every actor turn and after mining.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::report::{
    ActorBalances, AssetBalance, ChainTxCount, EventRecord, GossipStats, HopRecord, PaymentRecord, PaymentStatus,
    Report, SimEvent, Violation,
};
use super::scenario::{FaultKind, Role, Scenario};
use crate::chainlab::{hash_digest, AssetId, ChainId, ChainParams, HashFnId, KeyPair, Ledger, Script, TxOut};
use crate::channels::{ChannelConfig, ChannelEvent, ChannelPhase};
use crate::crp::{
    find_route, gossip_round, ChainInfo, ChannelAnnouncement, GossipState, Graph, LpAdvert, NodeId, NodeKey,
    OnionPacket, RateQuote, MAX_ROUTE_HOPS,
};
use crate::swap::{
    build_onion, make_invoice, read_packet, stack_expiries, AttemptStatus, HopHtlc, HopOutcome, Network, PaymentAttempt,
};

/// Blocks before an HTLC's expiry at which a receiver that knows the
/// preimage but could not settle off-chain goes on chain. Confirming the
/// commitment and then the claim takes two blocks, one spare.
pub const CLAIM_MARGIN: u64 = 3;

/// At most this many violations are recorded per run.
const MAX_VIOLATIONS: usize = 100;

struct Actor {
    id: String,
    role: Role,
    node: NodeId,
    rng: ChaCha20Rng,
    quotes: Vec<RateQuote>,
    active: BTreeSet<FaultKind>,
    offline_until: u64,
    faulty: bool,
    breach_done: bool,
    advertised: Option<Vec<ChannelAnnouncement>>,
}

impl Actor {
    fn has(&self, kind: FaultKind) -> bool {
        self.active.contains(&kind)
    }
}

struct Payment {
    index: usize,
    from: usize,
    to: usize,
    started: u64,
    finished: Option<u64>,
    status: Option<PaymentStatus>,
    reason: Option<String>,
    attempt: Option<PaymentAttempt>,
    /// Onion delivered with each added hop.
    packets: Vec<OnionPacket>,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    net: Network,
    actors: Vec<Actor>,
    by_node: BTreeMap<NodeId, usize>,
    gossip: Vec<GossipState>,
    links: Vec<(usize, usize)>,
    chain_infos: BTreeMap<ChainId, ChainInfo>,
    payments: Vec<Payment>,
    pending_closes: Vec<(u64, usize)>,
    /// Channel index in the network for every scenario channel.
    channel_slots: Vec<usize>,
    initial: BTreeMap<(usize, u32), u64>,
    events: Vec<EventRecord>,
    violations: Vec<Violation>,
    tick: u64,
    gossip_rounds: u64,
    converged_at: Option<u64>,
    breaches_seen: BTreeSet<usize>,
}

/// Runs a validated scenario to completion.
pub fn run_scenario(scenario: &Scenario) -> Report {
    let mut sim = Sim::new(scenario);
    sim.run();
    sim.report()
}

fn seed_bytes(seed: u64, label: &str, id: &str) -> Vec<u8> {
    let mut v = seed.to_le_bytes().to_vec();
    v.extend_from_slice(label.as_bytes());
    v.push(0);
    v.extend_from_slice(id.as_bytes());
    v
}

impl<'a> Sim<'a> {
    fn new(scenario: &'a Scenario) -> Self {
        let seed = scenario.seed;
        let mut net = Network::new();
        let mut actors = Vec::new();
        let mut by_node = BTreeMap::new();
        let mut keys = Vec::new();
        for (i, spec) in scenario.actors.iter().enumerate() {
            let node = NodeKey::from_seed(&seed_bytes(seed, "node", &spec.id));
            let wallet = KeyPair::from_seed(&seed_bytes(seed, "wallet", &spec.id));
            // Streams are split per actor so adding an actor leaves the
            // others' randomness unchanged.
            let rng_seed = hash_digest(HashFnId::Sha256, &seed_bytes(seed, "rng", &spec.id));
            by_node.insert(node.id(), i);
            keys.push(wallet.public());
            actors.push(Actor {
                id: spec.id.clone(),
                role: spec.role,
                node: node.id(),
                rng: ChaCha20Rng::from_seed(rng_seed),
                quotes: scenario.quotes.iter().filter(|q| q.lp == spec.id).map(|q| q.quote()).collect(),
                active: BTreeSet::new(),
                offline_until: 0,
                faulty: scenario.faults.iter().any(|f| f.target == spec.id),
                breach_done: false,
                advertised: None,
            });
            net.add_participant(node, wallet);
        }
        let index_of = |id: &str| scenario.actors.iter().position(|a| a.id == id).expect("validated reference");

        let mut initial = BTreeMap::new();
        let mut chain_infos = BTreeMap::new();
        for c in &scenario.chains {
            let mut params = ChainParams::new(ChainId(c.id), AssetId(c.asset), c.hash_fns.clone());
            params.tx_fee = c.tx_fee;
            params.block_interval = c.block_interval;
            let allocations = c
                .genesis
                .iter()
                .map(|g| {
                    *initial.entry((index_of(&g.actor), c.asset)).or_insert(0) += g.amount;
                    TxOut { amount: g.amount, script: Script::PayToKey(keys[index_of(&g.actor)]) }
                })
                .collect();
            let ledger = Ledger::new(params, c.start_height, allocations).expect("validated chain");
            chain_infos.insert(ChainId(c.id), ChainInfo { asset: AssetId(c.asset), hash_fns: c.hash_fns.clone() });
            net.add_ledger(ledger);
        }

        let mut sim = Sim {
            scenario,
            net,
            actors,
            by_node,
            gossip: vec![GossipState::new(); scenario.actors.len()],
            links: Vec::new(),
            chain_infos,
            payments: Vec::new(),
            pending_closes: scenario.closes.iter().map(|c| (c.tick, c.channel)).collect(),
            channel_slots: Vec::new(),
            initial,
            events: Vec::new(),
            violations: Vec::new(),
            tick: 0,
            gossip_rounds: 0,
            converged_at: None,
            breaches_seen: BTreeSet::new(),
        };

        let config = ChannelConfig { csv_delay: scenario.csv_delay, ..ChannelConfig::default() };
        let mut links = BTreeSet::new();
        for (i, ch) in scenario.channels.iter().enumerate() {
            let (a, b) = (index_of(&ch.a), index_of(&ch.b));
            links.insert((a.min(b), a.max(b)));
            let opened = sim.net.open_channel(
                ChainId(ch.chain),
                sim.actors[a].node,
                sim.actors[b].node,
                ch.fund_a,
                ch.fund_b,
                config,
            );
            match opened {
                Ok(slot) => sim.channel_slots.push(slot),
                Err(e) => {
                    sim.channel_slots.push(usize::MAX);
                    sim.violate("setup", format!("channels[{i}] could not be opened: {e}"));
                }
            }
        }
        sim.links = links.into_iter().collect();
        sim
    }

    fn violate(&mut self, kind: &str, detail: String) {
        if self.violations.len() < MAX_VIOLATIONS {
            self.violations.push(Violation { tick: self.tick, kind: kind.to_string(), detail });
        }
    }

    fn emit(&mut self, event: SimEvent) {
        self.events.push(EventRecord { tick: self.tick, event });
    }

    fn online(&self, actor: usize) -> bool {
        self.tick >= self.actors[actor].offline_until
    }

    fn actor_of(&self, node: NodeId) -> usize {
        self.by_node[&node]
    }

    fn height(&self, chain: ChainId) -> u64 {
        self.net.ledger(chain).map_or(0, Ledger::height)
    }

    /// Last tick with anything scheduled.
    fn horizon(&self) -> u64 {
        let s = self.scenario;
        let payments = s.payments.iter().map(|p| p.tick);
        let faults = s.faults.iter().map(|f| f.tick + f.duration.unwrap_or(0));
        let closes = s.closes.iter().map(|c| c.tick);
        payments.chain(faults).chain(closes).max().unwrap_or(0)
    }

    fn run(&mut self) {
        let s = self.scenario;
        let slowest = s.chains.iter().map(|c| s.schedule(c.id).0).max().unwrap_or(1);
        let span = s.policy.final_delta + MAX_ROUTE_HOPS as u64 * s.policy.hop_delta + 3 * s.csv_delay + 50;
        let limit = self.horizon() + span * slowest + 100;
        self.check_conservation("setup");
        loop {
            self.step();
            if self.tick >= self.horizon() && self.quiescent() {
                break;
            }
            if self.tick >= limit {
                self.violate("termination", format!("run did not settle within {limit} ticks"));
                break;
            }
            self.tick += 1;
        }
    }

    fn quiescent(&self) -> bool {
        let payments_done =
            self.payments.len() == self.scenario.payments.len() && self.payments.iter().all(|p| p.status.is_some());
        let channels_done =
            self.net.slots().iter().all(|s| {
                matches!(s.channel.phase(), ChannelPhase::Open | ChannelPhase::Settled | ChannelPhase::Opening)
            });
        let mempools_empty = self.net.ledgers().all(|l| l.mempool_len() == 0);
        payments_done && channels_done && mempools_empty && self.pending_closes.is_empty()
    }

    fn step(&mut self) {
        let tick = self.tick;
        for f in self.scenario.faults.iter().filter(|f| f.tick == tick) {
            let a = self.scenario.actors.iter().position(|x| x.id == f.target).expect("validated target");
            if f.kind == FaultKind::Crash {
                self.actors[a].offline_until = tick + f.duration.unwrap_or(1);
            } else {
                self.actors[a].active.insert(f.kind);
            }
            self.emit(SimEvent::FaultActivated { target: f.target.clone(), kind: f.kind });
        }
        for index in 0..self.scenario.payments.len() {
            if self.scenario.payments[index].tick == tick {
                self.start_payment(index);
            }
        }
        self.run_closes();
        self.advertise();
        self.gossip_step();
        for a in 0..self.actors.len() {
            if self.online(a) {
                self.actor_turn(a);
                self.check_conservation("actor turn");
            }
        }
        self.update_payments();
        for c in &self.scenario.chains {
            let (every, offset) = self.scenario.schedule(c.id);
            if tick % every == offset {
                self.net.mine(ChainId(c.id), 1);
            }
        }
        self.check_conservation("mining");
        for (channel, record) in self.net.drain_channel_events() {
            if let ChannelEvent::Breach { by, .. } = record {
                if self.breaches_seen.insert(channel) {
                    let who = self.actors[self.actor_of(self.net.slot(channel).node(by))].id.clone();
                    self.emit(SimEvent::BreachDetected { channel, by: who });
                }
            }
            self.emit(SimEvent::Channel { channel, record });
        }
    }

    fn check_conservation(&mut self, when: &str) {
        for (asset, expected, found) in self.net.conservation_errors() {
            self.violate("conservation", format!("after {when}: asset {} expected {expected}, found {found}", asset.0));
        }
    }

    fn run_closes(&mut self) {
        let tick = self.tick;
        let mut keep = Vec::new();
        for (at, channel) in std::mem::take(&mut self.pending_closes) {
            if at > tick {
                keep.push((at, channel));
                continue;
            }
            let slot = self.channel_slots[channel];
            if slot == usize::MAX || self.net.slot(slot).channel.phase() != ChannelPhase::Open {
                continue;
            }
            let ends = self.net.slot(slot).ends;
            let both_online = ends.iter().all(|n| self.online(self.actor_of(*n)));
            let ch = &self.net.slot(slot).channel;
            if !both_online || !ch.pending_htlcs().is_empty() || self.net.cooperative_close(slot).is_err() {
                keep.push((at, channel));
            }
        }
        self.pending_closes = keep;
    }

    /// Liquidity providers (re-)announce their open channels and quotes
    /// whenever the set changes.
    fn advertise(&mut self) {
        for a in 0..self.actors.len() {
            if self.actors[a].role != Role::LiquidityProvider || !self.online(a) {
                continue;
            }
            let node = self.actors[a].node;
            let mut channels: Vec<ChannelAnnouncement> = self
                .net
                .channels_of(node)
                .into_iter()
                .filter(|(i, _)| self.net.slot(*i).channel.phase() == ChannelPhase::Open)
                .map(|(i, p)| {
                    let slot = self.net.slot(i);
                    ChannelAnnouncement {
                        chain: slot.channel.chain(),
                        peer: slot.node(p.other()),
                        capacity: slot.channel.funding_amount(),
                    }
                })
                .collect();
            channels.sort_by_key(|c| (c.chain, c.peer));
            if self.actors[a].advertised.as_ref() == Some(&channels) {
                continue;
            }
            let key = &self.net.participant(node).expect("actor is a participant").node;
            let advert = LpAdvert::signed(key, channels.clone(), self.actors[a].quotes.clone(), self.tick);
            self.gossip[a].announce(advert);
            self.actors[a].advertised = Some(channels);
        }
    }

    fn gossip_step(&mut self) {
        let muted: Vec<bool> =
            (0..self.actors.len()).map(|a| !self.online(a) || self.actors[a].has(FaultKind::DropGossip)).collect();
        let ids: Vec<NodeId> = self.actors.iter().map(|a| a.node).collect();
        let changed = gossip_round(&mut self.gossip, &ids, &self.links, &|i| muted[i]);
        self.gossip_rounds += 1;
        if !changed && self.converged_at.is_none() {
            self.converged_at = Some(self.gossip_rounds);
        }
    }

    fn refund_early(&mut self, local: usize, reason: String) {
        let p = &mut self.payments[local];
        let index = p.index;
        p.status = Some(PaymentStatus::Refunded);
        p.finished = Some(self.tick);
        p.reason = Some(reason);
        self.emit(SimEvent::Refunded { payment: index });
    }

    fn start_payment(&mut self, index: usize) {
        let spec = &self.scenario.payments[index];
        let from = self.scenario.actors.iter().position(|a| a.id == spec.from).expect("validated");
        let to = self.scenario.actors.iter().position(|a| a.id == spec.to).expect("validated");
        self.payments.push(Payment {
            index,
            from,
            to,
            started: self.tick,
            finished: None,
            status: None,
            reason: None,
            attempt: None,
            packets: Vec::new(),
        });
        let local = self.payments.len() - 1;
        if !self.online(from) {
            return self.refund_early(local, "sender offline".into());
        }
        let (sender, recipient) = (self.actors[from].node, self.actors[to].node);
        let invoice = make_invoice(recipient, spec.amount, AssetId(spec.asset), spec.hash_fn, &mut self.actors[to].rng);
        self.net.participant_mut(recipient).expect("participant").learn(invoice.hash_fn, &invoice.secret);

        let mut graph = Graph::from_adverts(self.chain_infos.clone(), self.gossip[from].adverts());
        // The sender knows what it can actually send on its own channels.
        for (i, party) in self.net.channels_of(sender) {
            let slot = self.net.slot(i);
            if slot.channel.phase() == ChannelPhase::Open {
                let chain = slot.channel.chain();
                graph.add_channel(chain, sender, slot.node(party.other()), slot.channel.balance(party));
            }
        }
        let route = match find_route(&graph, sender, recipient, spec.amount, invoice.asset, Some(invoice.hash_fn)) {
            Ok(r) => r,
            Err(e) => return self.refund_early(local, format!("routing: {e}")),
        };
        if self.actors[from].role == Role::User {
            let first = self.by_node.get(&route.hops[0].node).map(|a| self.actors[*a].role);
            if first != Some(Role::LiquidityProvider) {
                self.violate(
                    "role",
                    format!("payment {index}: user's first hop does not lead to a liquidity provider"),
                );
            }
        }
        let expiries = match stack_expiries(&route, &self.net.heights(), &self.scenario.policy) {
            Ok(e) => e,
            Err(e) => return self.refund_early(local, e.to_string()),
        };
        let onion = match build_onion(&route, &expiries, &invoice.payment_hash, &mut self.actors[from].rng) {
            Ok(o) => o,
            Err(e) => return self.refund_early(local, e.to_string()),
        };
        if self.net.reserve_hash(invoice.payment_hash).is_err() {
            self.violate("secret-uniqueness", format!("payment {index} reuses a payment hash"));
            return self.refund_early(local, "payment hash reused".into());
        }
        let hop = &route.hops[0];
        let Some(channel) = self.net.channel_between(hop.chain, sender, hop.node) else {
            return self.refund_early(local, "first hop has no channel".into());
        };
        if !self.online(self.actor_of(hop.node)) || self.net.slot(channel).channel.phase() != ChannelPhase::Open {
            return self.refund_early(local, "first hop unavailable".into());
        }
        let htlc_id = match self.net.offer_htlc(
            channel,
            sender,
            hop.amount,
            invoice.hash_fn,
            invoice.payment_hash,
            expiries[0],
        ) {
            Ok(id) => id,
            Err(e) => return self.refund_early(local, format!("first hop: {e}")),
        };
        let attempt = PaymentAttempt {
            htlcs: vec![HopHtlc {
                channel,
                offerer: sender,
                receiver: hop.node,
                htlc_id,
                amount: hop.amount,
                expiry: expiries[0],
            }],
            route,
            invoice_hash: invoice.payment_hash,
            hash_fn: invoice.hash_fn,
            expiries,
            status: AttemptStatus::Pending,
        };
        let amount_in = attempt.route.amount_in();
        let p = &mut self.payments[local];
        p.attempt = Some(attempt);
        p.packets.push(onion);
        self.emit(SimEvent::Dispatched { payment: index, amount_in });
        self.emit(SimEvent::HopAdded { payment: index, hop: 0, htlc_id });
    }

    fn knows(&self, actor: usize, hash_fn: HashFnId, hash: &[u8; 32]) -> bool {
        self.net.participant(self.actors[actor].node).is_some_and(|p| p.knows(hash_fn, hash).is_some())
    }

    fn channel_open(&self, channel: usize) -> bool {
        self.net.slot(channel).channel.phase() == ChannelPhase::Open
    }

    fn actor_turn(&mut self, a: usize) {
        let node = self.actors[a].node;
        for p in 0..self.payments.len() {
            if self.payments[p].status.is_some() || self.payments[p].attempt.is_none() {
                continue;
            }
            let n_added = self.payments[p].attempt.as_ref().map_or(0, |t| t.htlcs.len());
            for i in 0..n_added {
                let h = self.payments[p].attempt.as_ref().expect("active").htlcs[i].clone();
                if h.receiver == node {
                    self.handle_incoming(a, p, i, &h);
                }
                if h.offerer == node {
                    self.handle_outgoing(a, &h);
                }
            }
        }
        if self.actors[a].has(FaultKind::BroadcastRevoked) && !self.actors[a].breach_done {
            self.try_breach(a);
        }
        self.net.watch_chain(node, true);
    }

    fn handle_incoming(&mut self, a: usize, p: usize, i: usize, h: &HopHtlc) {
        let attempt = self.payments[p].attempt.as_ref().expect("active");
        let (hash_fn, hash) = (attempt.hash_fn, attempt.invoice_hash);
        let last = i + 1 == attempt.route.hops.len();
        let forwarded = attempt.htlcs.len() > i + 1;
        let stall = self.actors[a].has(FaultKind::StallSecret);
        let upstream_online = self.online(self.actor_of(h.offerer));
        if self.net.htlc_outcome(h.channel, h.htlc_id) != HopOutcome::Pending || !self.channel_open(h.channel) {
            return;
        }
        let chain = self.net.slot(h.channel).channel.chain();

        if last {
            if self.knows(a, hash_fn, &hash) {
                let ok = self.final_payload_ok(a, p, i, h);
                if !ok {
                    if upstream_online {
                        let _ = self.net.fail_htlc(h.channel, h.htlc_id);
                    }
                    return;
                }
                if !stall && upstream_online {
                    let secret =
                        self.net.participant(h.receiver).and_then(|x| x.knows(hash_fn, &hash)).map(<[u8]>::to_vec);
                    if let Some(secret) = secret {
                        let _ = self.net.fulfill_htlc(h.channel, h.htlc_id, &secret);
                        return;
                    }
                }
            } else if upstream_online && self.height(chain) + CLAIM_MARGIN >= h.expiry {
                let _ = self.net.fail_htlc(h.channel, h.htlc_id);
                return;
            }
        } else if !forwarded {
            if let Err(reason) = self.forward(a, p, i, h) {
                let who = &self.actors[a].id;
                self.payments[p].reason.get_or_insert_with(|| format!("{who} did not forward: {reason}"));
                if upstream_online {
                    let _ = self.net.fail_htlc(h.channel, h.htlc_id);
                }
                return;
            }
        } else {
            let down = self.payments[p].attempt.as_ref().expect("active").htlcs[i + 1].clone();
            match self.net.htlc_outcome(down.channel, down.htlc_id) {
                HopOutcome::Fulfilled | HopOutcome::Revoked { by_receiver: true } => {
                    let secret =
                        self.net.participant(h.receiver).and_then(|x| x.knows(hash_fn, &hash)).map(<[u8]>::to_vec);
                    if let (Some(secret), false, true) = (secret, stall, upstream_online) {
                        let _ = self.net.fulfill_htlc(h.channel, h.htlc_id, &secret);
                        return;
                    }
                }
                HopOutcome::Failed | HopOutcome::Revoked { by_receiver: false } => {
                    if upstream_online && !self.knows(a, hash_fn, &hash) {
                        let _ = self.net.fail_htlc(h.channel, h.htlc_id);
                        return;
                    }
                }
                HopOutcome::Pending => {}
            }
        }

        // Deadline: a receiver holding the preimage goes on chain before the
        // offerer's refund path opens.
        if self.knows(a, hash_fn, &hash)
            && self.height(chain) + CLAIM_MARGIN >= h.expiry
            && self.channel_open(h.channel)
        {
            let _ = self.net.force_close(h.channel, h.receiver, None);
        }
    }

    /// An offerer whose HTLC is about to expire unresolved takes the channel
    /// on chain to time it out.
    fn handle_outgoing(&mut self, _a: usize, h: &HopHtlc) {
        if self.net.htlc_outcome(h.channel, h.htlc_id) != HopOutcome::Pending || !self.channel_open(h.channel) {
            return;
        }
        let chain = self.net.slot(h.channel).channel.chain();
        if self.height(chain) + 1 >= h.expiry {
            let _ = self.net.force_close(h.channel, h.offerer, None);
        }
    }

    fn final_payload_ok(&self, a: usize, p: usize, i: usize, h: &HopHtlc) -> bool {
        let pay = &self.payments[p];
        let spec = &self.scenario.payments[pay.index];
        let attempt = pay.attempt.as_ref().expect("active");
        match read_packet(&self.net, self.actors[a].node, &pay.packets[i], &attempt.invoice_hash) {
            Ok((payload, None)) => {
                payload.amount == spec.amount
                    && h.amount >= spec.amount
                    && payload.asset.0 == spec.asset
                    && payload.outgoing_expiry == h.expiry
            }
            _ => false,
        }
    }

    /// A forwarding node reads its onion layer and, if the terms hold,
    /// offers the next HTLC.
    fn forward(&mut self, a: usize, p: usize, i: usize, h: &HopHtlc) -> Result<(), String> {
        if self.actors[a].has(FaultKind::RefuseForward) {
            return Err("refusing to forward".into());
        }
        let node = self.actors[a].node;
        let attempt = self.payments[p].attempt.as_ref().expect("active");
        let (hash_fn, hash) = (attempt.hash_fn, attempt.invoice_hash);
        let (payload, next_packet) =
            read_packet(&self.net, node, &self.payments[p].packets[i], &hash).map_err(|e| e.to_string())?;
        let next_packet = next_packet.ok_or("not the recipient")?;
        let next = payload.next.ok_or("payload has no next node")?;
        let out = self.net.channel_between(payload.chain, node, next).ok_or("no outgoing channel")?;
        if !self.channel_open(out) {
            return Err("outgoing channel closed".into());
        }
        if !self.by_node.get(&next).is_some_and(|n| self.online(*n)) {
            return Err("next node offline".into());
        }
        let in_asset = self.net.slot(h.channel).channel.asset();
        let quote = self.actors[a]
            .quotes
            .iter()
            .find(|q| q.asset_in == in_asset && q.asset_out == payload.asset)
            .copied()
            .ok_or("no quote for this conversion")?;
        if payload.quote != Some(quote) {
            return Err("sender priced against a different quote".into());
        }
        let (needed, _) = quote.amount_in_for(payload.amount).map_err(|e| e.to_string())?;
        if h.amount < needed {
            return Err("incoming amount does not cover the outgoing one".into());
        }
        let in_chain = self.net.slot(h.channel).channel.chain();
        let in_left = h.expiry.saturating_sub(self.height(in_chain));
        let out_left = payload.outgoing_expiry.saturating_sub(self.height(payload.chain));
        if out_left <= CLAIM_MARGIN || in_left < out_left + CLAIM_MARGIN {
            return Err("expiry spacing too tight".into());
        }
        let htlc_id = self
            .net
            .offer_htlc(out, node, payload.amount, hash_fn, hash, payload.outgoing_expiry)
            .map_err(|e| e.to_string())?;
        let pay = &mut self.payments[p];
        pay.attempt.as_mut().expect("active").htlcs.push(HopHtlc {
            channel: out,
            offerer: node,
            receiver: next,
            htlc_id,
            amount: payload.amount,
            expiry: payload.outgoing_expiry,
        });
        pay.packets.push(next_packet);
        let index = pay.index;
        self.emit(SimEvent::HopAdded { payment: index, hop: i + 1, htlc_id });
        Ok(())
    }

    /// Broadcasts the revoked commitment of one of the actor's open channels
    /// that pays it the most.
    fn try_breach(&mut self, a: usize) {
        let node = self.actors[a].node;
        let mut best: Option<(u64, usize, u64)> = None;
        for (i, party) in self.net.channels_of(node) {
            let ch = &self.net.slot(i).channel;
            if ch.phase() != ChannelPhase::Open || ch.awaiting_revocation() {
                continue;
            }
            for n in 0..ch.latest_number() {
                if !ch.is_revoked(n) {
                    continue;
                }
                let gain = ch.state(n).map_or(0, |s| s.balance(party));
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, i, n));
                }
            }
        }
        if let Some((_, channel, number)) = best {
            if self.net.force_close(channel, node, Some(number)).is_ok() {
                self.actors[a].breach_done = true;
            }
        }
    }

    fn update_payments(&mut self) {
        for p in 0..self.payments.len() {
            if self.payments[p].status.is_some() {
                continue;
            }
            let Some(attempt) = &self.payments[p].attempt else { continue };
            let outcomes: Vec<HopOutcome> =
                attempt.htlcs.iter().map(|h| self.net.htlc_outcome(h.channel, h.htlc_id)).collect();
            if outcomes.contains(&HopOutcome::Pending) {
                continue;
            }
            let settled = matches!(outcomes[0], HopOutcome::Fulfilled | HopOutcome::Revoked { by_receiver: true });
            let index = self.payments[p].index;
            let route_nodes = attempt.route.nodes();
            let complete = attempt.htlcs.len() == attempt.route.hops.len();
            let pay = &mut self.payments[p];
            pay.finished = Some(self.tick);
            if settled {
                pay.status = Some(PaymentStatus::Settled);
                if let Some(t) = pay.attempt.as_mut() {
                    t.status = AttemptStatus::Settled { secret: [0; 32] };
                }
                self.emit(SimEvent::Settled { payment: index });
            } else {
                pay.status = Some(PaymentStatus::Refunded);
                if let Some(t) = pay.attempt.as_mut() {
                    t.status = AttemptStatus::Refunded;
                }
                self.emit(SimEvent::Refunded { payment: index });
            }
            // With every node on the route honest the attempt is
            // all-or-nothing.
            let all_honest = route_nodes.iter().all(|n| !self.actors[self.actor_of(*n)].faulty);
            if all_honest {
                let all_fulfilled = complete && outcomes.iter().all(|o| *o == HopOutcome::Fulfilled);
                let all_failed = outcomes.iter().all(|o| *o == HopOutcome::Failed);
                if !(all_fulfilled || all_failed) {
                    self.violate("atomicity", format!("payment {index} ended with hop outcomes {outcomes:?}"));
                }
            }
        }
    }

    fn report(mut self) -> Report {
        // Anything still open at this point was cut off.
        for p in 0..self.payments.len() {
            if self.payments[p].status.is_none() {
                let index = self.payments[p].index;
                self.payments[p].status = Some(PaymentStatus::Unresolved);
                self.violate("atomicity", format!("payment {index} never reached a terminal state"));
            }
        }

        let assets: Vec<u32> = self.scenario.chains.iter().map(|c| c.asset).collect();
        let mut transferred: BTreeMap<(usize, u32), i128> = BTreeMap::new();
        let mut payments = Vec::new();
        for pay in &self.payments {
            let spec = &self.scenario.payments[pay.index];
            let mut hops = Vec::new();
            let mut route = Vec::new();
            let mut amount_in = None;
            if let Some(t) = &pay.attempt {
                route = t.route.nodes().iter().map(|n| self.actors[self.actor_of(*n)].id.clone()).collect();
                amount_in = Some(t.route.amount_in());
                for h in &t.htlcs {
                    let outcome = self.net.htlc_outcome(h.channel, h.htlc_id);
                    let ch = &self.net.slot(h.channel).channel;
                    if matches!(outcome, HopOutcome::Fulfilled | HopOutcome::Revoked { by_receiver: true }) {
                        let asset = ch.asset().0;
                        *transferred.entry((self.actor_of(h.offerer), asset)).or_default() -= h.amount as i128;
                        *transferred.entry((self.actor_of(h.receiver), asset)).or_default() += h.amount as i128;
                    }
                    hops.push(HopRecord { chain: ch.chain().0, amount: h.amount, expiry: h.expiry, outcome });
                }
                // A forwarder whose outgoing leg was claimed is owed its
                // incoming leg, whether or not it managed to collect it.
                let claimed =
                    |o: &HopOutcome| matches!(o, HopOutcome::Fulfilled | HopOutcome::Revoked { by_receiver: true });
                for i in 1..hops.len() {
                    if claimed(&hops[i].outcome) && !claimed(&hops[i - 1].outcome) {
                        let incoming = &t.htlcs[i - 1];
                        let asset = self.net.slot(incoming.channel).channel.asset().0;
                        *transferred.entry((self.actor_of(incoming.receiver), asset)).or_default() +=
                            incoming.amount as i128;
                    }
                }
            }
            payments.push(PaymentRecord {
                index: pay.index,
                from: self.actors[pay.from].id.clone(),
                to: self.actors[pay.to].id.clone(),
                amount: spec.amount,
                asset: spec.asset,
                status: pay.status.expect("terminal"),
                reason: pay.reason.clone(),
                route,
                amount_in,
                hops,
                started: pay.started,
                finished: pay.finished,
            });
        }

        let mut balances = Vec::new();
        for (i, actor) in self.actors.iter().enumerate() {
            let mut rows = Vec::new();
            for &asset in &assets {
                let a = AssetId(asset);
                let onchain = self.net.onchain_balance(actor.node, a);
                let channel = self.net.channel_balance(actor.node, a);
                rows.push(AssetBalance {
                    asset,
                    initial: self.initial.get(&(i, asset)).copied().unwrap_or(0),
                    onchain,
                    channel,
                    total: onchain + channel,
                    fees_paid: self.net.fees_paid(actor.node, a),
                    transferred: transferred.get(&(i, asset)).copied().unwrap_or(0),
                });
            }
            balances.push(ActorBalances {
                actor: actor.id.clone(),
                role: actor.role,
                honest: !actor.faulty,
                assets: rows,
            });
        }
        for b in &balances {
            if !b.honest {
                continue;
            }
            for row in &b.assets {
                if (row.total as i128) < row.entitled() {
                    let detail = format!(
                        "{} holds {} of asset {}, entitled to {} (initial {}, fees {}, transfers {})",
                        b.actor,
                        row.total,
                        row.asset,
                        row.entitled(),
                        row.initial,
                        row.fees_paid,
                        row.transferred
                    );
                    self.violate("honest-loss", detail);
                }
            }
        }

        let mut counts = Vec::new();
        for c in &self.scenario.chains {
            let chain = ChainId(c.id);
            let ledger = self.net.ledger(chain).expect("chain exists");
            let slots: Vec<_> = self.net.slots().iter().filter(|s| s.channel.chain() == chain).collect();
            let funding = slots.iter().filter(|s| ledger.is_confirmed(&s.channel.funding_outpoint().txid)).count();
            let closes =
                slots.iter().filter_map(|s| s.channel.close_record()).filter(|r| ledger.is_confirmed(&r.txid)).count();
            let confirmed = ledger.confirmed_count();
            counts.push(ChainTxCount { chain: c.id, confirmed, funding, closes, claims: confirmed - funding - closes });
        }

        let adverts = self.gossip.iter().map(|g| g.len() as u64).max().unwrap_or(0);
        Report {
            seed: self.scenario.seed,
            ticks: self.tick + 1,
            payments,
            balances,
            onchain_tx_counts: counts,
            gossip: GossipStats { rounds_to_converge: self.converged_at, rounds: self.gossip_rounds, adverts },
            events: self.events,
            violations: self.violations,
            digest: String::new(),
        }
        .seal()
    }
}
