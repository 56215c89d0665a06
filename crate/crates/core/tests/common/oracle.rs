//! Independent reference implementations for routing and onion checks.
//! Nothing here calls the routing search or the quote math under test.
//! The rounding is spelled out by hand on purpose.
#![allow(clippy::manual_div_ceil, clippy::manual_is_multiple_of, clippy::type_complexity)]

use std::collections::BTreeMap;

use comit_core::chainlab::{AssetId, ChainId, HashFnId};
use comit_core::crp::{ChainInfo, Graph, NodeId, NodeKey, RateQuote, Route};
use rand::seq::SliceRandom;
use rand::Rng;

pub struct RandomGraph {
    pub graph: Graph,
    pub chains: BTreeMap<ChainId, ChainInfo>,
    pub nodes: Vec<NodeId>,
    /// `(chain, x, y, capacity)`, undirected.
    pub edges: Vec<(ChainId, NodeId, NodeId, u64)>,
    pub quotes: BTreeMap<NodeId, Vec<RateQuote>>,
}

pub fn random_quote(rng: &mut impl Rng, asset_in: AssetId, asset_out: AssetId) -> RateQuote {
    let (rate_num, rate_den) =
        if asset_in == asset_out && rng.gen_bool(0.5) { (1, 1) } else { (rng.gen_range(1..=9), rng.gen_range(1..=9)) };
    RateQuote {
        asset_in,
        asset_out,
        rate_num,
        rate_den,
        base_fee: rng.gen_range(0..=20),
        fee_ppm: if rng.gen_bool(0.1) { rng.gen_range(0..1_000_000) } else { rng.gen_range(0..=20_000) },
    }
}

/// Up to 8 nodes, 12 channels, 3 chains with random hash-function sets, and
/// random quotes (at most one per node and asset pair).
pub fn random_graph(rng: &mut impl Rng) -> RandomGraph {
    let n_nodes = rng.gen_range(2..=8usize);
    let nodes: Vec<NodeId> = (0..n_nodes).map(|i| NodeKey::from_seed(format!("oracle-{i}").as_bytes()).id()).collect();
    let n_chains = rng.gen_range(1..=3u32);
    let chains: BTreeMap<ChainId, ChainInfo> = (1..=n_chains)
        .map(|c| {
            let mut hash_fns: Vec<HashFnId> = HashFnId::ALL.into_iter().filter(|_| rng.gen_bool(0.6)).collect();
            if hash_fns.is_empty() {
                hash_fns.push(*HashFnId::ALL.choose(rng).unwrap());
            }
            (ChainId(c), ChainInfo { asset: AssetId(c), hash_fns })
        })
        .collect();
    let mut graph = Graph::new(chains.clone());
    let mut edges = Vec::new();
    for _ in 0..rng.gen_range(1..=12) {
        let x = *nodes.choose(rng).unwrap();
        let y = *nodes.choose(rng).unwrap();
        let chain = ChainId(rng.gen_range(1..=n_chains));
        let capacity = rng.gen_range(0..=30_000);
        if x == y || edges.iter().any(|(c, a, b, _)| *c == chain && ((*a, *b) == (x, y) || (*a, *b) == (y, x))) {
            continue;
        }
        graph.add_channel(chain, x, y, capacity);
        edges.push((chain, x, y, capacity));
    }
    let mut quotes = BTreeMap::new();
    for &node in &nodes {
        let mut list = Vec::new();
        for a in 1..=n_chains {
            for b in 1..=n_chains {
                if rng.gen_bool(0.6) {
                    list.push(random_quote(rng, AssetId(a), AssetId(b)));
                }
            }
        }
        graph.set_quotes(node, list.clone());
        quotes.insert(node, list);
    }
    RandomGraph { graph, chains, nodes, edges, quotes }
}

/// `pre + fee` for the smallest `pre` converting into at least `out`,
/// written out directly from the rounding rules.
pub fn needed_in(q: &RateQuote, out: u64) -> Option<(u64, u64)> {
    let num = out as u128 * q.rate_den as u128;
    let pre = num / q.rate_num as u128 + u128::from(num % q.rate_num as u128 != 0);
    let prop = pre * q.fee_ppm as u128;
    let fee = q.base_fee as u128 + prop / 1_000_000 + u128::from(prop % 1_000_000 != 0);
    let total = pre + fee;
    (total <= u64::MAX as u128).then_some((total as u64, fee as u64))
}

/// What `amount_in` buys through `q`: binary search over the convertible
/// part, checked by brute force on small inputs.
pub fn forward_amount(q: &RateQuote, amount_in: u64) -> u128 {
    let cost = |pre: u64| {
        let prop = pre as u128 * q.fee_ppm as u128;
        pre as u128 + q.base_fee as u128 + prop.div_ceil(1_000_000)
    };
    if cost(0) > amount_in as u128 {
        return 0;
    }
    let (mut lo, mut hi) = (0u64, amount_in);
    while lo < hi {
        let mid = hi - (hi - lo) / 2;
        if cost(mid) <= amount_in as u128 {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo as u128 * q.rate_num as u128 / q.rate_den as u128
}

/// A candidate found by enumeration: per-hop `(receiving node, chain,
/// amount, quote)` in route order, plus the usable hash functions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub sender: NodeId,
    pub hops: Vec<(NodeId, ChainId, u64, Option<RateQuote>)>,
    pub hash_fns: Vec<HashFnId>,
}

impl Candidate {
    pub fn key(&self) -> (u64, usize, Vec<NodeId>, Vec<ChainId>) {
        let nodes = std::iter::once(self.sender).chain(self.hops.iter().map(|h| h.0)).collect();
        (self.hops[0].2, self.hops.len(), nodes, self.hops.iter().map(|h| h.1).collect())
    }

    pub fn from_route(route: &Route) -> Candidate {
        let mut hash_fns = route.hash_fns.clone();
        hash_fns.sort();
        Candidate {
            sender: route.sender,
            hops: route.hops.iter().map(|h| (h.node, h.chain, h.amount, h.quote)).collect(),
            hash_fns,
        }
    }
}

/// Every admissible simple path from `sender` to `recipient`, enumerated
/// forwards by depth-first search over node sequences.
pub fn enumerate_routes(
    g: &RandomGraph,
    sender: NodeId,
    recipient: NodeId,
    amount_out: u64,
    asset_out: AssetId,
    hash_fn: Option<HashFnId>,
) -> Vec<Candidate> {
    let mut out = Vec::new();
    let mut path = vec![(sender, ChainId(0))];
    walk(g, recipient, &mut path, &mut |path| {
        if let Some(c) = evaluate(g, path, amount_out, asset_out, hash_fn) {
            out.push(c);
        }
    });
    out
}

fn walk(
    g: &RandomGraph,
    recipient: NodeId,
    path: &mut Vec<(NodeId, ChainId)>,
    visit: &mut dyn FnMut(&[(NodeId, ChainId)]),
) {
    let (here, _) = *path.last().unwrap();
    if here == recipient {
        visit(path);
        return;
    }
    for &(chain, x, y, _) in &g.edges {
        let next = if x == here {
            y
        } else if y == here {
            x
        } else {
            continue;
        };
        if path.iter().any(|(n, _)| *n == next) {
            continue;
        }
        path.push((next, chain));
        walk(g, recipient, path, visit);
        path.pop();
    }
}

fn capacity(g: &RandomGraph, chain: ChainId, a: NodeId, b: NodeId) -> u64 {
    g.edges.iter().find(|(c, x, y, _)| *c == chain && ((*x, *y) == (a, b) || (*x, *y) == (b, a))).map_or(0, |e| e.3)
}

fn evaluate(
    g: &RandomGraph,
    path: &[(NodeId, ChainId)],
    amount_out: u64,
    asset_out: AssetId,
    hash_fn: Option<HashFnId>,
) -> Option<Candidate> {
    let hops = path.len() - 1;
    let asset = |i: usize| g.chains[&path[i + 1].1].asset;
    if asset(hops - 1) != asset_out {
        return None;
    }
    let mut hash_fns: Vec<HashFnId> = HashFnId::ALL.to_vec();
    for (_, chain) in &path[1..] {
        hash_fns.retain(|f| g.chains[chain].hash_fns.contains(f));
    }
    if let Some(h) = hash_fn {
        hash_fns.retain(|f| *f == h);
    }
    if hash_fns.is_empty() {
        return None;
    }
    // Amounts from the recipient back to the sender.
    let mut amounts = vec![0u64; hops];
    let mut quotes = vec![None; hops];
    amounts[hops - 1] = amount_out;
    for i in (0..hops - 1).rev() {
        let forwarder = path[i + 1].0;
        let q = *g.quotes[&forwarder].iter().find(|q| q.asset_in == asset(i) && q.asset_out == asset(i + 1))?;
        amounts[i] = needed_in(&q, amounts[i + 1])?.0;
        quotes[i] = Some(q);
    }
    for i in 0..hops {
        if capacity(g, path[i + 1].1, path[i].0, path[i + 1].0) < amounts[i] {
            return None;
        }
    }
    Some(Candidate {
        sender: path[0].0,
        hops: (0..hops).map(|i| (path[i + 1].0, path[i + 1].1, amounts[i], quotes[i])).collect(),
        hash_fns,
    })
}

/// The enumerated route that should be chosen, by cost, then hop count,
/// then node ids, then chains.
pub fn best(candidates: &[Candidate]) -> Option<&Candidate> {
    candidates.iter().min_by_key(|c| c.key())
}

/// Hop keys, session key, raw payloads and associated data for an onion of
/// `n` hops, all derived from `rng`.
pub fn onion_case(rng: &mut impl Rng, n: usize) -> (Vec<NodeKey>, [u8; 32], Vec<Vec<u8>>, [u8; 32]) {
    let keys: Vec<NodeKey> = (0..n).map(|_| NodeKey::from_seed(&rng.gen::<[u8; 32]>())).collect();
    let session = comit_core::crp::session_key(rng);
    let payloads = (0..n)
        .map(|_| {
            let len = rng.gen_range(0..=comit_core::crp::PAYLOAD_LEN);
            (0..len).map(|_| rng.gen()).collect()
        })
        .collect();
    (keys, session, payloads, rng.gen())
}

/// Peels the whole onion; every hop must see its own payload (zero padded)
/// and the same packet length.
pub fn onion_round_trip(rng: &mut impl Rng, n: usize) -> Result<(), String> {
    use comit_core::crp::{onion_create, onion_peel, Peeled, PACKET_LEN, PAYLOAD_LEN};
    let (keys, session, payloads, assoc) = onion_case(rng, n);
    let ids: Vec<NodeId> = keys.iter().map(NodeKey::id).collect();
    let mut packet = onion_create(&ids, &session, &payloads, &assoc).map_err(|e| e.to_string())?;
    for (i, key) in keys.iter().enumerate() {
        if packet.to_bytes().len() != PACKET_LEN {
            return Err(format!("hop {i}: packet is {} bytes", packet.to_bytes().len()));
        }
        let mut expected = payloads[i].clone();
        expected.resize(PAYLOAD_LEN, 0);
        match onion_peel(&packet, key, &assoc).map_err(|e| format!("hop {i}: {e}"))? {
            Peeled::Forward { payload, next } if i + 1 < n => {
                if payload[..] != expected[..] {
                    return Err(format!("hop {i}: payload differs"));
                }
                packet = next;
            }
            Peeled::Final { payload } if i + 1 == n => {
                if payload[..] != expected[..] {
                    return Err(format!("hop {i}: payload differs"));
                }
            }
            other => return Err(format!("hop {i} of {n}: unexpected {other:?}")),
        }
    }
    Ok(())
}

/// Flips one byte of the packet in flight to a random hop; true if that hop
/// rejects it.
pub fn tamper_detected(rng: &mut impl Rng) -> bool {
    use comit_core::crp::{onion_create, onion_peel, OnionPacket, Peeled};
    let n = rng.gen_range(1..=20);
    let (keys, session, payloads, assoc) = onion_case(rng, n);
    let ids: Vec<NodeId> = keys.iter().map(NodeKey::id).collect();
    let mut packet = onion_create(&ids, &session, &payloads, &assoc).unwrap();
    let target = rng.gen_range(0..n);
    for key in &keys[..target] {
        match onion_peel(&packet, key, &assoc).unwrap() {
            Peeled::Forward { next, .. } => packet = next,
            Peeled::Final { .. } => unreachable!("earlier hops forward"),
        }
    }
    let mut bytes = packet.to_bytes();
    let at = rng.gen_range(0..bytes.len());
    bytes[at] ^= rng.gen_range(1..=255u8);
    let tampered = OnionPacket::from_bytes(&bytes).unwrap();
    onion_peel(&tampered, &keys[target], &assoc).is_err()
}
