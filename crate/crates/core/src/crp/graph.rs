//! The routing graph assembled from gossip, and source-route selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::gossip::LpAdvert;
use super::node::NodeId;
use super::quote::RateQuote;
use super::RoutingError;
use crate::chainlab::{AssetId, ChainId, HashFnId};

pub const MAX_ROUTE_HOPS: usize = 20;

/// Public parameters of a chain, as far as routing is concerned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainInfo {
    pub asset: AssetId,
    pub hash_fns: Vec<HashFnId>,
}

/// Expiry spacing: the recipient gets `final_delta` blocks, every hop
/// towards the sender adds `hop_delta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelockPolicy {
    pub final_delta: u64,
    pub hop_delta: u64,
}

impl Default for TimelockPolicy {
    fn default() -> Self {
        TimelockPolicy { final_delta: 6, hop_delta: 6 }
    }
}

impl TimelockPolicy {
    pub fn validate(&self) -> Result<(), RoutingError> {
        if self.final_delta == 0 || self.hop_delta == 0 {
            return Err(RoutingError::InvalidPolicy);
        }
        Ok(())
    }

    /// Blocks granted to hop `index` of a route with `hops` hops.
    pub fn expiry_delta(&self, index: usize, hops: usize) -> u64 {
        self.final_delta + (hops - 1 - index) as u64 * self.hop_delta
    }
}

/// One channel traversal. `node` is the receiving end; `quote` is the
/// receiving node's conversion quote for forwarding into the next hop (none
/// on the final hop).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopSpec {
    pub node: NodeId,
    pub chain: ChainId,
    pub asset: AssetId,
    /// Amount carried by this hop's HTLC.
    pub amount: u64,
    /// Fee `node` keeps for forwarding (in this hop's asset).
    pub fee: u64,
    pub expiry_delta: u64,
    pub quote: Option<RateQuote>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub sender: NodeId,
    pub hops: Vec<HopSpec>,
    /// Hash functions supported on every chain of the route.
    pub hash_fns: Vec<HashFnId>,
}

impl Route {
    pub fn amount_in(&self) -> u64 {
        self.hops[0].amount
    }

    pub fn amount_out(&self) -> u64 {
        self.hops.last().expect("routes are non-empty").amount
    }

    pub fn recipient(&self) -> NodeId {
        self.hops.last().expect("routes are non-empty").node
    }

    /// Sender followed by every hop's receiving node.
    pub fn nodes(&self) -> Vec<NodeId> {
        std::iter::once(self.sender).chain(self.hops.iter().map(|h| h.node)).collect()
    }

    pub fn chains(&self) -> Vec<ChainId> {
        self.hops.iter().map(|h| h.chain).collect()
    }

    /// Forwarding quotes in hop order (one fewer than hops).
    pub fn quotes(&self) -> Vec<RateQuote> {
        self.hops[..self.hops.len() - 1].iter().map(|h| h.quote.expect("forwarding hops carry a quote")).collect()
    }

    /// Selection order: cheapest, then fewest hops, then node ids, then chains.
    pub fn sort_key(&self) -> (u64, usize, Vec<NodeId>, Vec<ChainId>) {
        (self.amount_in(), self.hops.len(), self.nodes(), self.chains())
    }

    pub fn apply_policy(&mut self, policy: &TimelockPolicy) {
        let n = self.hops.len();
        for (i, hop) in self.hops.iter_mut().enumerate() {
            hop.expiry_delta = policy.expiry_delta(i, n);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub chain: ChainId,
    pub a: NodeId,
    pub b: NodeId,
}

impl EdgeKey {
    pub fn new(chain: ChainId, x: NodeId, y: NodeId) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        EdgeKey { chain, a, b }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    chains: BTreeMap<ChainId, ChainInfo>,
    edges: BTreeMap<EdgeKey, u64>,
    adjacency: BTreeMap<NodeId, Vec<(NodeId, ChainId)>>,
    quotes: BTreeMap<NodeId, Vec<RateQuote>>,
}

impl Graph {
    pub fn new(chains: BTreeMap<ChainId, ChainInfo>) -> Self {
        Graph { chains, ..Default::default() }
    }

    /// Builds the graph from verified adverts. Channels on unknown chains and
    /// quotes for assets the LP has no channel in are ignored.
    pub fn from_adverts<'a>(
        chains: BTreeMap<ChainId, ChainInfo>,
        adverts: impl IntoIterator<Item = &'a LpAdvert>,
    ) -> Self {
        let mut graph = Graph::new(chains);
        for advert in adverts {
            let mut assets = Vec::new();
            for ch in &advert.channels {
                if let Some(info) = graph.chains.get(&ch.chain) {
                    assets.push(info.asset);
                    graph.add_channel(ch.chain, advert.node, ch.peer, ch.capacity);
                }
            }
            let quotes = advert
                .quotes
                .iter()
                .filter(|q| q.validate().is_ok() && assets.contains(&q.asset_in) && assets.contains(&q.asset_out))
                .copied()
                .collect();
            graph.set_quotes(advert.node, quotes);
        }
        graph
    }

    pub fn chain(&self, id: ChainId) -> Option<&ChainInfo> {
        self.chains.get(&id)
    }

    /// Adds a channel; when both ends advertise it the smaller hint wins.
    pub fn add_channel(&mut self, chain: ChainId, x: NodeId, y: NodeId, capacity: u64) {
        if x == y {
            return;
        }
        let key = EdgeKey::new(chain, x, y);
        match self.edges.get_mut(&key) {
            Some(c) => *c = (*c).min(capacity),
            None => {
                self.edges.insert(key, capacity);
                self.adjacency.entry(x).or_default().push((y, chain));
                self.adjacency.entry(y).or_default().push((x, chain));
            }
        }
    }

    pub fn set_quotes(&mut self, node: NodeId, quotes: Vec<RateQuote>) {
        self.quotes.insert(node, quotes);
    }

    pub fn quote(&self, node: NodeId, asset_in: AssetId, asset_out: AssetId) -> Option<&RateQuote> {
        self.quotes.get(&node)?.iter().find(|q| q.asset_in == asset_in && q.asset_out == asset_out)
    }

    pub fn capacity(&self, chain: ChainId, x: NodeId, y: NodeId) -> Option<u64> {
        self.edges.get(&EdgeKey::new(chain, x, y)).copied()
    }

    pub fn neighbors(&self, node: NodeId) -> &[(NodeId, ChainId)] {
        self.adjacency.get(&node).map_or(&[], Vec::as_slice)
    }

    pub fn edges(&self) -> impl Iterator<Item = (&EdgeKey, &u64)> {
        self.edges.iter()
    }
}

/// Cheapest admissible route delivering `amount_out` of `asset_out` to
/// `recipient`. With `hash_fn` set, every chain must support it.
pub fn find_route(
    graph: &Graph,
    sender: NodeId,
    recipient: NodeId,
    amount_out: u64,
    asset_out: AssetId,
    hash_fn: Option<HashFnId>,
) -> Result<Route, RoutingError> {
    if amount_out == 0 || sender == recipient {
        return Err(RoutingError::NoRoute);
    }
    let mut search = Search { graph, sender, best: None };
    let mut visited = vec![recipient];
    let mut hops = Vec::new();
    for &(u, chain) in graph.neighbors(recipient) {
        let Some(info) = graph.chain(chain) else { continue };
        if info.asset != asset_out || graph.capacity(chain, u, recipient).unwrap_or(0) < amount_out {
            continue;
        }
        let fns: Vec<HashFnId> = info.hash_fns.iter().copied().filter(|f| hash_fn.is_none_or(|h| h == *f)).collect();
        if fns.is_empty() {
            continue;
        }
        hops.push(HopSpec {
            node: recipient,
            chain,
            asset: asset_out,
            amount: amount_out,
            fee: 0,
            expiry_delta: 0,
            quote: None,
        });
        search.extend(u, &mut hops, &mut visited, &fns);
        hops.pop();
    }
    let mut route = search.best.ok_or(RoutingError::NoRoute)?;
    route.apply_policy(&TimelockPolicy::default());
    Ok(route)
}

struct Search<'a> {
    graph: &'a Graph,
    sender: NodeId,
    best: Option<Route>,
}

impl Search<'_> {
    /// `hops` holds the route from `u` to the recipient, last element first.
    fn extend(&mut self, u: NodeId, hops: &mut Vec<HopSpec>, visited: &mut Vec<NodeId>, fns: &[HashFnId]) {
        if u == self.sender {
            let route = Route { sender: u, hops: hops.iter().rev().cloned().collect(), hash_fns: fns.to_vec() };
            if self.best.as_ref().is_none_or(|b| route.sort_key() < b.sort_key()) {
                self.best = Some(route);
            }
            return;
        }
        if hops.len() >= MAX_ROUTE_HOPS || visited.contains(&u) {
            return;
        }
        let (out_asset, out_amount) = {
            let next = hops.last().expect("at least the final hop");
            (next.asset, next.amount)
        };
        visited.push(u);
        for &(w, chain) in self.graph.neighbors(u) {
            if visited.contains(&w) {
                continue;
            }
            let Some(info) = self.graph.chain(chain) else { continue };
            let Some(quote) = self.graph.quote(u, info.asset, out_asset) else { continue };
            let Ok((amount, fee)) = quote.amount_in_for(out_amount) else { continue };
            if self.graph.capacity(chain, w, u).unwrap_or(0) < amount {
                continue;
            }
            let narrowed: Vec<HashFnId> = fns.iter().copied().filter(|f| info.hash_fns.contains(f)).collect();
            if narrowed.is_empty() {
                continue;
            }
            hops.push(HopSpec { node: u, chain, asset: info.asset, amount, fee, expiry_delta: 0, quote: Some(*quote) });
            self.extend(w, hops, visited, &narrowed);
            hops.pop();
        }
        visited.pop();
    }
}
