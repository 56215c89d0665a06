//! Helpers shared by integration tests.
#![allow(dead_code)]

pub mod channel;
pub mod checks;
pub mod oracle;

use comit_core::chainlab::{AssetId, ChainId, ChainParams, HashFnId, KeyPair, Ledger, Script, TxOut};
use comit_core::crp::{NodeId, NodeKey};
use comit_core::swap::Network;

pub struct ChainSpec {
    pub id: u32,
    pub asset: u32,
    pub fee: u64,
    pub start: u64,
    pub hash_fns: Vec<HashFnId>,
}

impl ChainSpec {
    pub fn new(id: u32, asset: u32, start: u64) -> Self {
        ChainSpec { id, asset, fee: 0, start, hash_fns: vec![HashFnId::Sha256, HashFnId::Sha3_256] }
    }

    pub fn with_fee(mut self, fee: u64) -> Self {
        self.fee = fee;
        self
    }
}

pub fn keys(name: &str) -> (NodeKey, KeyPair) {
    (NodeKey::from_seed(format!("node/{name}").as_bytes()), KeyPair::from_seed(format!("wallet/{name}").as_bytes()))
}

/// A network where every named node holds `endowment` on every chain.
pub fn network(chains: &[ChainSpec], names: &[&str], endowment: u64) -> (Network, Vec<NodeId>) {
    let nodes: Vec<(NodeKey, KeyPair)> = names.iter().map(|n| keys(n)).collect();
    let mut net = Network::new();
    for c in chains {
        let mut params = ChainParams::new(ChainId(c.id), AssetId(c.asset), c.hash_fns.clone());
        params.tx_fee = c.fee;
        let allocations =
            nodes.iter().map(|(_, w)| TxOut { amount: endowment, script: Script::PayToKey(w.public()) }).collect();
        net.add_ledger(Ledger::new(params, c.start, allocations).expect("valid chain"));
    }
    let ids = nodes.into_iter().map(|(n, w)| net.add_participant(n, w)).collect();
    (net, ids)
}
