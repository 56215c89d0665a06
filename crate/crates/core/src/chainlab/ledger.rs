use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use super::encode::{Encode, Encoder};
use super::hash::sha256;
use super::keys::{KeyPair, KeyRegistry, PubKey};
use super::script::{verify_script, Script, ScriptContext, Witness};
use super::tx::{Outpoint, Transaction, TxIn, TxOut, Txid};
use super::{ChainError, ChainParams};

/// Height used to decide whether a failing spend could ever become valid.
const FAR_FUTURE: u64 = u64::MAX / 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utxo {
    pub amount: u64,
    pub script: Script,
    pub confirmation_height: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfirmedTx {
    pub tx: Transaction,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("conflict: {0} already spent")]
    Conflict(Outpoint),
    #[error("unknown outpoint {0}")]
    UnknownOutpoint(Outpoint),
    #[error("invalid witness on input {0}")]
    InvalidWitness(usize),
    #[error("time lock on input {0} not yet met")]
    LocktimeNotMet(usize),
    #[error("value overflow")]
    ValueOverflow,
    #[error("outputs ({outputs}) exceed inputs ({inputs})")]
    InsufficientValue { inputs: u64, outputs: u64 },
    #[error("fee {paid} below the chain's flat fee {required}")]
    FeeTooLow { paid: u64, required: u64 },
    #[error("malformed transaction: {0}")]
    Malformed(&'static str),
}

impl Rejection {
    pub fn kind(&self) -> &'static str {
        match self {
            Rejection::Conflict(_) => "conflict",
            Rejection::UnknownOutpoint(_) => "unknown-outpoint",
            Rejection::InvalidWitness(_) => "invalid-witness",
            Rejection::LocktimeNotMet(_) => "locktime-not-met",
            Rejection::ValueOverflow => "value-overflow",
            Rejection::InsufficientValue { .. } => "insufficient-value",
            Rejection::FeeTooLow { .. } => "fee-too-low",
            Rejection::Malformed(_) => "malformed",
        }
    }
}

#[derive(Clone, Debug)]
struct MempoolEntry {
    tx: Transaction,
    fee: u64,
}

/// A simulated UTXO chain: confirmed outputs, a FIFO mempool and a block height.
#[derive(Clone, Debug)]
pub struct Ledger {
    params: ChainParams,
    height: u64,
    utxos: BTreeMap<Outpoint, Utxo>,
    mempool_order: Vec<Txid>,
    mempool: HashMap<Txid, MempoolEntry>,
    mempool_spends: HashMap<Outpoint, Txid>,
    spent: HashMap<Outpoint, Txid>,
    confirmed: HashMap<Txid, ConfirmedTx>,
    confirmed_order: Vec<Txid>,
    genesis_txid: Txid,
    genesis_total: u64,
    burned: u64,
    evicted: usize,
    keys: KeyRegistry,
}

impl Ledger {
    /// Creates a chain whose genesis outputs are confirmed at `start_height`.
    pub fn new(params: ChainParams, start_height: u64, allocations: Vec<TxOut>) -> Result<Self, ChainError> {
        params.validate()?;
        for out in &allocations {
            out.script.validate()?;
        }
        let genesis = Transaction { inputs: Vec::new(), outputs: allocations, locktime: 0 };
        let genesis_total = genesis.output_total().ok_or(ChainError::ValueOverflow)?;
        let mut enc = Encoder::new();
        enc.fixed(b"genesis").u32(params.chain_id.0);
        genesis.encode(&mut enc);
        let genesis_txid = Txid(sha256(&enc.finish()));

        let utxos = genesis
            .outputs
            .iter()
            .enumerate()
            .map(|(i, out)| {
                let utxo = Utxo { amount: out.amount, script: out.script.clone(), confirmation_height: start_height };
                (Outpoint::new(genesis_txid, i as u32), utxo)
            })
            .collect();

        Ok(Ledger {
            params,
            height: start_height,
            utxos,
            mempool_order: Vec::new(),
            mempool: HashMap::new(),
            mempool_spends: HashMap::new(),
            spent: HashMap::new(),
            confirmed: HashMap::new(),
            confirmed_order: Vec::new(),
            genesis_txid,
            genesis_total,
            burned: 0,
            evicted: 0,
            keys: KeyRegistry::new(),
        })
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn register_key(&mut self, key: &KeyPair) {
        self.keys.register(key);
    }

    pub fn set_key_registry(&mut self, keys: KeyRegistry) {
        self.keys = keys;
    }

    pub fn keys(&self) -> &KeyRegistry {
        &self.keys
    }

    pub fn genesis_txid(&self) -> Txid {
        self.genesis_txid
    }

    pub fn genesis_total(&self) -> u64 {
        self.genesis_total
    }

    /// Fees paid by confirmed transactions; they leave circulation.
    pub fn burned(&self) -> u64 {
        self.burned
    }

    pub fn utxo_total(&self) -> u64 {
        self.utxos.values().map(|u| u.amount).sum()
    }

    pub fn utxo(&self, outpoint: &Outpoint) -> Option<&Utxo> {
        self.utxos.get(outpoint)
    }

    pub fn utxos(&self) -> impl Iterator<Item = (&Outpoint, &Utxo)> {
        self.utxos.iter()
    }

    /// Confirmed `PayToKey(owner)` outputs not already spent in the mempool.
    pub fn spendable_by(&self, owner: PubKey) -> Vec<(Outpoint, u64)> {
        self.utxos
            .iter()
            .filter(|(op, u)| u.script.pay_to() == Some(owner) && !self.mempool_spends.contains_key(op))
            .map(|(op, u)| (*op, u.amount))
            .collect()
    }

    pub fn balance_of(&self, owner: PubKey) -> u64 {
        self.utxos.values().filter(|u| u.script.pay_to() == Some(owner)).map(|u| u.amount).sum()
    }

    pub fn mempool_len(&self) -> usize {
        self.mempool_order.len()
    }

    pub fn in_mempool(&self, txid: &Txid) -> bool {
        self.mempool.contains_key(txid)
    }

    pub fn mempool_spender(&self, outpoint: &Outpoint) -> Option<Txid> {
        self.mempool_spends.get(outpoint).copied()
    }

    pub fn mempool_tx(&self, txid: &Txid) -> Option<&Transaction> {
        self.mempool.get(txid).map(|e| &e.tx)
    }

    pub fn confirmed_tx(&self, txid: &Txid) -> Option<&ConfirmedTx> {
        self.confirmed.get(txid)
    }

    pub fn is_confirmed(&self, txid: &Txid) -> bool {
        self.confirmed.contains_key(txid)
    }

    /// Confirmed transactions in confirmation order (genesis excluded).
    pub fn confirmed_txs(&self) -> impl Iterator<Item = &ConfirmedTx> {
        self.confirmed_order.iter().map(|id| &self.confirmed[id])
    }

    pub fn confirmed_count(&self) -> usize {
        self.confirmed_order.len()
    }

    pub fn evicted_count(&self) -> usize {
        self.evicted
    }

    /// The confirmed transaction that consumed `outpoint`, if any.
    pub fn spending_tx(&self, outpoint: &Outpoint) -> Option<&ConfirmedTx> {
        self.spent.get(outpoint).map(|id| &self.confirmed[id])
    }

    pub fn is_spent(&self, outpoint: &Outpoint) -> bool {
        self.spent.contains_key(outpoint)
    }

    pub fn submit_tx(&mut self, tx: Transaction) -> Result<Txid, Rejection> {
        if tx.inputs.is_empty() {
            return Err(Rejection::Malformed("no inputs"));
        }
        if tx.outputs.is_empty() {
            return Err(Rejection::Malformed("no outputs"));
        }
        for (i, input) in tx.inputs.iter().enumerate() {
            if tx.inputs[..i].iter().any(|other| other.outpoint == input.outpoint) {
                return Err(Rejection::Malformed("duplicate input"));
            }
        }
        if tx.outputs.iter().any(|o| o.script.validate().is_err()) {
            return Err(Rejection::Malformed("invalid output script"));
        }

        let earliest = (self.height + 1).max(tx.locktime);
        let digest = tx.sighash();
        let mut replaced = Vec::new();
        let mut input_total = 0u64;
        for (i, input) in tx.inputs.iter().enumerate() {
            let (amount, script, conf) = match self.prevout_for_submission(&input.outpoint) {
                Err(Rejection::Conflict(op)) => {
                    let rival = self.replaceable_spender(&op).ok_or(Rejection::Conflict(op))?;
                    replaced.push(rival);
                    self.prevout_ignoring_mempool_spend(&op).ok_or(Rejection::Conflict(op))?
                }
                other => other?,
            };
            input_total = input_total.checked_add(amount).ok_or(Rejection::ValueOverflow)?;
            let conf = conf.unwrap_or(earliest);
            if !self.check_input(&script, &input.witness, earliest, conf, digest) {
                return Err(if self.check_input(&script, &input.witness, FAR_FUTURE, conf, digest) {
                    Rejection::LocktimeNotMet(i)
                } else {
                    Rejection::InvalidWitness(i)
                });
            }
        }
        let output_total = tx.output_total().ok_or(Rejection::ValueOverflow)?;
        if output_total > input_total {
            return Err(Rejection::InsufficientValue { inputs: input_total, outputs: output_total });
        }
        let fee = input_total - output_total;
        if fee < self.params.tx_fee {
            return Err(Rejection::FeeTooLow { paid: fee, required: self.params.tx_fee });
        }

        if !replaced.is_empty() {
            // Only a transaction that can go into the very next block may
            // displace time-locked spends still waiting in the mempool.
            if earliest != self.height + 1 {
                return Err(Rejection::Conflict(tx.inputs[0].outpoint));
            }
            for rival in replaced {
                self.evict_with_descendants(rival);
            }
        }

        let txid = tx.txid();
        for input in &tx.inputs {
            self.mempool_spends.insert(input.outpoint, txid);
        }
        self.mempool_order.push(txid);
        self.mempool.insert(txid, MempoolEntry { tx, fee });
        Ok(txid)
    }

    fn prevout_for_submission(&self, op: &Outpoint) -> Result<(u64, Script, Option<u64>), Rejection> {
        if self.mempool_spends.contains_key(op) || self.spent.contains_key(op) {
            return Err(Rejection::Conflict(*op));
        }
        if let Some(u) = self.utxos.get(op) {
            return Ok((u.amount, u.script.clone(), Some(u.confirmation_height)));
        }
        if let Some(parent) = self.mempool.get(&op.txid) {
            if let Some(out) = parent.tx.outputs.get(op.index as usize) {
                return Ok((out.amount, out.script.clone(), None));
            }
        }
        Err(Rejection::UnknownOutpoint(*op))
    }

    /// A mempool spender of `op` that cannot be confirmed in the next block.
    fn replaceable_spender(&self, op: &Outpoint) -> Option<Txid> {
        let rival = *self.mempool_spends.get(op)?;
        let entry = &self.mempool[&rival];
        let next = self.height + 1;
        if entry.tx.locktime > next {
            return Some(rival);
        }
        let digest = entry.tx.sighash();
        let blocked = entry.tx.inputs.iter().any(|input| match self.utxos.get(&input.outpoint) {
            Some(u) => !self.check_input(&u.script, &input.witness, next, u.confirmation_height, digest),
            None => false,
        });
        blocked.then_some(rival)
    }

    fn prevout_ignoring_mempool_spend(&self, op: &Outpoint) -> Option<(u64, Script, Option<u64>)> {
        if self.spent.contains_key(op) {
            return None;
        }
        if let Some(u) = self.utxos.get(op) {
            return Some((u.amount, u.script.clone(), Some(u.confirmation_height)));
        }
        let parent = self.mempool.get(&op.txid)?;
        let out = parent.tx.outputs.get(op.index as usize)?;
        Some((out.amount, out.script.clone(), None))
    }

    fn evict_with_descendants(&mut self, root: Txid) {
        let mut stack = vec![root];
        while let Some(txid) = stack.pop() {
            let Some(entry) = self.mempool.get(&txid) else { continue };
            for index in 0..entry.tx.outputs.len() {
                if let Some(child) = self.mempool_spends.get(&Outpoint::new(txid, index as u32)) {
                    stack.push(*child);
                }
            }
            self.evict(txid);
            self.mempool_order.retain(|id| *id != txid);
        }
    }

    fn check_input(&self, script: &Script, witness: &Witness, height: u64, conf: u64, digest: [u8; 32]) -> bool {
        let ctx = ScriptContext {
            current_height: height,
            input_confirmation_height: conf.min(height),
            tx_digest: digest,
            keys: &self.keys,
        };
        verify_script(script, witness, &ctx)
    }

    /// Mines `n` blocks, confirming eligible mempool transactions in
    /// submission order into the first block that accepts them.
    pub fn mine_blocks(&mut self, n: u64) -> u64 {
        for _ in 0..n {
            self.height += 1;
            self.mine_one();
        }
        self.height
    }

    fn mine_one(&mut self) {
        let height = self.height;
        let order = std::mem::take(&mut self.mempool_order);
        let mut pending = Vec::with_capacity(order.len());
        for txid in order {
            match self.classify(&txid, height) {
                Eligibility::Confirm => self.confirm(txid, height),
                Eligibility::Wait => pending.push(txid),
                Eligibility::Evict => self.evict(txid),
            }
        }
        self.mempool_order = pending;
    }

    fn classify(&self, txid: &Txid, height: u64) -> Eligibility {
        let entry = &self.mempool[txid];
        let digest = entry.tx.sighash();
        let mut waiting = entry.tx.locktime > height;
        let mut all_valid_now = true;
        for input in &entry.tx.inputs {
            let TxIn { outpoint, witness } = input;
            let Some(utxo) = self.utxos.get(outpoint) else {
                if self.mempool.contains_key(&outpoint.txid) {
                    waiting = true;
                    continue;
                }
                return Eligibility::Evict;
            };
            if !self.check_input(&utxo.script, witness, height, utxo.confirmation_height, digest) {
                if !self.check_input(&utxo.script, witness, FAR_FUTURE, utxo.confirmation_height, digest) {
                    return Eligibility::Evict;
                }
                all_valid_now = false;
            }
        }
        if waiting || !all_valid_now {
            Eligibility::Wait
        } else {
            Eligibility::Confirm
        }
    }

    fn confirm(&mut self, txid: Txid, height: u64) {
        let MempoolEntry { tx, fee } = self.mempool.remove(&txid).expect("mempool entry");
        for input in &tx.inputs {
            self.utxos.remove(&input.outpoint);
            self.mempool_spends.remove(&input.outpoint);
            self.spent.insert(input.outpoint, txid);
        }
        for (i, out) in tx.outputs.iter().enumerate() {
            let utxo = Utxo { amount: out.amount, script: out.script.clone(), confirmation_height: height };
            self.utxos.insert(Outpoint::new(txid, i as u32), utxo);
        }
        self.burned += fee;
        self.confirmed.insert(txid, ConfirmedTx { tx, height });
        self.confirmed_order.push(txid);
    }

    fn evict(&mut self, txid: Txid) {
        if let Some(entry) = self.mempool.remove(&txid) {
            for input in &entry.tx.inputs {
                if self.mempool_spends.get(&input.outpoint) == Some(&txid) {
                    self.mempool_spends.remove(&input.outpoint);
                }
            }
            self.evicted += 1;
        }
    }
}

enum Eligibility {
    Confirm,
    Wait,
    Evict,
}
