//! Simulated UTXO chains with the four primitives cross-chain payments rely on:
//! double-spend protection, 2-of-2 multisig, absolute/relative time-locks and
//! hash-locks.
//!
//! Heights are block heights throughout; there is no wall-clock time.

mod encode;
mod hash;
mod keys;
mod ledger;
mod script;
mod tx;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encode::{Encode, Encoder};
pub use hash::{hash_digest, Hash256, HashFnId};
pub use keys::{KeyPair, KeyRegistry, PubKey, Signature};
pub use ledger::{ConfirmedTx, Ledger, Rejection, Utxo};
pub use script::{verify_script, Script, ScriptContext, Witness, MAX_OR_DEPTH};
pub use tx::{Outpoint, Transaction, TxIn, TxOut, Txid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChainId(pub u32);

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "chain#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssetId(pub u32);

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "asset#{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainParams {
    pub chain_id: ChainId,
    /// The chain's single native asset.
    pub asset_id: AssetId,
    pub hash_fns: Vec<HashFnId>,
    /// Simulated ticks per block. Informational; mining is scheduled by the caller.
    pub block_interval: u64,
    /// Flat fee every transaction must leave unclaimed.
    pub tx_fee: u64,
}

impl ChainParams {
    pub fn new(chain_id: ChainId, asset_id: AssetId, hash_fns: Vec<HashFnId>) -> Self {
        ChainParams { chain_id, asset_id, hash_fns, block_interval: 1, tx_fee: 0 }
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if self.hash_fns.is_empty() {
            return Err(ChainError::InvalidParams("hash_fns must be non-empty"));
        }
        if self.block_interval == 0 {
            return Err(ChainError::InvalidParams("block_interval must be >= 1"));
        }
        Ok(())
    }

    pub fn supports(&self, hash_fn: HashFnId) -> bool {
        self.hash_fns.contains(&hash_fn)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("unknown hash function: {0}")]
    UnknownHashFunction(String),
    #[error("invalid script: {0}")]
    InvalidScript(&'static str),
    #[error("invalid chain parameters: {0}")]
    InvalidParams(&'static str),
    #[error("insufficient funds: need {needed}, have {available}")]
    InsufficientFunds { needed: u64, available: u64 },
    #[error("value overflow")]
    ValueOverflow,
    #[error("transaction rejected: {0}")]
    Rejected(#[from] Rejection),
}

/// Picks confirmed `PayToKey(owner)` outputs (in outpoint order) until they
/// cover `target`.
pub fn select_coins(ledger: &Ledger, owner: PubKey, target: u64) -> Result<(Vec<Outpoint>, u64), ChainError> {
    let mut picked = Vec::new();
    let mut total = 0u64;
    for (op, amount) in ledger.spendable_by(owner) {
        if total >= target && !picked.is_empty() {
            break;
        }
        picked.push(op);
        total = total.checked_add(amount).ok_or(ChainError::ValueOverflow)?;
    }
    if total < target || picked.is_empty() {
        return Err(ChainError::InsufficientFunds { needed: target, available: total });
    }
    Ok((picked, total))
}

/// Pays `outputs` from `payer`'s coins, returning change to the payer and
/// leaving the chain's flat fee. The transaction is signed but not submitted.
pub fn build_payment(ledger: &Ledger, payer: &KeyPair, outputs: Vec<TxOut>) -> Result<Transaction, ChainError> {
    let out_total =
        outputs.iter().try_fold(0u64, |acc, o| acc.checked_add(o.amount)).ok_or(ChainError::ValueOverflow)?;
    let fee = ledger.params().tx_fee;
    let needed = out_total.checked_add(fee).ok_or(ChainError::ValueOverflow)?;
    let (coins, total) = select_coins(ledger, payer.public(), needed)?;
    let mut outputs = outputs;
    if total > needed {
        outputs.push(TxOut { amount: total - needed, script: Script::PayToKey(payer.public()) });
    }
    let mut tx = Transaction::unsigned(&coins, outputs, 0);
    sign_all_inputs(&mut tx, &[payer]);
    Ok(tx)
}

/// Sets every input's witness to signatures from `signers` (no preimages,
/// no branch selection).
pub fn sign_all_inputs(tx: &mut Transaction, signers: &[&KeyPair]) {
    let digest = tx.sighash();
    let sigs: Vec<Signature> = signers.iter().map(|k| k.sign(&digest)).collect();
    for input in &mut tx.inputs {
        input.witness = Witness::signed(sigs.iter().copied());
    }
}
