use std::fmt;

use serde::{Deserialize, Serialize};

use super::encode::{Encode, Encoder};
use super::hash::{sha256, Hash256};
use super::script::{Script, Witness};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Txid(pub Hash256);

impl fmt::Debug for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Txid({})", hex::encode(&self.0[..6]))
    }
}

impl fmt::Display for Txid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Outpoint {
    pub txid: Txid,
    pub index: u32,
}

impl Outpoint {
    pub fn new(txid: Txid, index: u32) -> Self {
        Outpoint { txid, index }
    }
}

impl fmt::Display for Outpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", hex::encode(&self.txid.0[..8]), self.index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxIn {
    pub outpoint: Outpoint,
    pub witness: Witness,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOut {
    pub amount: u64,
    pub script: Script,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub inputs: Vec<TxIn>,
    pub outputs: Vec<TxOut>,
    /// Earliest block height this transaction may be confirmed in; 0 = none.
    pub locktime: u64,
}

impl Transaction {
    /// Builds an unsigned transaction; witnesses are filled in after signing.
    pub fn unsigned(outpoints: &[Outpoint], outputs: Vec<TxOut>, locktime: u64) -> Self {
        Transaction {
            inputs: outpoints.iter().map(|&outpoint| TxIn { outpoint, witness: Witness::default() }).collect(),
            outputs,
            locktime,
        }
    }

    /// Digest of the witness-stripped serialization. Used both as the
    /// transaction id and as the message every signature commits to.
    pub fn txid(&self) -> Txid {
        Txid(sha256(&self.to_canonical_bytes()))
    }

    pub fn sighash(&self) -> Hash256 {
        self.txid().0
    }

    pub fn outpoint(&self, index: u32) -> Outpoint {
        Outpoint::new(self.txid(), index)
    }

    pub fn output_total(&self) -> Option<u64> {
        self.outputs.iter().try_fold(0u64, |acc, o| acc.checked_add(o.amount))
    }

    /// Full serialization including witnesses.
    pub fn to_bytes_with_witness(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode(&mut enc);
        enc.len(self.inputs.len());
        for input in &self.inputs {
            input.witness.encode(&mut enc);
        }
        enc.finish()
    }
}

impl Encode for Transaction {
    fn encode(&self, enc: &mut Encoder) {
        enc.len(self.inputs.len());
        for input in &self.inputs {
            enc.fixed(&input.outpoint.txid.0).u32(input.outpoint.index);
        }
        enc.len(self.outputs.len());
        for output in &self.outputs {
            enc.u64(output.amount);
            output.script.encode(enc);
        }
        enc.u64(self.locktime);
    }
}
