use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::chainlab::{AssetId, Hash256, HashFnId};
use crate::crp::NodeId;

/// A payment request. The secret stays with the recipient until it
/// fulfils its incoming HTLC.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invoice {
    #[serde(with = "hex::serde")]
    pub secret: [u8; 32],
    #[serde(with = "hex::serde")]
    pub payment_hash: Hash256,
    pub hash_fn: HashFnId,
    pub amount: u64,
    pub asset: AssetId,
    pub recipient: NodeId,
}

impl Invoice {
    /// The invoice with its secret removed, as handed to the sender.
    pub fn public(&self) -> Invoice {
        Invoice { secret: [0; 32], ..self.clone() }
    }
}

pub fn make_invoice(
    recipient: NodeId,
    amount: u64,
    asset: AssetId,
    hash_fn: HashFnId,
    rng: &mut impl RngCore,
) -> Invoice {
    let mut secret = [0u8; 32];
    rng.fill_bytes(&mut secret);
    Invoice { secret, payment_hash: hash_fn.digest(&secret), hash_fn, amount, asset, recipient }
}
