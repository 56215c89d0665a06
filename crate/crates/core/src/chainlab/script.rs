use serde::{Deserialize, Serialize};

use super::encode::{Encode, Encoder};
use super::hash::{Hash256, HashFnId};
use super::keys::{KeyRegistry, PubKey, Signature};
use super::ChainError;

/// Maximum nesting of `Or` combinators.
pub const MAX_OR_DEPTH: usize = 2;

/// Spending conditions attached to a transaction output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Script {
    PayToKey(PubKey),
    Multisig2of2(PubKey, PubKey),
    HashLock {
        hash_fn: HashFnId,
        hash: Hash256,
        claim: PubKey,
    },
    TimeLockAbs {
        unlock_height: u64,
        key: PubKey,
    },
    TimeLockRel {
        delta_blocks: u64,
        key: PubKey,
    },
    /// Claimable with the preimage strictly before `refund_height`,
    /// refundable from `refund_height` on.
    Htlc {
        hash_fn: HashFnId,
        hash: Hash256,
        claim: PubKey,
        refund: PubKey,
        refund_height: u64,
    },
    /// Either branch; the witness selects a leaf of the `Or` tree.
    Or(Box<Script>, Box<Script>),
    /// Both conditions over the same witness. Children must be leaves.
    And(Box<Script>, Box<Script>),
}

impl Script {
    pub fn or(a: Script, b: Script) -> Script {
        Script::Or(Box::new(a), Box::new(b))
    }

    pub fn and(a: Script, b: Script) -> Script {
        Script::And(Box::new(a), Box::new(b))
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if self.or_depth() > MAX_OR_DEPTH {
            return Err(ChainError::InvalidScript("Or nesting deeper than 2"));
        }
        self.validate_nodes()
    }

    fn validate_nodes(&self) -> Result<(), ChainError> {
        match self {
            Script::Htlc { refund_height: 0, .. } => Err(ChainError::InvalidScript("Htlc refund_height must be > 0")),
            Script::Or(a, b) => {
                a.validate_nodes()?;
                b.validate_nodes()
            }
            Script::And(a, b) => {
                if a.is_combinator() || b.is_combinator() {
                    return Err(ChainError::InvalidScript("And children must be leaf scripts"));
                }
                a.validate_nodes()?;
                b.validate_nodes()
            }
            _ => Ok(()),
        }
    }

    fn is_combinator(&self) -> bool {
        matches!(self, Script::Or(..) | Script::And(..))
    }

    pub fn or_depth(&self) -> usize {
        match self {
            Script::Or(a, b) => 1 + a.or_depth().max(b.or_depth()),
            Script::And(a, b) => a.or_depth().max(b.or_depth()),
            _ => 0,
        }
    }

    /// The branches a witness may select, in left-to-right order.
    pub fn leaves(&self) -> Vec<&Script> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a Script>) {
        match self {
            Script::Or(a, b) => {
                a.collect_leaves(out);
                b.collect_leaves(out);
            }
            leaf => out.push(leaf),
        }
    }

    /// The single key that can spend this output unconditionally, if any.
    pub fn pay_to(&self) -> Option<PubKey> {
        match self {
            Script::PayToKey(k) => Some(*k),
            _ => None,
        }
    }
}

impl Encode for Script {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Script::PayToKey(k) => {
                enc.u8(0).fixed(&k.0);
            }
            Script::Multisig2of2(a, b) => {
                enc.u8(1).fixed(&a.0).fixed(&b.0);
            }
            Script::HashLock { hash_fn, hash, claim } => {
                enc.u8(2).u8(hash_fn.code()).fixed(hash).fixed(&claim.0);
            }
            Script::TimeLockAbs { unlock_height, key } => {
                enc.u8(3).u64(*unlock_height).fixed(&key.0);
            }
            Script::TimeLockRel { delta_blocks, key } => {
                enc.u8(4).u64(*delta_blocks).fixed(&key.0);
            }
            Script::Htlc { hash_fn, hash, claim, refund, refund_height } => {
                enc.u8(5).u8(hash_fn.code()).fixed(hash).fixed(&claim.0).fixed(&refund.0).u64(*refund_height);
            }
            Script::Or(a, b) => {
                enc.u8(6);
                a.encode(enc);
                b.encode(enc);
            }
            Script::And(a, b) => {
                enc.u8(7);
                a.encode(enc);
                b.encode(enc);
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub signatures: Vec<Signature>,
    pub preimages: Vec<Vec<u8>>,
    /// Leaf index into an `Or` tree (see [`Script::leaves`]).
    pub branch_selector: Option<u8>,
}

impl Witness {
    pub fn signed(sigs: impl IntoIterator<Item = Signature>) -> Self {
        Witness { signatures: sigs.into_iter().collect(), ..Default::default() }
    }

    pub fn with_preimage(mut self, preimage: impl Into<Vec<u8>>) -> Self {
        self.preimages.push(preimage.into());
        self
    }

    pub fn with_branch(mut self, leaf: u8) -> Self {
        self.branch_selector = Some(leaf);
        self
    }
}

impl Encode for Witness {
    fn encode(&self, enc: &mut Encoder) {
        enc.len(self.signatures.len());
        for s in &self.signatures {
            enc.fixed(&s.signer.0).fixed(&s.tag);
        }
        enc.len(self.preimages.len());
        for p in &self.preimages {
            enc.var_bytes(p);
        }
        match self.branch_selector {
            None => enc.u8(0),
            Some(i) => enc.u8(1).u8(i),
        };
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ScriptContext<'a> {
    pub current_height: u64,
    pub input_confirmation_height: u64,
    pub tx_digest: Hash256,
    pub keys: &'a KeyRegistry,
}

/// Pure predicate: does `witness` satisfy `script` in `ctx`?
pub fn verify_script(script: &Script, witness: &Witness, ctx: &ScriptContext<'_>) -> bool {
    if script.validate().is_err() || ctx.input_confirmation_height > ctx.current_height {
        return false;
    }
    match script {
        Script::Or(..) => {
            let leaves = script.leaves();
            match witness.branch_selector {
                Some(i) => leaves.get(i as usize).is_some_and(|leaf| verify_leaf(leaf, witness, ctx)),
                None => false,
            }
        }
        leaf => verify_leaf(leaf, witness, ctx),
    }
}

fn verify_leaf(script: &Script, w: &Witness, ctx: &ScriptContext<'_>) -> bool {
    let signed_by = |key: &PubKey| w.signatures.iter().any(|s| s.signer == *key && ctx.keys.verify(s, &ctx.tx_digest));
    let knows_preimage = |f: &HashFnId, h: &Hash256| w.preimages.iter().any(|p| f.digest(p) == *h);
    let height = ctx.current_height;

    match script {
        Script::PayToKey(k) => signed_by(k),
        Script::Multisig2of2(a, b) => signed_by(a) && signed_by(b),
        Script::HashLock { hash_fn, hash, claim } => knows_preimage(hash_fn, hash) && signed_by(claim),
        Script::TimeLockAbs { unlock_height, key } => height >= *unlock_height && signed_by(key),
        Script::TimeLockRel { delta_blocks, key } => {
            ctx.input_confirmation_height.checked_add(*delta_blocks).is_some_and(|mature| height >= mature)
                && signed_by(key)
        }
        Script::Htlc { hash_fn, hash, claim, refund, refund_height } => {
            if w.preimages.is_empty() {
                height >= *refund_height && signed_by(refund)
            } else {
                height < *refund_height && knows_preimage(hash_fn, hash) && signed_by(claim)
            }
        }
        Script::And(a, b) => verify_leaf(a, w, ctx) && verify_leaf(b, w, ctx),
        Script::Or(..) => false,
    }
}
