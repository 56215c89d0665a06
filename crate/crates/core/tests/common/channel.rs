//! A two-party channel on a fresh ledger, driven by a list of operations.

use std::collections::HashMap;

use comit_core::chainlab::{
    verify_script, AssetId, ChainId, ChainParams, HashFnId, KeyPair, Ledger, Script, ScriptContext, TxOut,
};
use comit_core::channels::{open_channel, Channel, ChannelConfig, Direction, Party};
use proptest::prelude::*;
use rand::Rng;

pub const FUNDING: u64 = 10_000;

#[derive(Clone, Debug)]
pub enum Op {
    Add { a_to_b: bool, amount: u64 },
    Fulfill(usize),
    Fail(usize),
}

pub fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (any::<bool>(), 1u64..3_000).prop_map(|(a_to_b, amount)| Op::Add { a_to_b, amount }),
        (0usize..8).prop_map(Op::Fulfill),
        (0usize..8).prop_map(Op::Fail),
    ]
}

pub fn random_op(rng: &mut impl Rng) -> Op {
    match rng.gen_range(0..3) {
        0 => Op::Add { a_to_b: rng.gen(), amount: rng.gen_range(1..3_000) },
        1 => Op::Fulfill(rng.gen_range(0..8)),
        _ => Op::Fail(rng.gen_range(0..8)),
    }
}

pub struct Fixture {
    pub ledger: Ledger,
    pub channel: Channel,
    preimages: HashMap<u64, Vec<u8>>,
}

pub fn fixture(csv_delay: u64) -> Fixture {
    let a = KeyPair::from_seed(b"prop-a");
    let b = KeyPair::from_seed(b"prop-b");
    let params = ChainParams::new(ChainId(7), AssetId(7), vec![HashFnId::Sha3_256, HashFnId::Sha256]);
    let mut ledger = Ledger::new(
        params,
        1_000,
        vec![
            TxOut { amount: FUNDING / 2, script: Script::PayToKey(a.public()) },
            TxOut { amount: FUNDING / 2, script: Script::PayToKey(b.public()) },
        ],
    )
    .unwrap();
    ledger.register_key(&a);
    ledger.register_key(&b);
    let config = ChannelConfig { csv_delay, dust_limit: 0 };
    let channel = open_channel(&mut ledger, &a, &b, FUNDING / 2, FUNDING / 2, config).unwrap();
    Fixture { ledger, channel, preimages: HashMap::new() }
}

/// Applies the ops that are valid in the current state; invalid ones are
/// skipped. Returns the number of updates performed.
pub fn run(f: &mut Fixture, ops: &[Op]) -> usize {
    let height = f.ledger.height();
    let mut updates = 0;
    for op in ops {
        let pending: Vec<u64> = f.channel.pending_htlcs().iter().map(|h| h.id).collect();
        let result = match op {
            Op::Add { a_to_b, amount } => {
                let dir = if *a_to_b { Direction::AToB } else { Direction::BToA };
                let preimage = format!("preimage-{}", f.preimages.len()).into_bytes();
                let hash = HashFnId::Sha256.digest(&preimage);
                f.channel.add_htlc(dir, *amount, HashFnId::Sha256, hash, height + 50, height).map(|id| {
                    f.preimages.insert(id, preimage);
                })
            }
            Op::Fulfill(i) if !pending.is_empty() => {
                let id = pending[i % pending.len()];
                f.channel.fulfill_htlc(id, &f.preimages[&id].clone()).map(|_| ())
            }
            Op::Fail(i) if !pending.is_empty() => f.channel.fail_htlc(pending[i % pending.len()]).map(|_| ()),
            _ => continue,
        };
        if result.is_ok() {
            updates += 1;
        }
    }
    updates
}

/// Runs `ops`, has `cheater` broadcast its commitment number
/// `revoked_pick % latest`, and checks that the honest party's justice
/// transaction is valid throughout the delay, confirms before it runs out
/// and leaves the honest party holding the whole channel.
///
/// Returns `Ok(false)` when the history has no revoked commitment.
pub fn breach_case(ops: &[Op], revoked_pick: usize, cheater: Party, csv: u64) -> Result<bool, String> {
    let mut f = fixture(csv);
    run(&mut f, ops);
    let latest = f.channel.latest_number();
    if latest == 0 {
        return Ok(false);
    }
    let revoked = (revoked_pick % latest as usize) as u64;
    let honest = cheater.other();

    let (commitment, _) = f.channel.commitment_tx(cheater, revoked).map_err(|e| e.to_string())?;
    f.channel.unilateral_close(&mut f.ledger, cheater, revoked).map_err(|e| e.to_string())?;
    let conf = f.ledger.mine_blocks(1);

    // Script-level check: the revocation branch verifies for every
    // non-trivial output at every height before the delay matures.
    let key = f.channel.revealed_invalidation_key(cheater, revoked).ok_or("no invalidation key")?;
    let justice = f.channel.punish_breach(&mut f.ledger, honest).map_err(|e| e.to_string())?;
    let keys = f.ledger.keys().clone();
    for input in &justice.inputs {
        let utxo = f.ledger.utxo(&input.outpoint).ok_or("justice input not on chain")?.clone();
        if !input.witness.preimages.contains(&key.to_vec()) {
            return Err("justice witness lacks the invalidation key".into());
        }
        for h in conf..conf + csv {
            let ctx = ScriptContext {
                current_height: h,
                input_confirmation_height: conf,
                tx_digest: justice.sighash(),
                keys: &keys,
            };
            if !verify_script(&utxo.script, &input.witness, &ctx) {
                return Err(format!("revocation branch invalid at height {h}"));
            }
        }
    }

    let confirmed_at = f.ledger.mine_blocks(1);
    if !f.ledger.is_confirmed(&justice.txid()) {
        return Err("justice transaction not confirmed".into());
    }
    if confirmed_at > conf + csv.max(1) {
        return Err(format!("justice confirmed at {confirmed_at}, commitment at {conf}, csv {csv}"));
    }
    // Honest party ends with everything: its own output plus the justice sweep.
    let to_remote: u64 = commitment
        .outputs
        .iter()
        .filter(|o| o.script == Script::PayToKey(f.channel.pubkey(honest)))
        .map(|o| o.amount)
        .sum();
    if justice.outputs[0].amount + to_remote != FUNDING {
        return Err(format!("justice claimed {} next to {to_remote}", justice.outputs[0].amount));
    }
    let held = f.ledger.balance_of(f.channel.pubkey(honest));
    if held != FUNDING {
        return Err(format!("honest party holds {held}"));
    }
    Ok(true)
}

/// `n` updates followed by a cooperative close; returns the number of
/// confirmed transactions.
pub fn updates_then_close(n: usize) -> Result<usize, String> {
    let mut f = fixture(6);
    let ops: Vec<Op> =
        (0..n / 2).flat_map(|i| [Op::Add { a_to_b: i % 2 == 0, amount: 1 + i as u64 % 7 }, Op::Fulfill(0)]).collect();
    let done = run(&mut f, &ops);
    if done != n {
        return Err(format!("only {done} of {n} updates applied"));
    }
    f.channel.cooperative_close(&mut f.ledger).map_err(|e| e.to_string())?;
    f.ledger.mine_blocks(1);
    Ok(f.ledger.confirmed_count())
}
