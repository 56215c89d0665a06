//! Commitment transactions and everything that can be spent from them.
//!
//! Layout of the commitment held by `O` (counterparty `C`, revocation hash
//! `R`, delay `d`), outputs in this order, zero amounts omitted. The fee is
//! the channel's close reserve; a to_local amount not exceeding one fee is
//! trimmed because it could never be swept.
//!
//! * to_local: `Or(HashLock(R, C), TimeLockRel(d, O))`
//! * to_remote: `PayToKey(C)`
//! * HTLCs by id. Offered by `O`:
//!   `Or(HashLock(R, C), Or(HashLock(h, C), And(Multisig(O, C), TimeLockAbs(expiry, O))))`.
//!   Received by `O`:
//!   `Or(HashLock(R, C), Or(TimeLockAbs(expiry, C), And(Multisig(O, C), HashLock(h, O))))`.
//!
//! `O` resolves its HTLC outputs through second-stage transactions
//! pre-signed by `C`, whose single output is again revocable and delayed, so
//! every path `O` can take from a revoked commitment stays punishable.

use serde::Serialize;

use super::channel::{Channel, CloseKind};
use super::state::{ChannelPhase, CommitmentState, Htlc, Party};
use super::{ChannelError, ChannelEvent};
use crate::chainlab::{Hash256, HashFnId, Ledger, Outpoint, Rejection, Script, Transaction, TxOut, Witness};

const REVOKE: u8 = 0;
const REMOTE: u8 = 1;
const SECOND_STAGE: u8 = 2;
const DELAYED: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum OutputRole {
    ToLocal,
    ToRemote,
    Htlc(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ClaimKind {
    /// Holder sweeps its delayed balance.
    SweepToLocal,
    /// Holder times out an HTLC it offered (second stage).
    HtlcTimeout(u64),
    /// Holder claims an HTLC it received with the preimage (second stage).
    HtlcSuccess(u64),
    /// Holder sweeps a matured second-stage output.
    SweepSecondStage(u64),
    /// Counterparty claims an HTLC offered to it, with the preimage.
    RemoteClaim(u64),
    /// Counterparty takes back an HTLC it offered, after expiry.
    RemoteRefund(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClaimTx {
    pub kind: ClaimKind,
    pub tx: Transaction,
}

/// Where an HTLC ended up after the channel went on chain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum HtlcResolution {
    /// The channel has not been force-closed; follow the off-chain state.
    OffChain,
    /// The HTLC output exists (or will) but is not resolved yet.
    Pending,
    /// The closing commitment does not carry this HTLC; the broadcast state
    /// decides who holds the amount.
    NotOnChain,
    /// Claimed by the receiver with the preimage.
    Fulfilled { preimage: Vec<u8> },
    /// Returned to the offerer after expiry.
    TimedOut,
    /// Swept through the revocation branch by `by`.
    Revoked { by: Party },
}

impl Channel {
    fn delayed_script(&self, holder: Party, revocation_hash: Hash256) -> Script {
        Script::or(
            Script::HashLock {
                hash_fn: self.revocation_hash_fn(),
                hash: revocation_hash,
                claim: self.pubkey(holder.other()),
            },
            Script::TimeLockRel { delta_blocks: self.config.csv_delay, key: self.pubkey(holder) },
        )
    }

    fn htlc_script(&self, holder: Party, revocation_hash: Hash256, htlc: &Htlc) -> Script {
        let (own, remote) = (self.pubkey(holder), self.pubkey(holder.other()));
        let revoke = Script::HashLock { hash_fn: self.revocation_hash_fn(), hash: revocation_hash, claim: remote };
        let multisig = Script::Multisig2of2(own, remote);
        let inner = if htlc.direction.offerer() == holder {
            Script::or(
                Script::HashLock { hash_fn: htlc.hash_fn, hash: htlc.payment_hash, claim: remote },
                Script::and(multisig, Script::TimeLockAbs { unlock_height: htlc.expiry_height, key: own }),
            )
        } else {
            Script::or(
                Script::TimeLockAbs { unlock_height: htlc.expiry_height, key: remote },
                Script::and(multisig, Script::HashLock { hash_fn: htlc.hash_fn, hash: htlc.payment_hash, claim: own }),
            )
        };
        Script::or(revoke, inner)
    }

    /// `holder`'s unsigned commitment transaction for `number` and the role
    /// of each output.
    pub fn commitment_tx(&self, holder: Party, number: u64) -> Result<(Transaction, Vec<OutputRole>), ChannelError> {
        let state = self.state(number).ok_or(ChannelError::NoSuchCommitment(number))?;
        self.build_commitment(holder, state)
    }

    fn build_commitment(
        &self,
        holder: Party,
        state: &CommitmentState,
    ) -> Result<(Transaction, Vec<OutputRole>), ChannelError> {
        // The close reserve pays this transaction's fee. A to_local output
        // too small to ever be swept is left to the miners as well.
        let to_local = state.balance(holder);
        let to_local = if to_local > self.tx_fee { to_local } else { 0 };
        let rev = state.revocation_hash(holder);
        let mut outputs = Vec::new();
        let mut roles = Vec::new();
        if to_local > 0 {
            outputs.push(TxOut { amount: to_local, script: self.delayed_script(holder, rev) });
            roles.push(OutputRole::ToLocal);
        }
        let remote = state.balance(holder.other());
        if remote > 0 {
            outputs.push(TxOut { amount: remote, script: Script::PayToKey(self.pubkey(holder.other())) });
            roles.push(OutputRole::ToRemote);
        }
        let mut htlcs: Vec<&Htlc> = state.pending_htlcs.iter().collect();
        htlcs.sort_by_key(|h| h.id);
        for htlc in htlcs {
            outputs.push(TxOut { amount: htlc.amount, script: self.htlc_script(holder, rev, htlc) });
            roles.push(OutputRole::Htlc(htlc.id));
        }
        if outputs.is_empty() {
            return Err(ChannelError::NothingToClaim);
        }
        Ok((Transaction::unsigned(&[self.funding_outpoint()], outputs, 0), roles))
    }

    /// The broadcast commitment, if the channel was force-closed and the
    /// commitment is confirmed: (holder, number, transaction, roles, height).
    fn confirmed_commitment(&self, ledger: &Ledger) -> Option<(Party, u64, Transaction, Vec<OutputRole>, u64)> {
        let close = self.close?;
        let CloseKind::Commitment { holder, number } = close.kind else { return None };
        let height = ledger.confirmed_tx(&close.txid)?.height;
        let (tx, roles) = self.commitment_tx(holder, number).ok()?;
        Some((holder, number, tx, roles, height))
    }

    fn second_stage_tx(
        &self,
        holder: Party,
        state: &CommitmentState,
        htlc: &Htlc,
        input: Outpoint,
        preimage: Option<&[u8]>,
    ) -> Option<Transaction> {
        let amount = htlc.amount.checked_sub(self.tx_fee).filter(|a| *a > 0)?;
        let offered = htlc.direction.offerer() == holder;
        let locktime = if offered { htlc.expiry_height } else { 0 };
        let output = TxOut { amount, script: self.delayed_script(holder, state.revocation_hash(holder)) };
        let mut tx = Transaction::unsigned(&[input], vec![output], locktime);
        let digest = tx.sighash();
        let mut witness =
            Witness::signed([self.keys[holder.index()].sign(&digest), self.keys[holder.other().index()].sign(&digest)])
                .with_branch(SECOND_STAGE);
        if !offered {
            witness = witness.with_preimage(preimage?.to_vec());
        }
        tx.inputs[0].witness = witness;
        Some(tx)
    }

    fn single_claim(
        &self,
        party: Party,
        input: Outpoint,
        amount: u64,
        branch: u8,
        preimage: Option<&[u8]>,
        locktime: u64,
    ) -> Option<Transaction> {
        let amount = amount.checked_sub(self.tx_fee).filter(|a| *a > 0)?;
        let mut tx = Transaction::unsigned(
            &[input],
            vec![TxOut { amount, script: Script::PayToKey(self.pubkey(party)) }],
            locktime,
        );
        let digest = tx.sighash();
        let mut witness = Witness::signed([self.keys[party.index()].sign(&digest)]).with_branch(branch);
        if let Some(p) = preimage {
            witness = witness.with_preimage(p.to_vec());
        }
        tx.inputs[0].witness = witness;
        Some(tx)
    }

    /// Transactions `party` could submit now to collect its share of a
    /// force-closed channel. `preimage_of` supplies known payment preimages.
    /// Claims already waiting in the mempool are not repeated.
    pub fn onchain_claims(
        &self,
        ledger: &Ledger,
        party: Party,
        preimage_of: &dyn Fn(HashFnId, &Hash256) -> Option<Vec<u8>>,
    ) -> Vec<ClaimTx> {
        let Some((holder, number, commitment, roles, conf)) = self.confirmed_commitment(ledger) else {
            return Vec::new();
        };
        let state = &self.history[number as usize];
        let next = ledger.height() + 1;
        let txid = commitment.txid();
        let csv = self.config.csv_delay;
        let mut claims = Vec::new();
        let mut push = |kind, tx: Option<Transaction>| {
            if let Some(tx) = tx {
                if !ledger.in_mempool(&tx.txid()) {
                    claims.push(ClaimTx { kind, tx });
                }
            }
        };

        for (index, role) in roles.iter().enumerate() {
            let op = Outpoint::new(txid, index as u32);
            let amount = commitment.outputs[index].amount;
            if let Some(spend) = ledger.spending_tx(&op) {
                // A confirmed second-stage output still needs its delayed sweep.
                if let (OutputRole::Htlc(id), true) = (role, party == holder) {
                    let input = spend.tx.inputs.iter().find(|i| i.outpoint == op);
                    if input.and_then(|i| i.witness.branch_selector) == Some(SECOND_STAGE) {
                        let out = Outpoint::new(spend.tx.txid(), 0);
                        if let Some(utxo) = ledger.utxo(&out) {
                            if next >= utxo.confirmation_height + csv {
                                push(
                                    ClaimKind::SweepSecondStage(*id),
                                    self.single_claim(holder, out, utxo.amount, DELAYED, None, 0),
                                );
                            }
                        }
                    }
                }
                continue;
            }
            if ledger.utxo(&op).is_none() {
                continue;
            }
            match role {
                OutputRole::ToLocal if party == holder && next >= conf + csv => {
                    push(ClaimKind::SweepToLocal, self.single_claim(holder, op, amount, DELAYED, None, 0));
                }
                OutputRole::Htlc(id) => {
                    let htlc = state.htlc(*id).expect("htlc output has a matching htlc");
                    let offered_by_holder = htlc.direction.offerer() == holder;
                    let preimage = preimage_of(htlc.hash_fn, &htlc.payment_hash);
                    match (party == holder, offered_by_holder) {
                        (true, true) if next >= htlc.expiry_height => {
                            push(ClaimKind::HtlcTimeout(*id), self.second_stage_tx(holder, state, htlc, op, None));
                        }
                        (true, false) if preimage.is_some() => {
                            push(
                                ClaimKind::HtlcSuccess(*id),
                                self.second_stage_tx(holder, state, htlc, op, preimage.as_deref()),
                            );
                        }
                        (false, true) if preimage.is_some() => {
                            push(
                                ClaimKind::RemoteClaim(*id),
                                self.single_claim(party, op, amount, REMOTE, preimage.as_deref(), 0),
                            );
                        }
                        (false, false) if next >= htlc.expiry_height => {
                            push(
                                ClaimKind::RemoteRefund(*id),
                                self.single_claim(party, op, amount, REMOTE, None, htlc.expiry_height),
                            );
                        }
                        _ => {}
                    }
                }
                _ => {}
            }
        }
        claims
    }

    /// Builds and submits the justice transaction sweeping every output of a
    /// confirmed revoked commitment the cheater could otherwise claim.
    pub fn punish_breach(&mut self, ledger: &mut Ledger, honest: Party) -> Result<Transaction, ChannelError> {
        let close = self.close.ok_or(ChannelError::NoBreach)?;
        let CloseKind::Commitment { holder: cheater, number } = close.kind else { return Err(ChannelError::NoBreach) };
        if cheater == honest {
            return Err(ChannelError::NoBreach);
        }
        let key = self.revealed_invalidation_key(cheater, number).ok_or(ChannelError::NotRevoked(number))?;
        let (_, _, commitment, roles, _) =
            self.confirmed_commitment(ledger).ok_or(ChannelError::CommitmentUnconfirmed)?;
        let txid = commitment.txid();

        let mut candidates: Vec<(Outpoint, u64)> = Vec::new();
        let mut swept_by_cheater = false;
        for (index, role) in roles.iter().enumerate() {
            if *role == OutputRole::ToRemote {
                continue;
            }
            let op = Outpoint::new(txid, index as u32);
            if let Some(utxo) = ledger.utxo(&op) {
                candidates.push((op, utxo.amount));
                continue;
            }
            let Some(spend) = ledger.spending_tx(&op) else { continue };
            let branch = spend.tx.inputs.iter().find(|i| i.outpoint == op).and_then(|i| i.witness.branch_selector);
            match (role, branch) {
                (OutputRole::ToLocal, Some(DELAYED)) => swept_by_cheater = true,
                (OutputRole::Htlc(_), Some(SECOND_STAGE)) => {
                    let out = Outpoint::new(spend.tx.txid(), 0);
                    match ledger.utxo(&out) {
                        Some(utxo) => candidates.push((out, utxo.amount)),
                        None => swept_by_cheater |= ledger.is_spent(&out),
                    }
                }
                _ => {}
            }
        }

        let build = |inputs: &[(Outpoint, u64)]| -> Option<Transaction> {
            let total = inputs.iter().try_fold(0u64, |acc, (_, a)| acc.checked_add(*a))?;
            let amount = total.checked_sub(self.tx_fee).filter(|a| *a > 0)?;
            let ops: Vec<Outpoint> = inputs.iter().map(|(op, _)| *op).collect();
            let mut tx =
                Transaction::unsigned(&ops, vec![TxOut { amount, script: Script::PayToKey(self.pubkey(honest)) }], 0);
            let digest = tx.sighash();
            let witness = Witness::signed([self.keys[honest.index()].sign(&digest)])
                .with_preimage(key.to_vec())
                .with_branch(REVOKE);
            for input in &mut tx.inputs {
                input.witness = witness.clone();
            }
            Some(tx)
        };

        let mut attempt = candidates.clone();
        loop {
            let Some(tx) = build(&attempt) else {
                return Err(if swept_by_cheater { ChannelError::WindowExpired } else { ChannelError::NothingToClaim });
            };
            match ledger.submit_tx(tx.clone()) {
                Ok(_) => {
                    let amount = tx.outputs[0].amount;
                    self.events.push(ChannelEvent::Punish { by: honest, amount });
                    return Ok(tx);
                }
                // Some outputs are being spent by transactions that cannot be
                // displaced yet; take the rest now and the remainder later.
                Err(Rejection::Conflict(op)) if attempt.len() > 1 => attempt.retain(|(o, _)| *o != op),
                Err(Rejection::Conflict(_)) => return Err(ChannelError::NothingToClaim),
                Err(other) => return Err(ChannelError::Rejected(other)),
            }
        }
    }

    /// How HTLC `id` was resolved on chain, if the channel was force-closed.
    pub fn htlc_resolution(&self, ledger: &Ledger, id: u64) -> HtlcResolution {
        let Some(close) = self.close else { return HtlcResolution::OffChain };
        let CloseKind::Commitment { holder, number } = close.kind else { return HtlcResolution::OffChain };
        let state = &self.history[number as usize];
        let Some(htlc) = state.htlc(id) else { return HtlcResolution::NotOnChain };
        let Some((_, _, commitment, roles, _)) = self.confirmed_commitment(ledger) else {
            return HtlcResolution::Pending;
        };
        let index = roles.iter().position(|r| *r == OutputRole::Htlc(id)).expect("htlc has an output");
        let op = Outpoint::new(commitment.txid(), index as u32);
        let Some(spend) = ledger.spending_tx(&op) else { return HtlcResolution::Pending };
        let witness = &spend.tx.inputs.iter().find(|i| i.outpoint == op).expect("spender consumes op").witness;
        let offered_by_holder = htlc.direction.offerer() == holder;
        let preimage = || witness.preimages.iter().find(|p| htlc.matches(p)).cloned();
        match (witness.branch_selector, offered_by_holder) {
            (Some(REVOKE), _) => HtlcResolution::Revoked { by: holder.other() },
            (Some(REMOTE), true) | (Some(SECOND_STAGE), false) => match preimage() {
                Some(preimage) => HtlcResolution::Fulfilled { preimage },
                None => HtlcResolution::Pending,
            },
            (Some(REMOTE), false) | (Some(SECOND_STAGE), true) => HtlcResolution::TimedOut,
            _ => HtlcResolution::Pending,
        }
    }

    /// Value still locked in outputs of this channel's closing transactions
    /// that are not plain payments: the funding output while open, the
    /// revocable/HTLC outputs and second-stage outputs after a force close.
    pub fn locked_onchain(&self, ledger: &Ledger) -> u64 {
        let Some(close) = self.close else { return 0 };
        if close.kind == CloseKind::Cooperative {
            return 0;
        }
        let Some((_, _, commitment, roles, _)) = self.confirmed_commitment(ledger) else { return 0 };
        let txid = commitment.txid();
        let mut total = 0;
        for (index, role) in roles.iter().enumerate() {
            if *role == OutputRole::ToRemote {
                continue;
            }
            let op = Outpoint::new(txid, index as u32);
            if let Some(u) = ledger.utxo(&op) {
                total += u.amount;
            } else if let Some(spend) = ledger.spending_tx(&op) {
                let branch = spend.tx.inputs.iter().find(|i| i.outpoint == op).and_then(|i| i.witness.branch_selector);
                if branch == Some(SECOND_STAGE) {
                    if let Some(u) = ledger.utxo(&Outpoint::new(spend.tx.txid(), 0)) {
                        total += u.amount;
                    }
                }
            }
        }
        total
    }

    /// Advances the phase from what has confirmed on `ledger`.
    pub fn refresh(&mut self, ledger: &Ledger) {
        let Some(close) = self.close else { return };
        if self.phase == ChannelPhase::Settled || !ledger.is_confirmed(&close.txid) {
            return;
        }
        let done = match close.kind {
            CloseKind::Cooperative => true,
            CloseKind::Commitment { .. } => self.locked_onchain(ledger) == 0,
        };
        if done {
            self.phase = ChannelPhase::Settled;
            self.events.push(ChannelEvent::Settled);
        }
    }
}
