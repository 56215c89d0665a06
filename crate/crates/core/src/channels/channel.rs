use hmac::{Hmac, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use super::state::{ChannelId, ChannelPhase, CommitmentState, Direction, Htlc, Party};
use super::{ChannelError, ChannelEvent};
use crate::chainlab::{
    select_coins, sign_all_inputs, AssetId, ChainError, ChainId, Hash256, HashFnId, KeyPair, Ledger, Outpoint, PubKey,
    Rejection, Script, Transaction, TxOut, Txid, Witness,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Relative delay on the broadcaster's own outputs.
    pub csv_delay: u64,
    /// HTLCs below this amount are refused.
    pub dust_limit: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig { csv_delay: 6, dust_limit: 0 }
    }
}

/// An off-chain state change.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Update {
    AddHtlc { direction: Direction, amount: u64, hash_fn: HashFnId, payment_hash: Hash256, expiry_height: u64 },
    Fulfill { htlc_id: u64, preimage: Vec<u8> },
    Fail { htlc_id: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum CloseKind {
    Cooperative,
    Commitment { holder: Party, number: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CloseRecord {
    pub kind: CloseKind,
    pub txid: Txid,
    pub submitted_at: u64,
}

/// Both endpoints of one channel. The simulator drives both sides, so the
/// struct owns both parties' keys; each operation only uses the keys the
/// acting party would legitimately hold.
#[derive(Clone, Debug)]
pub struct Channel {
    pub(super) id: ChannelId,
    pub(super) chain: ChainId,
    pub(super) asset: AssetId,
    pub(super) hash_fns: Vec<HashFnId>,
    pub(super) tx_fee: u64,
    pub(super) funding_amount: u64,
    pub(super) keys: [KeyPair; 2],
    revocation_seeds: [[u8; 32]; 2],
    pub(super) config: ChannelConfig,
    pub(super) history: Vec<CommitmentState>,
    /// Every commitment numbered below this has had its keys revealed.
    revoked_below: u64,
    next_htlc_id: u64,
    pub(super) phase: ChannelPhase,
    pub(super) close: Option<CloseRecord>,
    pub(super) events: Vec<ChannelEvent>,
}

/// Funds a channel and waits one block for the funding transaction.
///
/// The opener (party A unless it contributes nothing) pays the funding fee
/// and also locks one more fee into the funding output as the close
/// reserve: whichever transaction eventually spends the funding output,
/// cooperative close or commitment, leaves exactly that reserve to the
/// miners, so neither balance has to cover it.
pub fn open_channel(
    ledger: &mut Ledger,
    party_a: &KeyPair,
    party_b: &KeyPair,
    fund_a: u64,
    fund_b: u64,
    config: ChannelConfig,
) -> Result<Channel, ChannelError> {
    if party_a.public() == party_b.public() {
        return Err(ChannelError::InvalidParties);
    }
    let funding_amount = fund_a.checked_add(fund_b).ok_or(ChannelError::Overflow)?;
    if funding_amount == 0 {
        return Err(ChannelError::ZeroFunding);
    }
    let fee = ledger.params().tx_fee;
    let opener_extra = fee.checked_mul(2).ok_or(ChannelError::Overflow)?;
    let (need_a, need_b) = if fund_a > 0 {
        (fund_a.checked_add(opener_extra).ok_or(ChannelError::Overflow)?, fund_b)
    } else {
        (0, fund_b.checked_add(opener_extra).ok_or(ChannelError::Overflow)?)
    };
    let output_amount = funding_amount.checked_add(fee).ok_or(ChannelError::Overflow)?;

    let mut inputs = Vec::new();
    let mut outputs =
        vec![TxOut { amount: output_amount, script: Script::Multisig2of2(party_a.public(), party_b.public()) }];
    for (key, need) in [(party_a, need_a), (party_b, need_b)] {
        if need == 0 {
            continue;
        }
        let (coins, total) = select_coins(ledger, key.public(), need).map_err(|e| match e {
            ChainError::InsufficientFunds { needed, available } => {
                ChannelError::InsufficientFunds { needed, available }
            }
            other => ChannelError::Chain(other),
        })?;
        inputs.extend(coins);
        if total > need {
            outputs.push(TxOut { amount: total - need, script: Script::PayToKey(key.public()) });
        }
    }
    let mut tx = Transaction::unsigned(&inputs, outputs, 0);
    sign_all_inputs(&mut tx, &[party_a, party_b]);
    ledger.register_key(party_a);
    ledger.register_key(party_b);
    let txid = ledger.submit_tx(tx).map_err(|r| match r {
        Rejection::Conflict(op) => ChannelError::FundingConflict(op),
        other => ChannelError::Rejected(other),
    })?;
    ledger.mine_blocks(1);
    debug_assert!(ledger.is_confirmed(&txid));

    let params = ledger.params();
    let id = ChannelId(Outpoint::new(txid, 0));
    let seed = |key: &KeyPair| {
        let mut label = b"revocation".to_vec();
        label.extend_from_slice(&txid.0);
        key.derive(&label)
    };
    let mut channel = Channel {
        id,
        chain: params.chain_id,
        asset: params.asset_id,
        hash_fns: params.hash_fns.clone(),
        tx_fee: fee,
        funding_amount,
        keys: [party_a.clone(), party_b.clone()],
        revocation_seeds: [seed(party_a), seed(party_b)],
        config,
        history: Vec::new(),
        revoked_below: 0,
        next_htlc_id: 0,
        phase: ChannelPhase::Opening,
        close: None,
        events: Vec::new(),
    };
    let initial = CommitmentState {
        commitment_number: 0,
        balance_a: fund_a,
        balance_b: fund_b,
        pending_htlcs: Vec::new(),
        revocation_hash_a: channel.revocation_hash(Party::A, 0),
        revocation_hash_b: channel.revocation_hash(Party::B, 0),
    };
    channel.history.push(initial);
    channel.phase = ChannelPhase::Open;
    channel.events.push(ChannelEvent::Open { funding_amount });
    Ok(channel)
}

impl Channel {
    pub fn id(&self) -> ChannelId {
        self.id
    }

    pub fn chain(&self) -> ChainId {
        self.chain
    }

    pub fn asset(&self) -> AssetId {
        self.asset
    }

    pub fn hash_fns(&self) -> &[HashFnId] {
        &self.hash_fns
    }

    pub fn config(&self) -> ChannelConfig {
        self.config
    }

    /// Channel capacity: the sum of both balances and pending HTLCs.
    pub fn funding_amount(&self) -> u64 {
        self.funding_amount
    }

    /// Fee locked in the funding output on top of the capacity; spent as
    /// the fee of whichever transaction closes the channel.
    pub fn close_reserve(&self) -> u64 {
        self.tx_fee
    }

    pub fn funding_outpoint(&self) -> Outpoint {
        self.id.0
    }

    pub fn pubkey(&self, party: Party) -> PubKey {
        self.keys[party.index()].public()
    }

    pub fn party_of(&self, key: PubKey) -> Option<Party> {
        [Party::A, Party::B].into_iter().find(|p| self.pubkey(*p) == key)
    }

    pub fn phase(&self) -> ChannelPhase {
        self.phase
    }

    pub fn close_record(&self) -> Option<CloseRecord> {
        self.close
    }

    pub fn events(&self) -> &[ChannelEvent] {
        &self.events
    }

    pub fn drain_events(&mut self) -> Vec<ChannelEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn latest(&self) -> &CommitmentState {
        self.history.last().expect("a channel always has an initial commitment")
    }

    pub fn latest_number(&self) -> u64 {
        self.latest().commitment_number
    }

    pub fn state(&self, number: u64) -> Option<&CommitmentState> {
        self.history.get(number as usize)
    }

    pub fn balance(&self, party: Party) -> u64 {
        self.latest().balance(party)
    }

    pub fn pending_htlcs(&self) -> &[Htlc] {
        &self.latest().pending_htlcs
    }

    pub fn htlc(&self, id: u64) -> Option<&Htlc> {
        self.latest().htlc(id)
    }

    pub fn is_revoked(&self, number: u64) -> bool {
        number < self.revoked_below
    }

    /// True between signing a new commitment and revoking the previous one.
    pub fn awaiting_revocation(&self) -> bool {
        self.revoked_below < self.latest_number()
    }

    /// Smallest HTLC amount the channel accepts.
    pub fn min_htlc_amount(&self) -> u64 {
        self.config.dust_limit.max(self.tx_fee.saturating_mul(2).saturating_add(1))
    }

    /// The invalidation key `party` revealed for `number`, if it has been
    /// revealed. Keys of unrevoked commitments are never handed out.
    pub fn revealed_invalidation_key(&self, party: Party, number: u64) -> Option<[u8; 32]> {
        self.is_revoked(number).then(|| self.invalidation_key(party, number))
    }

    pub(super) fn invalidation_key(&self, party: Party, number: u64) -> [u8; 32] {
        let mut m = Hmac::<Sha256>::new_from_slice(&self.revocation_seeds[party.index()]).expect("any key length");
        m.update(&number.to_le_bytes());
        m.finalize().into_bytes().into()
    }

    pub(super) fn revocation_hash_fn(&self) -> HashFnId {
        self.hash_fns[0]
    }

    fn revocation_hash(&self, party: Party, number: u64) -> Hash256 {
        self.revocation_hash_fn().digest(&self.invalidation_key(party, number))
    }

    fn require_open(&self) -> Result<(), ChannelError> {
        if self.phase != ChannelPhase::Open {
            return Err(ChannelError::StalePhase(self.phase));
        }
        Ok(())
    }

    /// First half of an update: both parties sign the commitment pair for
    /// the new state. Returns the new commitment number.
    pub fn propose(&mut self, update: Update, current_height: u64) -> Result<u64, ChannelError> {
        self.require_open()?;
        if self.awaiting_revocation() {
            return Err(ChannelError::UpdateInProgress);
        }
        let mut next = self.latest().clone();
        match update {
            Update::AddHtlc { direction, amount, hash_fn, payment_hash, expiry_height } => {
                if !self.hash_fns.contains(&hash_fn) {
                    return Err(ChannelError::UnsupportedHashFunction(hash_fn));
                }
                let minimum = self.min_htlc_amount();
                if amount < minimum {
                    return Err(ChannelError::BelowDust { amount, minimum });
                }
                if expiry_height <= current_height {
                    return Err(ChannelError::ExpiryTooSoon { expiry: expiry_height, height: current_height });
                }
                let balance = next.balance_mut(direction.offerer());
                if *balance < amount {
                    return Err(ChannelError::InsufficientBalance { needed: amount, available: *balance });
                }
                *balance -= amount;
                let id = self.next_htlc_id;
                self.next_htlc_id += 1;
                next.pending_htlcs.push(Htlc { id, direction, amount, hash_fn, payment_hash, expiry_height });
                self.events.push(ChannelEvent::HtlcAdded { htlc_id: id, amount });
            }
            Update::Fulfill { htlc_id, preimage } => {
                let pos = next
                    .pending_htlcs
                    .iter()
                    .position(|h| h.id == htlc_id)
                    .ok_or(ChannelError::UnknownHtlc(htlc_id))?;
                if !next.pending_htlcs[pos].matches(&preimage) {
                    return Err(ChannelError::BadPreimage);
                }
                let htlc = next.pending_htlcs.remove(pos);
                let balance = next.balance_mut(htlc.direction.receiver());
                *balance = balance.checked_add(htlc.amount).ok_or(ChannelError::Overflow)?;
                self.events.push(ChannelEvent::Fulfill { htlc_id });
            }
            Update::Fail { htlc_id } => {
                let pos = next
                    .pending_htlcs
                    .iter()
                    .position(|h| h.id == htlc_id)
                    .ok_or(ChannelError::UnknownHtlc(htlc_id))?;
                let htlc = next.pending_htlcs.remove(pos);
                let balance = next.balance_mut(htlc.direction.offerer());
                *balance = balance.checked_add(htlc.amount).ok_or(ChannelError::Overflow)?;
                self.events.push(ChannelEvent::Fail { htlc_id });
            }
        }
        let number = next.commitment_number + 1;
        next.commitment_number = number;
        next.revocation_hash_a = self.revocation_hash(Party::A, number);
        next.revocation_hash_b = self.revocation_hash(Party::B, number);
        debug_assert_eq!(next.total(), self.funding_amount as u128);
        self.history.push(next);
        self.events.push(ChannelEvent::Update { commitment_number: number });
        Ok(number)
    }

    /// Second half of an update: both parties reveal their invalidation keys
    /// for the commitment that was just superseded.
    pub fn revoke_previous(&mut self) -> Result<(), ChannelError> {
        if !self.awaiting_revocation() {
            return Err(ChannelError::NoPendingUpdate);
        }
        self.revoked_below = self.latest_number();
        Ok(())
    }

    fn apply(&mut self, update: Update, current_height: u64) -> Result<(), ChannelError> {
        self.propose(update, current_height)?;
        self.revoke_previous()
    }

    pub fn add_htlc(
        &mut self,
        direction: Direction,
        amount: u64,
        hash_fn: HashFnId,
        payment_hash: Hash256,
        expiry_height: u64,
        current_height: u64,
    ) -> Result<u64, ChannelError> {
        let id = self.next_htlc_id;
        self.apply(Update::AddHtlc { direction, amount, hash_fn, payment_hash, expiry_height }, current_height)?;
        Ok(id)
    }

    pub fn fulfill_htlc(&mut self, htlc_id: u64, preimage: &[u8]) -> Result<&CommitmentState, ChannelError> {
        self.apply(Update::Fulfill { htlc_id, preimage: preimage.to_vec() }, 0)?;
        Ok(self.latest())
    }

    pub fn fail_htlc(&mut self, htlc_id: u64) -> Result<&CommitmentState, ChannelError> {
        self.apply(Update::Fail { htlc_id }, 0)?;
        Ok(self.latest())
    }

    /// Pays both balances out directly; the close reserve covers the fee.
    pub fn cooperative_close(&mut self, ledger: &mut Ledger) -> Result<Transaction, ChannelError> {
        self.require_open()?;
        if self.awaiting_revocation() {
            return Err(ChannelError::UpdateInProgress);
        }
        let state = self.latest();
        if !state.pending_htlcs.is_empty() {
            return Err(ChannelError::PendingHtlcs);
        }
        let (a, b) = (state.balance_a, state.balance_b);
        let outputs: Vec<TxOut> = [(Party::A, a), (Party::B, b)]
            .into_iter()
            .filter(|(_, amount)| *amount > 0)
            .map(|(p, amount)| TxOut { amount, script: Script::PayToKey(self.pubkey(p)) })
            .collect();
        if outputs.is_empty() {
            return Err(ChannelError::NothingToClaim);
        }
        let mut tx = Transaction::unsigned(&[self.funding_outpoint()], outputs, 0);
        sign_all_inputs(&mut tx, &[&self.keys[0], &self.keys[1]]);
        let txid = ledger.submit_tx(tx.clone())?;
        self.phase = ChannelPhase::CooperativeClosing;
        self.close = Some(CloseRecord { kind: CloseKind::Cooperative, txid, submitted_at: ledger.height() });
        self.events.push(ChannelEvent::Close { cooperative: true, by: None, commitment_number: None });
        Ok(tx)
    }

    /// Broadcasts `party`'s copy of commitment `number`.
    pub fn unilateral_close(
        &mut self,
        ledger: &mut Ledger,
        party: Party,
        number: u64,
    ) -> Result<Transaction, ChannelError> {
        self.require_open()?;
        if number > self.latest_number() {
            return Err(ChannelError::NoSuchCommitment(number));
        }
        let (mut tx, _) = self.commitment_tx(party, number)?;
        let digest = tx.sighash();
        tx.inputs[0].witness = Witness::signed([self.keys[0].sign(&digest), self.keys[1].sign(&digest)]);
        let txid = ledger.submit_tx(tx.clone())?;
        let height = ledger.height();
        self.close =
            Some(CloseRecord { kind: CloseKind::Commitment { holder: party, number }, txid, submitted_at: height });
        self.events.push(ChannelEvent::Close { cooperative: false, by: Some(party), commitment_number: Some(number) });
        if self.is_revoked(number) {
            self.phase = ChannelPhase::Breached { by: party };
            self.events.push(ChannelEvent::Breach { by: party, commitment_number: number });
        } else {
            self.phase = ChannelPhase::UnilateralClosed { by: party, at_height: height };
        }
        Ok(tx)
    }
}
