//! Scenario documents: JSON with top-level sections `chains`, `actors`,
//! `channels`, `quotes`, `payments`, `faults`, `closes` and `mining`.
//! Actors are referenced by their string id, chains by numeric id.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chainlab::{AssetId, ChainId, HashFnId};
use crate::crp::{RateQuote, TimelockPolicy};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default)]
    pub policy: TimelockPolicy,
    /// Relative delay on every channel's delayed outputs.
    #[serde(default = "default_csv")]
    pub csv_delay: u64,
    pub chains: Vec<ChainSpec>,
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub channels: Vec<ChannelSpec>,
    #[serde(default)]
    pub quotes: Vec<QuoteSpec>,
    #[serde(default)]
    pub payments: Vec<PaymentSpec>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    /// Cooperative closes; attempted from `tick` on until they succeed.
    #[serde(default)]
    pub closes: Vec<CloseSpec>,
    /// Per-chain block schedules; chains without one mine every
    /// `block_interval` ticks.
    #[serde(default)]
    pub mining: Vec<MiningSpec>,
}

fn default_csv() -> u64 {
    6
}

fn default_one() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub id: u32,
    pub asset: u32,
    pub hash_fns: Vec<HashFnId>,
    #[serde(default)]
    pub tx_fee: u64,
    #[serde(default = "default_one")]
    pub block_interval: u64,
    #[serde(default)]
    pub start_height: u64,
    #[serde(default)]
    pub genesis: Vec<Allocation>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Allocation {
    pub actor: String,
    pub amount: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    LiquidityProvider,
    Business,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorSpec {
    pub id: String,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub chain: u32,
    pub a: String,
    pub b: String,
    pub fund_a: u64,
    #[serde(default)]
    pub fund_b: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuoteSpec {
    pub lp: String,
    pub asset_in: u32,
    pub asset_out: u32,
    pub rate_num: u64,
    pub rate_den: u64,
    #[serde(default)]
    pub base_fee: u64,
    #[serde(default)]
    pub fee_ppm: u32,
}

impl QuoteSpec {
    pub fn quote(&self) -> RateQuote {
        RateQuote {
            asset_in: AssetId(self.asset_in),
            asset_out: AssetId(self.asset_out),
            rate_num: self.rate_num,
            rate_den: self.rate_den,
            base_fee: self.base_fee,
            fee_ppm: self.fee_ppm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaymentSpec {
    pub tick: u64,
    pub from: String,
    pub to: String,
    pub amount: u64,
    pub asset: u32,
    #[serde(default = "default_hash_fn")]
    pub hash_fn: HashFnId,
}

fn default_hash_fn() -> HashFnId {
    HashFnId::Sha256
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Fails every HTLC it should forward.
    RefuseForward,
    /// Never reveals a preimage off-chain; claims on chain at the last moment.
    StallSecret,
    /// Broadcasts a revoked commitment of one of its channels.
    BroadcastRevoked,
    /// Neither sends nor receives gossip.
    DropGossip,
    /// Offline for `duration` ticks.
    Crash,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FaultKind::RefuseForward => "refuse_forward",
            FaultKind::StallSecret => "stall_secret",
            FaultKind::BroadcastRevoked => "broadcast_revoked",
            FaultKind::DropGossip => "drop_gossip",
            FaultKind::Crash => "crash",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub tick: u64,
    pub kind: FaultKind,
    pub target: String,
    /// Required for `crash`, rejected otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloseSpec {
    pub tick: u64,
    /// Index into `channels`.
    pub channel: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiningSpec {
    pub chain: u32,
    /// A block every `every` ticks ...
    pub every: u64,
    /// ... at ticks `t` with `t % every == offset % every`.
    #[serde(default)]
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("parse error at {path} (line {line}, column {column}): {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("unknown reference at {field}: {id}")]
    UnknownReference { field: String, id: String },
    #[error("constraint violation at {field}: {message}")]
    Constraint { field: String, message: String },
}

impl ScenarioError {
    fn constraint(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Constraint { field: field.into(), message: message.into() }
    }

    fn unknown(field: impl Into<String>, id: impl fmt::Display) -> Self {
        ScenarioError::UnknownReference { field: field.into(), id: id.to_string() }
    }
}

/// Parses and checks a scenario document. Structural errors stop at the
/// first problem; referential and constraint checks report everything.
pub fn validate_scenario(text: &str) -> Result<Scenario, Vec<ScenarioError>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        vec![ScenarioError::Parse { path, line: inner.line(), column: inner.column(), message: inner.to_string() }]
    })?;
    let errors = scenario.check();
    if errors.is_empty() {
        Ok(scenario)
    } else {
        Err(errors)
    }
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn role_of(&self, actor: &str) -> Option<Role> {
        self.actors.iter().find(|a| a.id == actor).map(|a| a.role)
    }

    pub fn chain(&self, id: u32) -> Option<&ChainSpec> {
        self.chains.iter().find(|c| c.id == id)
    }

    /// Referential and constraint checks.
    pub fn check(&self) -> Vec<ScenarioError> {
        let mut errs = Vec::new();
        if self.policy.validate().is_err() {
            errs.push(ScenarioError::constraint("policy", "final_delta and hop_delta must be >= 1"));
        }
        if self.csv_delay == 0 {
            errs.push(ScenarioError::constraint("csv_delay", "must be >= 1"));
        }

        let mut actor_ids = BTreeSet::new();
        for (i, a) in self.actors.iter().enumerate() {
            if a.id.is_empty() {
                errs.push(ScenarioError::constraint(format!("actors[{i}].id"), "must not be empty"));
            }
            if !actor_ids.insert(a.id.as_str()) {
                errs.push(ScenarioError::constraint(
                    format!("actors[{i}].id"),
                    format!("duplicate actor id {:?}", a.id),
                ));
            }
        }
        let known = |id: &str| actor_ids.contains(id);

        let mut chain_ids = BTreeSet::new();
        let mut assets: BTreeMap<u32, u32> = BTreeMap::new();
        if self.chains.is_empty() {
            errs.push(ScenarioError::constraint("chains", "at least one chain is required"));
        }
        for (i, c) in self.chains.iter().enumerate() {
            if !chain_ids.insert(c.id) {
                errs.push(ScenarioError::constraint(format!("chains[{i}].id"), format!("duplicate chain id {}", c.id)));
            }
            if let Some(other) = assets.insert(c.asset, c.id) {
                errs.push(ScenarioError::constraint(
                    format!("chains[{i}].asset"),
                    format!("asset {} is already native to chain {other}", c.asset),
                ));
            }
            if c.hash_fns.is_empty() {
                errs.push(ScenarioError::constraint(format!("chains[{i}].hash_fns"), "at least one hash function"));
            }
            if c.block_interval == 0 {
                errs.push(ScenarioError::constraint(format!("chains[{i}].block_interval"), "must be >= 1"));
            }
            for (j, g) in c.genesis.iter().enumerate() {
                if !known(&g.actor) {
                    errs.push(ScenarioError::unknown(format!("chains[{i}].genesis[{j}].actor"), &g.actor));
                }
                if g.amount == 0 {
                    errs.push(ScenarioError::constraint(format!("chains[{i}].genesis[{j}].amount"), "must be > 0"));
                }
            }
            let total = c.genesis.iter().try_fold(0u64, |acc, g| acc.checked_add(g.amount));
            if total.is_none() {
                errs.push(ScenarioError::constraint(format!("chains[{i}].genesis"), "total allocation overflows"));
            }
        }

        let mut pairs = BTreeSet::new();
        for (i, ch) in self.channels.iter().enumerate() {
            let f = |n: &str| format!("channels[{i}].{n}");
            if !chain_ids.contains(&ch.chain) {
                errs.push(ScenarioError::unknown(f("chain"), ch.chain));
            }
            for (name, id) in [("a", &ch.a), ("b", &ch.b)] {
                if !known(id) {
                    errs.push(ScenarioError::unknown(f(name), id));
                }
            }
            if ch.a == ch.b {
                errs.push(ScenarioError::constraint(f("b"), "a channel needs two distinct actors"));
            }
            if ch.fund_a.checked_add(ch.fund_b).is_none_or(|t| t == 0) {
                errs.push(ScenarioError::constraint(f("fund_a"), "funding must be positive and not overflow"));
            }
            let key = (ch.chain, ch.a.clone().min(ch.b.clone()), ch.a.clone().max(ch.b.clone()));
            if !pairs.insert(key) {
                errs.push(ScenarioError::constraint(f("b"), "duplicate channel between these actors on this chain"));
            }
            for (x, y) in [(&ch.a, &ch.b), (&ch.b, &ch.a)] {
                if self.role_of(x) == Some(Role::User) && self.role_of(y).is_some_and(|r| r != Role::LiquidityProvider)
                {
                    errs.push(ScenarioError::constraint(
                        f("b"),
                        format!("user {x:?} may only open channels to liquidity providers"),
                    ));
                }
            }
        }

        for (i, q) in self.quotes.iter().enumerate() {
            let f = |n: &str| format!("quotes[{i}].{n}");
            match self.role_of(&q.lp) {
                None => errs.push(ScenarioError::unknown(f("lp"), &q.lp)),
                Some(Role::LiquidityProvider) => {}
                Some(_) => {
                    errs.push(ScenarioError::constraint(f("lp"), format!("{:?} is not a liquidity provider", q.lp)))
                }
            }
            for (name, asset) in [("asset_in", q.asset_in), ("asset_out", q.asset_out)] {
                if !assets.contains_key(&asset) {
                    errs.push(ScenarioError::unknown(f(name), asset));
                }
            }
            if q.rate_num == 0 {
                errs.push(ScenarioError::constraint(f("rate_num"), "must be >= 1"));
            }
            if q.rate_den == 0 {
                errs.push(ScenarioError::constraint(f("rate_den"), "must be >= 1"));
            }
            if q.fee_ppm >= 1_000_000 {
                errs.push(ScenarioError::constraint(f("fee_ppm"), "must be < 1000000"));
            }
        }

        for (i, p) in self.payments.iter().enumerate() {
            let f = |n: &str| format!("payments[{i}].{n}");
            for (name, id) in [("from", &p.from), ("to", &p.to)] {
                if !known(id) {
                    errs.push(ScenarioError::unknown(f(name), id));
                }
            }
            if p.from == p.to {
                errs.push(ScenarioError::constraint(f("to"), "sender and recipient must differ"));
            }
            if p.amount == 0 {
                errs.push(ScenarioError::constraint(f("amount"), "must be > 0"));
            }
            match assets.get(&p.asset).and_then(|c| self.chain(*c)) {
                None => errs.push(ScenarioError::unknown(f("asset"), p.asset)),
                Some(c) if !c.hash_fns.contains(&p.hash_fn) => errs.push(ScenarioError::constraint(
                    f("hash_fn"),
                    format!("{} is not supported on chain {}", p.hash_fn.name(), c.id),
                )),
                Some(_) => {}
            }
            if self.role_of(&p.from) == Some(Role::User) {
                let has_lp = self.channels.iter().any(|c| {
                    (c.a == p.from && self.role_of(&c.b) == Some(Role::LiquidityProvider))
                        || (c.b == p.from && self.role_of(&c.a) == Some(Role::LiquidityProvider))
                });
                if !has_lp {
                    errs.push(ScenarioError::constraint(
                        f("from"),
                        "a paying user needs a channel to a liquidity provider",
                    ));
                }
            }
        }

        for (i, fault) in self.faults.iter().enumerate() {
            let f = |n: &str| format!("faults[{i}].{n}");
            if !known(&fault.target) {
                errs.push(ScenarioError::unknown(f("target"), &fault.target));
            }
            match (fault.kind, fault.duration) {
                (FaultKind::Crash, None) => {
                    errs.push(ScenarioError::constraint(f("duration"), "crash needs a duration"))
                }
                (FaultKind::Crash, Some(0)) => errs.push(ScenarioError::constraint(f("duration"), "must be >= 1")),
                (FaultKind::Crash, Some(_)) | (_, None) => {}
                (_, Some(_)) => {
                    errs.push(ScenarioError::constraint(f("duration"), "only crash faults take a duration"))
                }
            }
        }

        for (i, c) in self.closes.iter().enumerate() {
            if c.channel >= self.channels.len() {
                errs.push(ScenarioError::unknown(format!("closes[{i}].channel"), c.channel));
            }
        }

        let mut mined = BTreeSet::new();
        for (i, m) in self.mining.iter().enumerate() {
            if !chain_ids.contains(&m.chain) {
                errs.push(ScenarioError::unknown(format!("mining[{i}].chain"), m.chain));
            }
            if m.every == 0 {
                errs.push(ScenarioError::constraint(format!("mining[{i}].every"), "must be >= 1"));
            }
            if !mined.insert(m.chain) {
                errs.push(ScenarioError::constraint(format!("mining[{i}].chain"), "one schedule per chain"));
            }
        }
        errs
    }

    /// Mining period and offset of `chain`.
    pub fn schedule(&self, chain: u32) -> (u64, u64) {
        match self.mining.iter().find(|m| m.chain == chain) {
            Some(m) => (m.every, m.offset % m.every),
            None => (self.chain(chain).map_or(1, |c| c.block_interval), 0),
        }
    }

    pub fn chain_of_asset(&self, asset: u32) -> Option<ChainId> {
        self.chains.iter().find(|c| c.asset == asset).map(|c| ChainId(c.id))
    }
}
