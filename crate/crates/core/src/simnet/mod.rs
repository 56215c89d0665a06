//! Deterministic discrete-time simulation of users, liquidity providers and
//! businesses paying each other across several chains, with fault injection
//! and invariant checking.

mod generate;
mod report;
mod runtime;
mod scenario;

pub use generate::random_scenario;
pub use report::{
    ActorBalances, AssetBalance, ChainTxCount, EventRecord, GossipStats, HopRecord, PaymentRecord, PaymentStatus,
    Report, SimEvent, Violation,
};
pub use runtime::{run_scenario, CLAIM_MARGIN};
pub use scenario::{
    validate_scenario, ActorSpec, Allocation, ChainSpec, ChannelSpec, CloseSpec, FaultKind, FaultSpec, MiningSpec,
    PaymentSpec, QuoteSpec, Role, Scenario, ScenarioError,
};

/// Bundled example scenarios, by name.
pub const DEMOS: &[(&str, &str)] = &[
    ("single-hop", include_str!("../../scenarios/single-hop.json")),
    ("cross-chain-2lp", include_str!("../../scenarios/cross-chain-2lp.json")),
    ("refund-cascade", include_str!("../../scenarios/refund-cascade.json")),
    ("breach-punish", include_str!("../../scenarios/breach-punish.json")),
];

pub fn demo(name: &str) -> Option<&'static str> {
    DEMOS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}
