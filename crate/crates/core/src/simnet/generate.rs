//! Random scenarios for the property suites: up to three chains, three to
//! six actors with at least one liquidity provider, and exactly one injected
//! fault.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::scenario::{
    ActorSpec, Allocation, ChainSpec, ChannelSpec, CloseSpec, FaultKind, FaultSpec, PaymentSpec, QuoteSpec, Role,
    Scenario,
};
use crate::chainlab::HashFnId;
use crate::crp::TimelockPolicy;

const FAULTS: [FaultKind; 5] = [
    FaultKind::RefuseForward,
    FaultKind::StallSecret,
    FaultKind::BroadcastRevoked,
    FaultKind::DropGossip,
    FaultKind::Crash,
];

/// Builds a valid random scenario from `seed`. Every chain mines once per
/// tick.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_chains = rng.gen_range(1..=3u32);
    let n_actors = rng.gen_range(3..=6usize);

    let mut roles = vec![Role::LiquidityProvider];
    for _ in 1..n_actors {
        roles.push(*[Role::User, Role::LiquidityProvider, Role::Business].choose(&mut rng).expect("non-empty"));
    }
    roles.shuffle(&mut rng);
    let actors: Vec<ActorSpec> = roles
        .iter()
        .enumerate()
        .map(|(i, role)| {
            let prefix = match role {
                Role::User => "user",
                Role::LiquidityProvider => "lp",
                Role::Business => "biz",
            };
            ActorSpec { id: format!("{prefix}{i}"), role: *role }
        })
        .collect();
    let lps: Vec<usize> = (0..n_actors).filter(|i| roles[*i] == Role::LiquidityProvider).collect();

    let chains: Vec<ChainSpec> = (1..=n_chains)
        .map(|id| {
            let mut hash_fns: Vec<HashFnId> = HashFnId::ALL
                .into_iter()
                .filter(|f| rng.gen_bool(if *f == HashFnId::Sha256 { 0.85 } else { 0.4 }))
                .collect();
            if hash_fns.is_empty() {
                hash_fns.push(*HashFnId::ALL.choose(&mut rng).expect("non-empty"));
            }
            ChainSpec {
                id,
                asset: id,
                hash_fns,
                tx_fee: rng.gen_range(0..=2),
                block_interval: 1,
                start_height: rng.gen_range(0..50),
                genesis: actors.iter().map(|a| Allocation { actor: a.id.clone(), amount: 60_000 }).collect(),
            }
        })
        .collect();

    // Every non-LP hangs off one or two LPs; LPs form a random tree plus the
    // odd extra edge, so the graph is connected.
    let mut channels = Vec::new();
    let push = |rng: &mut ChaCha20Rng, a: usize, b: usize, channels: &mut Vec<ChannelSpec>| {
        let chain = rng.gen_range(1..=n_chains);
        let dup = channels.iter().any(|c: &ChannelSpec| {
            c.chain == chain
                && ((c.a == actors[a].id && c.b == actors[b].id) || (c.a == actors[b].id && c.b == actors[a].id))
        });
        if a != b && !dup {
            channels.push(ChannelSpec {
                chain,
                a: actors[a].id.clone(),
                b: actors[b].id.clone(),
                fund_a: rng.gen_range(2_000..=8_000),
                // LPs bring liquidity to every channel they are in.
                fund_b: if roles[b] == Role::LiquidityProvider || rng.gen_bool(0.5) {
                    rng.gen_range(1_000..=6_000)
                } else {
                    0
                },
            });
        }
    };
    for (k, &lp) in lps.iter().enumerate().skip(1) {
        let parent = lps[rng.gen_range(0..k)];
        push(&mut rng, parent, lp, &mut channels);
    }
    if lps.len() > 2 && rng.gen_bool(0.5) {
        let (x, y) = (*lps.choose(&mut rng).expect("lp"), *lps.choose(&mut rng).expect("lp"));
        push(&mut rng, x, y, &mut channels);
    }
    for i in (0..n_actors).filter(|i| roles[*i] != Role::LiquidityProvider) {
        let links = if rng.gen_bool(0.3) { 2 } else { 1 };
        for _ in 0..links {
            let lp = *lps.choose(&mut rng).expect("lp");
            push(&mut rng, i, lp, &mut channels);
        }
    }

    let mut quotes = Vec::new();
    for &lp in &lps {
        for asset_in in 1..=n_chains {
            for asset_out in 1..=n_chains {
                let (rate_num, rate_den) =
                    if asset_in == asset_out { (1, 1) } else { (rng.gen_range(1..=4), rng.gen_range(1..=4)) };
                quotes.push(QuoteSpec {
                    lp: actors[lp].id.clone(),
                    asset_in,
                    asset_out,
                    rate_num,
                    rate_den,
                    base_fee: rng.gen_range(0..=5),
                    fee_ppm: rng.gen_range(0..=5_000),
                });
            }
        }
    }

    // Senders need a channel; users need one to an LP, which they always have.
    let connected: Vec<usize> =
        (0..n_actors).filter(|i| channels.iter().any(|c| c.a == actors[*i].id || c.b == actors[*i].id)).collect();
    let payers: Vec<usize> = connected.iter().copied().filter(|i| roles[*i] != Role::LiquidityProvider).collect();
    let payers = if payers.is_empty() { &connected } else { &payers };
    let mut payments = Vec::new();
    for _ in 0..rng.gen_range(1..=4) {
        let from = *payers.choose(&mut rng).expect("someone has a channel");
        let to = *connected.iter().filter(|x| **x != from).collect::<Vec<_>>().choose(&mut rng).expect("two actors");
        // Pay in an asset the recipient has a channel in.
        let reachable: Vec<&ChainSpec> = chains
            .iter()
            .filter(|c| {
                channels.iter().any(|ch| ch.chain == c.id && (ch.a == actors[*to].id || ch.b == actors[*to].id))
            })
            .collect();
        let chain = *reachable.choose(&mut rng).expect("recipient has a channel");
        payments.push(PaymentSpec {
            tick: rng.gen_range(2..20),
            from: actors[from].id.clone(),
            to: actors[*to].id.clone(),
            amount: rng.gen_range(1..=1_500),
            asset: chain.asset,
            hash_fn: *chain.hash_fns.choose(&mut rng).expect("non-empty"),
        });
    }

    let policy = TimelockPolicy { final_delta: rng.gen_range(6..=10), hop_delta: rng.gen_range(6..=10) };
    let kind = *FAULTS.choose(&mut rng).expect("non-empty");
    let faults = vec![FaultSpec {
        tick: rng.gen_range(0..25),
        kind,
        target: actors.choose(&mut rng).expect("actors").id.clone(),
        duration: (kind == FaultKind::Crash).then(|| rng.gen_range(1..=2 * policy.hop_delta)),
    }];
    let closes = if !channels.is_empty() && rng.gen_bool(0.3) {
        vec![CloseSpec { tick: rng.gen_range(10..40), channel: rng.gen_range(0..channels.len()) }]
    } else {
        Vec::new()
    };

    Scenario {
        seed,
        policy,
        csv_delay: rng.gen_range(2..=8),
        chains,
        actors,
        channels,
        quotes,
        payments,
        faults,
        closes,
        mining: Vec::new(),
    }
}
