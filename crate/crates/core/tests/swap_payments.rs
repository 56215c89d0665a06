mod common;

use std::collections::BTreeSet;

use comit_core::chainlab::{AssetId, ChainId, HashFnId};
use comit_core::channels::ChannelConfig;
use comit_core::crp::{compute_hop_amounts, find_route, NodeId, RateQuote, Route};
use comit_core::swap::{
    dispatch_payment, make_invoice, refund_sweep, settle_hop, settle_payment, AttemptStatus, HopOutcome, Invoice,
    Network, PaymentAttempt, SwapError, TimelockPolicy,
};
use common::{network, ChainSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const FUND: u64 = 100_000;

fn rng() -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(42)
}

fn route(net: &Network, quotes: &[(NodeId, RateQuote)], from: NodeId, inv: &Invoice) -> Route {
    let mut graph = net.graph();
    for (node, q) in quotes {
        let mut all = graph.quote(*node, q.asset_in, q.asset_out).into_iter().copied().collect::<Vec<_>>();
        all.retain(|x| x != q);
        all.push(*q);
        let mut existing: Vec<RateQuote> = Vec::new();
        for (n2, q2) in quotes {
            if n2 == node {
                existing.push(*q2);
            }
        }
        graph.set_quotes(*node, existing);
    }
    find_route(&graph, from, inv.recipient, inv.amount, inv.asset, Some(inv.hash_fn)).expect("route exists")
}

/// Per-node per-asset totals.
fn totals(net: &Network, ids: &[NodeId], assets: &[u32]) -> Vec<Vec<u64>> {
    ids.iter().map(|n| assets.iter().map(|a| net.total_balance(*n, AssetId(*a))).collect()).collect()
}

fn fees(net: &Network, ids: &[NodeId], assets: &[u32]) -> Vec<Vec<u64>> {
    ids.iter().map(|n| assets.iter().map(|a| net.fees_paid(*n, AssetId(*a))).collect()).collect()
}

/// S - L1 - L2 - R on three chains with assets 1, 2, 3; channels funded by
/// the upstream side.
fn three_chain_line(fee: u64) -> (Network, Vec<NodeId>, Vec<(NodeId, RateQuote)>) {
    let chains: Vec<ChainSpec> = (1..=3).map(|i| ChainSpec::new(i, i, 100 * i as u64).with_fee(fee)).collect();
    let (mut net, ids) = network(&chains, &["s", "l1", "l2", "r"], FUND);
    for (i, pair) in ids.windows(2).enumerate() {
        net.open_channel(ChainId(i as u32 + 1), pair[0], pair[1], 20_000, 0, ChannelConfig::default()).unwrap();
    }
    let quotes = vec![
        (
            ids[1],
            RateQuote {
                asset_in: AssetId(1),
                asset_out: AssetId(2),
                rate_num: 3,
                rate_den: 2,
                base_fee: 3,
                fee_ppm: 2_500,
            },
        ),
        (
            ids[2],
            RateQuote {
                asset_in: AssetId(2),
                asset_out: AssetId(3),
                rate_num: 1,
                rate_den: 4,
                base_fee: 1,
                fee_ppm: 10_000,
            },
        ),
    ];
    (net, ids, quotes)
}

fn same_chain_line(n: usize) -> (Network, Vec<NodeId>, Vec<(NodeId, RateQuote)>) {
    let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let (mut net, ids) = network(&[ChainSpec::new(1, 1, 100)], &refs, FUND);
    for pair in ids.windows(2) {
        net.open_channel(ChainId(1), pair[0], pair[1], 20_000, 0, ChannelConfig::default()).unwrap();
    }
    let q = RateQuote {
        asset_in: AssetId(1),
        asset_out: AssetId(1),
        rate_num: 1,
        rate_den: 1,
        base_fee: 2,
        fee_ppm: 1_000,
    };
    let quotes = ids[1..n - 1].iter().map(|id| (*id, q)).collect();
    (net, ids, quotes)
}

#[test]
fn single_hop_payment_carries_the_amount() {
    let (mut net, ids, quotes) = same_chain_line(2);
    let inv = make_invoice(ids[1], 1000, AssetId(1), HashFnId::Sha256, &mut rng());
    let r = route(&net, &quotes, ids[0], &inv);
    let mut attempt =
        dispatch_payment(&mut net, &inv.public(), &r, &TimelockPolicy::default(), &mut rng(), &|_, _| false).unwrap();
    assert_eq!(attempt.htlcs.len(), 1);
    assert_eq!(attempt.htlcs[0].amount, 1000);
    assert_eq!(attempt.status, AttemptStatus::Pending);
    settle_payment(&mut net, &mut attempt, &inv.secret).unwrap();
    assert_eq!(net.channel_balance(ids[1], AssetId(1)), 1000);
    assert_eq!(net.channel_balance(ids[0], AssetId(1)), 19_000);
}

#[test]
fn refusing_middle_node_refunds_everything() {
    let (mut net, ids, quotes) = same_chain_line(4);
    let before = totals(&net, &ids, &[1]);
    let inv = make_invoice(ids[3], 500, AssetId(1), HashFnId::Sha256, &mut rng());
    let r = route(&net, &quotes, ids[0], &inv);
    let err = dispatch_payment(&mut net, &inv.public(), &r, &TimelockPolicy::default(), &mut rng(), &|i, _| i == 1)
        .unwrap_err();
    let SwapError::HopAddFailed { hop_index, attempt, .. } = err else { panic!("expected hop failure") };
    assert_eq!(hop_index, 1);
    assert_eq!(attempt.status, AttemptStatus::Refunded);
    assert_eq!(attempt.htlcs.len(), 1);
    assert_eq!(net.htlc_outcome(attempt.htlcs[0].channel, attempt.htlcs[0].htlc_id), HopOutcome::Failed);
    assert_eq!(totals(&net, &ids, &[1]), before);
}

/// Largest convertible amount fitting into `amount_in`, by linear scan.
fn brute_forward(q: &RateQuote, amount_in: u64) -> u64 {
    let mut pre = amount_in;
    loop {
        let fee = q.base_fee as u128 + (pre as u128 * q.fee_ppm as u128).div_ceil(1_000_000);
        if pre as u128 + fee <= amount_in as u128 {
            return (pre as u128 * q.rate_num as u128 / q.rate_den as u128) as u64;
        }
        if pre == 0 {
            return 0;
        }
        pre -= 1;
    }
}

#[test]
fn cross_chain_hop_amounts_follow_the_quote() {
    let chains = [ChainSpec::new(1, 1, 100), ChainSpec::new(2, 2, 500)];
    let (mut net, ids) = network(&chains, &["s", "lp", "r"], FUND);
    net.open_channel(ChainId(1), ids[0], ids[1], 20_000, 0, ChannelConfig::default()).unwrap();
    net.open_channel(ChainId(2), ids[1], ids[2], 50_000, 0, ChannelConfig::default()).unwrap();
    // One unit of asset 1 buys ten of asset 2.
    let q = RateQuote {
        asset_in: AssetId(1),
        asset_out: AssetId(2),
        rate_num: 10,
        rate_den: 1,
        base_fee: 2,
        fee_ppm: 3_000,
    };
    let inv = make_invoice(ids[2], 12_345, AssetId(2), HashFnId::Sha256, &mut rng());
    let r = route(&net, &[(ids[1], q)], ids[0], &inv);
    let attempt =
        dispatch_payment(&mut net, &inv.public(), &r, &TimelockPolicy::default(), &mut rng(), &|_, _| false).unwrap();
    let amounts: Vec<u64> = attempt.htlcs.iter().map(|h| h.amount).collect();
    let expected: Vec<u64> = compute_hop_amounts(&[q], 12_345).unwrap().iter().map(|(a, _)| *a).collect();
    assert_eq!(amounts, expected);
    // Forward application from the sender's amount covers the invoice, and
    // one unit less would not.
    assert!(brute_forward(&q, amounts[0]) >= 12_345);
    assert!(brute_forward(&q, amounts[0] - 1) < 12_345);
    assert_eq!(amounts[1], 12_345);
}

#[test]
fn three_hop_settlement_credits_every_receiver() {
    let (mut net, ids, quotes) = three_chain_line(0);
    let inv = make_invoice(ids[3], 700, AssetId(3), HashFnId::Sha256, &mut rng());
    let r = route(&net, &quotes, ids[0], &inv);
    let mut attempt =
        dispatch_payment(&mut net, &inv.public(), &r, &TimelockPolicy::default(), &mut rng(), &|_, _| false).unwrap();
    let snapshot: Vec<_> = net.slots().iter().map(|s| s.channel.latest().clone()).collect();
    assert!(matches!(settle_payment(&mut net, &mut attempt, &[7; 32]), Err(SwapError::BadPreimage)));
    let after: Vec<_> = net.slots().iter().map(|s| s.channel.latest().clone()).collect();
    assert_eq!(snapshot, after);

    settle_payment(&mut net, &mut attempt, &inv.secret).unwrap();
    assert_eq!(attempt.status, AttemptStatus::Settled { secret: inv.secret });
    for (i, h) in attempt.htlcs.iter().enumerate() {
        let asset = AssetId(i as u32 + 1);
        let slot = net.slot(h.channel);
        assert_eq!(slot.channel.balance(slot.party_of(h.receiver).unwrap()), h.amount);
        assert_eq!(net.htlc_outcome(h.channel, h.htlc_id), HopOutcome::Fulfilled);
        assert!(slot.channel.pending_htlcs().is_empty(), "{asset}");
    }
    for l in net.ledgers() {
        assert_eq!(l.confirmed_count(), 1, "only the funding transaction");
    }
}

#[test]
fn payment_hash_cannot_be_reused() {
    let (mut net, ids, quotes) = same_chain_line(3);
    let inv = make_invoice(ids[2], 100, AssetId(1), HashFnId::Sha256, &mut rng());
    let r = route(&net, &quotes, ids[0], &inv);
    let mut a =
        dispatch_payment(&mut net, &inv.public(), &r, &TimelockPolicy::default(), &mut rng(), &|_, _| false).unwrap();
    settle_payment(&mut net, &mut a, &inv.secret).unwrap();
    let again = dispatch_payment(&mut net, &inv.public(), &r, &TimelockPolicy::default(), &mut rng(), &|_, _| false);
    assert!(matches!(again, Err(SwapError::HashReused)));
}

fn chains_of(net: &Network) -> Vec<ChainId> {
    net.ledgers().map(|l| l.params().chain_id).collect()
}

/// Mines one block everywhere, then lets `watchers` act on chain.
fn step(net: &mut Network, watchers: &[NodeId]) {
    for c in chains_of(net) {
        net.mine(c, 1);
    }
    for w in watchers {
        net.watch_chain(*w, true);
    }
}

fn expected_totals(
    initial: &[Vec<u64>],
    initial_fees: &[Vec<u64>],
    attempt: &PaymentAttempt,
    net: &Network,
    ids: &[NodeId],
    assets: &[u32],
) -> Vec<Vec<u64>> {
    let paid = fees(net, ids, assets);
    let mut out = initial.to_vec();
    for (n, row) in out.iter_mut().enumerate() {
        for (a, v) in row.iter_mut().enumerate() {
            *v -= paid[n][a] - initial_fees[n][a];
        }
    }
    for (i, h) in attempt.htlcs.iter().enumerate() {
        if net.htlc_outcome(h.channel, h.htlc_id) == HopOutcome::Fulfilled {
            let a = assets.iter().position(|x| *x == attempt.route.hops[i].asset.0).unwrap();
            let from = ids.iter().position(|x| *x == h.offerer).unwrap();
            let to = ids.iter().position(|x| *x == h.receiver).unwrap();
            out[from][a] -= h.amount;
            out[to][a] += h.amount;
        }
    }
    out
}

/// A forwarding node learns the secret, then goes offline for `k` blocks
/// before fulfilling upstream. On recovery it force-closes its incoming
/// channel and claims with the preimage; the node upstream learns the
/// preimage from the chain and settles off-chain. Nobody loses anything.
#[test]
fn forwarder_crash_after_learning_secret_loses_nothing() {
    let policy = TimelockPolicy::default();
    for fee in [0, 2] {
        for crashed in [1usize, 2] {
            for k in 1..=policy.hop_delta {
                let (mut net, ids, quotes) = three_chain_line(fee);
                let assets = [1, 2, 3];
                let initial = totals(&net, &ids, &assets);
                let initial_fees = fees(&net, &ids, &assets);
                let inv = make_invoice(ids[3], 700, AssetId(3), HashFnId::Sha256, &mut rng());
                let r = route(&net, &quotes, ids[0], &inv);
                let mut attempt =
                    dispatch_payment(&mut net, &inv.public(), &r, &policy, &mut rng(), &|_, _| false).unwrap();
                for i in (crashed..3).rev() {
                    settle_hop(&mut net, &attempt, i, &inv.secret).unwrap();
                }
                let online: Vec<NodeId> = ids.iter().copied().filter(|n| *n != ids[crashed]).collect();
                for _ in 0..k {
                    step(&mut net, &online);
                }
                let incoming = attempt.htlcs[crashed - 1].clone();
                let height = net.ledger(net.slot(incoming.channel).channel.chain()).unwrap().height();
                assert!(height + 3 <= incoming.expiry, "recovery leaves time to claim");
                net.force_close(incoming.channel, ids[crashed], None).unwrap();
                for _ in 0..40 {
                    step(&mut net, &ids);
                    // Online nodes that learned the secret settle upstream off-chain.
                    for i in (0..crashed - 1).rev() {
                        let h = &attempt.htlcs[i];
                        let knows =
                            net.participant(h.receiver).unwrap().knows(HashFnId::Sha256, &inv.payment_hash).is_some();
                        if knows && net.htlc_outcome(h.channel, h.htlc_id) == HopOutcome::Pending {
                            settle_hop(&mut net, &attempt, i, &inv.secret).unwrap();
                        }
                    }
                }
                for h in &attempt.htlcs {
                    assert_eq!(
                        net.htlc_outcome(h.channel, h.htlc_id),
                        HopOutcome::Fulfilled,
                        "fee {fee} crash {crashed} k {k}"
                    );
                }
                attempt.status = AttemptStatus::Settled { secret: inv.secret };
                let want = expected_totals(&initial, &initial_fees, &attempt, &net, &ids, &assets);
                assert_eq!(totals(&net, &ids, &assets), want, "fee {fee} crash {crashed} k {k}");
                assert!(net.conservation_errors().is_empty());
            }
        }
    }
}

#[test]
fn unrevealed_secret_refunds_every_hop_cooperatively() {
    let (mut net, ids, quotes) = three_chain_line(1);
    let assets = [1, 2, 3];
    let before = totals(&net, &ids, &assets);
    let inv = make_invoice(ids[3], 700, AssetId(3), HashFnId::Sha256, &mut rng());
    let r = route(&net, &quotes, ids[0], &inv);
    let mut attempt =
        dispatch_payment(&mut net, &inv.public(), &r, &TimelockPolicy::default(), &mut rng(), &|_, _| false).unwrap();
    assert!(matches!(refund_sweep(&mut net, &mut attempt, &BTreeSet::new()), Err(SwapError::NotExpired)));
    for _ in 0..6 {
        step(&mut net, &[]);
    }
    refund_sweep(&mut net, &mut attempt, &BTreeSet::new()).unwrap();
    assert_eq!(attempt.status, AttemptStatus::Refunded);
    assert_eq!(totals(&net, &ids, &assets), before);
}

#[test]
fn stalling_middle_node_is_refunded_on_chain() {
    let (mut net, ids, quotes) = three_chain_line(1);
    let assets = [1, 2, 3];
    let initial = totals(&net, &ids, &assets);
    let initial_fees = fees(&net, &ids, &assets);
    let inv = make_invoice(ids[3], 700, AssetId(3), HashFnId::Sha256, &mut rng());
    let r = route(&net, &quotes, ids[0], &inv);
    let mut attempt =
        dispatch_payment(&mut net, &inv.public(), &r, &TimelockPolicy::default(), &mut rng(), &|_, _| false).unwrap();
    for _ in 0..6 {
        step(&mut net, &[]);
    }
    let stalling = BTreeSet::from([ids[2]]);
    refund_sweep(&mut net, &mut attempt, &stalling).unwrap();
    let mid = &attempt.htlcs[1];
    assert_eq!(net.htlc_outcome(mid.channel, mid.htlc_id), HopOutcome::Failed);
    assert!(net.slot(mid.channel).channel.phase().is_closing());
    assert!(net.fees_paid(ids[1], AssetId(2)) > 0, "the refunding side paid for its transactions");
    let want = expected_totals(&initial, &initial_fees, &attempt, &net, &ids, &assets);
    assert_eq!(totals(&net, &ids, &assets), want);
}

/// S pays R through L: hop 0 on chain X (height 100), hop 1 on chain Y
/// (height 500). R reveals the secret on chain as late as possible, in the
/// block before its HTLC expires; S refuses to settle off-chain, broadcasts
/// as soon as its HTLC expires and always gets its transactions in first. Every order in which the two chains can
/// produce their next 12 blocks is explored. While X never leads Y by more
/// than `hop_delta - 2` blocks (the time L needs to confirm its commitment
/// and claim), L always collects its incoming HTLC; with a larger lead the
/// race can be lost, which shows the schedules actually stress the deadline.
#[test]
fn late_reveal_race_over_all_mining_interleavings() {
    let policy = TimelockPolicy::default();
    let (x, y) = (ChainId(1), ChainId(2));
    let chains = [ChainSpec::new(1, 1, 99), ChainSpec::new(2, 2, 499)];
    let (mut net, ids) = network(&chains, &["s", "l", "r"], FUND);
    let (s, l, r) = (ids[0], ids[1], ids[2]);
    net.open_channel(x, s, l, 20_000, 0, ChannelConfig::default()).unwrap();
    net.open_channel(y, l, r, 20_000, 0, ChannelConfig::default()).unwrap();
    assert_eq!(net.heights().values().copied().collect::<Vec<_>>(), vec![100, 500]);
    let q = RateQuote::identity(AssetId(1));
    let q = RateQuote { asset_out: AssetId(2), ..q };
    let inv = make_invoice(r, 1000, AssetId(2), HashFnId::Sha256, &mut rng());
    let rt = route(&net, &[(l, q)], s, &inv);
    let attempt = dispatch_payment(&mut net, &inv.public(), &rt, &policy, &mut rng(), &|_, _| false).unwrap();
    assert_eq!(attempt.expiries, vec![112, 506]);
    net.participant_mut(r).unwrap().learn(HashFnId::Sha256, &inv.secret);
    net.force_close(attempt.htlcs[1].channel, r, None).unwrap();
    let initial_l = net.total_balance(l, AssetId(1));

    let (mut within, mut lost_outside) = (0, 0);
    let mut stack = vec![(net, 0u32, 0u32, 0i64)];
    while let Some((state, depth, x_blocks, max_lead)) = stack.pop() {
        if depth == 12 {
            let mut state = state;
            for _ in 0..40 {
                for c in [x, y] {
                    race_step(&mut state, c, &attempt, &inv, [s, l, r]);
                }
            }
            let h = &attempt.htlcs[0];
            let won = state.htlc_outcome(h.channel, h.htlc_id) == HopOutcome::Fulfilled;
            if max_lead <= policy.hop_delta as i64 - 2 {
                within += 1;
                assert!(won, "L lost the race on a schedule with lead {max_lead}");
                let gain = state.total_balance(l, AssetId(1)) + state.fees_paid(l, AssetId(1)) - initial_l;
                assert_eq!(gain, h.amount);
            } else if !won {
                lost_outside += 1;
            }
            continue;
        }
        for c in [x, y] {
            let mut next = state.clone();
            race_step(&mut next, c, &attempt, &inv, [s, l, r]);
            let xb = x_blocks + u32::from(c == x);
            let lead = xb as i64 - (depth + 1 - xb) as i64;
            stack.push((next, depth + 1, xb, max_lead.max(lead)));
        }
    }
    assert!(within > 1000, "{within} schedules within the bound");
    assert!(lost_outside > 0);
}

fn race_step(net: &mut Network, chain: ChainId, attempt: &PaymentAttempt, inv: &Invoice, [s, l, r]: [NodeId; 3]) {
    net.mine(chain, 1);
    let y_height = net.ledger(ChainId(2)).unwrap().height();
    // R reveals only when its claim would confirm at expiry - 1.
    if y_height + 2 >= attempt.expiries[1] {
        net.watch_chain(r, true);
    }
    // S wants its money back the moment its HTLC expires, and acts first.
    let incoming = &attempt.htlcs[0];
    let x_height = net.ledger(ChainId(1)).unwrap().height();
    let open = !net.slot(incoming.channel).channel.phase().is_closing();
    if open
        && x_height + 1 >= incoming.expiry
        && net.htlc_outcome(incoming.channel, incoming.htlc_id) == HopOutcome::Pending
    {
        net.force_close(incoming.channel, s, None).unwrap();
    }
    net.watch_chain(s, true);
    net.watch_chain(l, true);
    let knows = net.participant(l).unwrap().knows(HashFnId::Sha256, &inv.payment_hash).is_some();
    if knows && !net.slot(incoming.channel).channel.phase().is_closing() {
        net.force_close(incoming.channel, l, None).unwrap();
    }
}
