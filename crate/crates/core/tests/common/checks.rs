//! Comparisons of the implementation against `oracle`, shared by the
//! property suites and the acceptance run.

use comit_core::chainlab::{AssetId, HashFnId};
use comit_core::crp::{apply_quotes, compute_hop_amounts, find_route, RateQuote, RoutingError};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::oracle::{best, enumerate_routes, forward_amount, random_graph, random_quote, Candidate};

/// Draws a graph and a payment from `seed` and compares `find_route` with
/// exhaustive enumeration: same admissibility, same chosen route.
pub fn routing_agrees(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let g = random_graph(&mut rng);
    let sender = *g.nodes.choose(&mut rng).unwrap();
    let recipient = **g.nodes.iter().filter(|n| **n != sender).collect::<Vec<_>>().choose(&mut rng).unwrap();
    let asset = AssetId(rng.gen_range(1..=g.chains.len() as u32));
    let amount = rng.gen_range(1..=10_000);
    let hash_fn = if rng.gen_bool(0.5) { Some(*HashFnId::ALL.choose(&mut rng).unwrap()) } else { None };

    let candidates = enumerate_routes(&g, sender, recipient, amount, asset, hash_fn);
    match (find_route(&g.graph, sender, recipient, amount, asset, hash_fn), best(&candidates)) {
        (Ok(route), Some(expected)) => {
            let got = Candidate::from_route(&route);
            if !candidates.contains(&got) {
                return Err(format!("seed {seed}: returned route is not admissible: {got:?}"));
            }
            if got != *expected {
                return Err(format!("seed {seed}: find_route {got:?}, enumeration {expected:?}"));
            }
            Ok(())
        }
        (Err(RoutingError::NoRoute), None) => Ok(()),
        (got, expected) => Err(format!("seed {seed}: find_route {got:?}, enumeration {expected:?}")),
    }
}

/// A chain of up to five random quotes (asset 1 to 2 and onwards).
pub fn random_quote_chain(rng: &mut impl Rng) -> Vec<RateQuote> {
    (0..rng.gen_range(0..6)).map(|_| random_quote(rng, AssetId(1), AssetId(2))).collect()
}

/// `compute_hop_amounts` must return an `amount_in` that delivers at least
/// `out` when the quotes are applied forward, and one unit less must not.
pub fn no_shortfall(quotes: &[RateQuote], out: u64) -> Result<(), String> {
    let amounts = compute_hop_amounts(quotes, out).map_err(|e| e.to_string())?;
    if amounts.len() != quotes.len() + 1 || amounts.last().copied() != Some((out, 0)) {
        return Err(format!("malformed hop amounts {amounts:?}"));
    }
    let amount_in = amounts[0].0;
    let oracle = |x: u64| quotes.iter().fold(x as u128, |a, q| forward_amount(q, a as u64));
    if apply_quotes(quotes, amount_in) < out as u128 || oracle(amount_in) < out as u128 {
        return Err(format!("{quotes:?}: {amount_in} delivers less than {out}"));
    }
    if oracle(amount_in - 1) >= out as u128 {
        return Err(format!("{quotes:?}: {amount_in} is not minimal for {out}"));
    }
    Ok(())
}
