//! Integer rate and fee math. Rounding always goes against the sender, so
//! forwarding never delivers less than was asked for.

use serde::{Deserialize, Serialize};

use super::RoutingError;
use crate::chainlab::AssetId;

const PPM: u128 = 1_000_000;

/// An LP's terms for converting `asset_in` into `asset_out`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RateQuote {
    pub asset_in: AssetId,
    pub asset_out: AssetId,
    /// `asset_out` units per `rate_den` units of `asset_in`.
    pub rate_num: u64,
    pub rate_den: u64,
    /// Flat fee in `asset_in` units.
    pub base_fee: u64,
    /// Proportional fee in millionths of the converted `asset_in` amount.
    pub fee_ppm: u32,
}

impl RateQuote {
    pub fn identity(asset: AssetId) -> Self {
        RateQuote { asset_in: asset, asset_out: asset, rate_num: 1, rate_den: 1, base_fee: 0, fee_ppm: 0 }
    }

    pub fn validate(&self) -> Result<(), RoutingError> {
        if self.rate_num == 0 || self.rate_den == 0 {
            return Err(RoutingError::InvalidQuote("rate_num and rate_den must be >= 1"));
        }
        if self.fee_ppm >= 1_000_000 {
            return Err(RoutingError::InvalidQuote("fee_ppm must be < 1_000_000"));
        }
        Ok(())
    }

    /// Fee charged on a converted amount `pre`.
    pub fn fee_for(&self, pre: u64) -> Result<u64, RoutingError> {
        let proportional = (pre as u128 * self.fee_ppm as u128).div_ceil(PPM);
        to_u64(self.base_fee as u128 + proportional)
    }

    /// Smallest `(amount_in, fee)` that delivers at least `amount_out`.
    pub fn amount_in_for(&self, amount_out: u64) -> Result<(u64, u64), RoutingError> {
        let pre = to_u64((amount_out as u128 * self.rate_den as u128).div_ceil(self.rate_num as u128))?;
        let fee = self.fee_for(pre)?;
        Ok((pre.checked_add(fee).ok_or(RoutingError::Overflow)?, fee))
    }

    /// What forwarding `amount_in` delivers: the largest convertible amount
    /// whose fee fits, converted and rounded down.
    pub fn forward(&self, amount_in: u64) -> u128 {
        if amount_in < self.base_fee {
            return 0;
        }
        let (mut lo, mut hi) = (0u64, amount_in - self.base_fee);
        while lo < hi {
            let mid = lo + (hi - lo).div_ceil(2);
            let cost = mid as u128 + self.fee_for(mid).map_or(u128::MAX, u128::from);
            if cost <= amount_in as u128 {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo as u128 * self.rate_num as u128 / self.rate_den as u128
    }
}

fn to_u64(v: u128) -> Result<u64, RoutingError> {
    u64::try_from(v).map_err(|_| RoutingError::Overflow)
}

/// Per-hop `(amount, fee)` from sender to recipient. `quotes[i]` is the
/// quote of the node that receives hop `i` and forwards hop `i + 1`, so a
/// route of `n` hops takes `n - 1` quotes. The last hop carries `amount_out`
/// and no fee.
pub fn compute_hop_amounts(quotes: &[RateQuote], amount_out: u64) -> Result<Vec<(u64, u64)>, RoutingError> {
    let mut out = vec![(amount_out, 0)];
    let mut next = amount_out;
    for quote in quotes.iter().rev() {
        let (amount_in, fee) = quote.amount_in_for(next)?;
        out.push((amount_in, fee));
        next = amount_in;
    }
    out.reverse();
    Ok(out)
}

/// Forward application of `quotes` to `amount_in`: what the recipient gets.
pub fn apply_quotes(quotes: &[RateQuote], amount_in: u64) -> u128 {
    let mut amount = amount_in as u128;
    for quote in quotes {
        let Ok(a) = u64::try_from(amount) else { return u128::MAX };
        amount = quote.forward(a);
    }
    amount
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(num: u64, den: u64, base: u64, ppm: u32) -> RateQuote {
        RateQuote {
            asset_in: AssetId(1),
            asset_out: AssetId(2),
            rate_num: num,
            rate_den: den,
            base_fee: base,
            fee_ppm: ppm,
        }
    }

    #[test]
    fn identity_is_free() {
        assert_eq!(RateQuote::identity(AssetId(1)).amount_in_for(1000).unwrap(), (1000, 0));
        assert_eq!(compute_hop_amounts(&[], 1000).unwrap(), vec![(1000, 0)]);
    }

    #[test]
    fn conversion_with_proportional_fee() {
        let quote = q(10, 1, 0, 10_000);
        assert_eq!(quote.amount_in_for(10_000).unwrap(), (1010, 10));
        assert!(quote.forward(1010) >= 10_000);
        assert!(quote.forward(1009) < 10_000);
        assert_eq!(compute_hop_amounts(&[quote], 10_000).unwrap(), vec![(1010, 10), (10_000, 0)]);
    }

    #[test]
    fn stacked_base_fees_add_up() {
        let hop = RateQuote { base_fee: 5, ..RateQuote::identity(AssetId(1)) };
        let amounts = compute_hop_amounts(&[hop, hop], 1000).unwrap();
        assert_eq!(amounts, vec![(1010, 5), (1005, 5), (1000, 0)]);
    }

    #[test]
    fn overflow_is_reported() {
        assert_eq!(q(1, 2, 0, 0).amount_in_for(u64::MAX), Err(RoutingError::Overflow));
        assert_eq!(q(1, 1, u64::MAX, 0).amount_in_for(1), Err(RoutingError::Overflow));
    }

    #[test]
    fn quote_bounds() {
        assert!(q(0, 1, 0, 0).validate().is_err());
        assert!(q(1, 1, 0, 1_000_000).validate().is_err());
        assert!(q(1, 1, 0, 999_999).validate().is_ok());
    }

    #[test]
    fn amount_in_is_minimal() {
        for (num, den, base, ppm) in [(3, 7, 2, 1234), (1, 1, 0, 999_999), (100, 3, 17, 0), (5, 5, 1, 500_000)] {
            let quote = q(num, den, base, ppm);
            for out in [1u64, 2, 99, 1000, 123_457] {
                let (amount_in, _) = quote.amount_in_for(out).unwrap();
                assert!(quote.forward(amount_in) >= out as u128);
                assert!(quote.forward(amount_in - 1) < out as u128, "{quote:?} out {out}");
            }
        }
    }
}
