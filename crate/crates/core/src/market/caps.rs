use serde::{Deserialize, Serialize};

use super::{quote_buy, quote_sell, Pool};
use crate::units::{mul_div, Eth, Tokens, BPS_DENOM};
use crate::{Tick, MINUTES_PER_TICK};

/// Cap for the first BUY on a freshly launched coin.
pub const NEW_COIN_BASE_CAP: Eth = Eth::from_raw(10_000_000_000_000_000);
/// Cap growth per five-minute step.
pub const NEW_COIN_CAP_STEP: Eth = Eth::from_raw(10_000_000_000_000_000);
pub const NEW_COIN_STEP_MINUTES: u64 = 5;
/// Age at which buys become uncapped; the boundary itself is uncapped.
pub const NEW_COIN_UNCAP_MINUTES: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "eth")]
pub enum CapResult {
    Capped(Eth),
    Uncapped,
}

impl CapResult {
    pub fn allows(&self, spend: Eth) -> bool {
        match self {
            CapResult::Capped(cap) => spend <= *cap,
            CapResult::Uncapped => true,
        }
    }
}

/// Per-BUY ETH limit on a token launched at `launched_at`.
pub fn new_coin_buy_cap(launched_at: Tick, now: Tick) -> CapResult {
    debug_assert!(now >= launched_at);
    new_coin_cap_at_age(now.saturating_sub(launched_at) * MINUTES_PER_TICK)
}

/// The cap as a function of token age in whole minutes.
pub fn new_coin_cap_at_age(age_min: u64) -> CapResult {
    if age_min >= NEW_COIN_UNCAP_MINUTES {
        return CapResult::Uncapped;
    }
    let steps = (age_min / NEW_COIN_STEP_MINUTES) as u128;
    CapResult::Capped(NEW_COIN_BASE_CAP + Eth(NEW_COIN_CAP_STEP.raw() * steps))
}

/// Largest ETH input whose fee-inclusive price impact stays within
/// `max_impact_bps`.
///
/// Closed form for `(E + f x) / (f E) <= 1 + m`, i.e.
/// `x <= E ((1 + m) f - 1) / f`, then stepped down until the exact
/// integer check agrees (floor rounding in the swap can cost a few wei).
pub fn max_buy_within_impact(pool: &Pool, max_impact_bps: u32) -> Eth {
    let fee = pool.fees.total_bps() as u128;
    let m = max_impact_bps as u128;
    let lhs = (BPS_DENOM + m) * (BPS_DENOM - fee);
    let sq = BPS_DENOM * BPS_DENOM;
    if lhs <= sq || pool.eth_reserve.is_zero() || pool.token_reserve.is_zero() {
        return Eth::ZERO;
    }
    let mut cap = mul_div(pool.eth_reserve.raw(), lhs - sq, BPS_DENOM * (BPS_DENOM - fee));
    while cap > 0 {
        match quote_buy(pool, Eth(cap)) {
            Ok(q) if !q.impact_exceeds(max_impact_bps) => break,
            _ => cap -= (cap / 1_000_000_000).max(1),
        }
    }
    Eth(cap)
}

/// Largest token input whose fee-inclusive sell impact stays within
/// `max_impact_bps`; `None` when no finite bound applies.
///
/// Closed form for `1 - f T / (T + y) <= m`, i.e. `y <= T (m - fee) / (1 - m)`.
pub fn max_sell_within_impact(pool: &Pool, max_impact_bps: u32) -> Option<Tokens> {
    let fee = pool.fees.total_bps() as u128;
    let m = max_impact_bps as u128;
    if m >= BPS_DENOM {
        return None;
    }
    if m <= fee || pool.eth_reserve.is_zero() || pool.token_reserve.is_zero() {
        return Some(Tokens::ZERO);
    }
    let mut cap = mul_div(pool.token_reserve.raw(), m - fee, BPS_DENOM - m);
    while cap > 0 {
        match quote_sell(pool, Tokens(cap)) {
            Ok(q) if !q.impact_exceeds(max_impact_bps) => break,
            _ => cap -= (cap / 1_000_000_000).max(1),
        }
    }
    Some(Tokens(cap))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{FeeSchedule, TokenId};

    fn eth(s: &str) -> Eth {
        s.parse().unwrap()
    }

    #[test]
    fn cap_steps() {
        assert_eq!(new_coin_buy_cap(0, 0), CapResult::Capped(eth("0.01")));
        // 25 minutes = 5 ticks
        assert_eq!(new_coin_buy_cap(10, 15), CapResult::Capped(eth("0.06")));
        assert_eq!(new_coin_buy_cap(10, 19), CapResult::Capped(eth("0.1")));
        assert_eq!(new_coin_buy_cap(10, 20), CapResult::Uncapped);
        assert!(CapResult::Capped(eth("0.01")).allows(eth("0.01")));
        assert!(!CapResult::Capped(eth("0.01")).allows(eth("0.05")));
    }

    #[test]
    fn impact_caps_are_tight() {
        let pool = Pool::new(TokenId::new("X"), Eth::from_whole(100), Tokens::from_whole(1_000_000), FeeSchedule::default());
        let buy = max_buy_within_impact(&pool, 1000);
        let q = quote_buy(&pool, buy).unwrap();
        assert!(!q.impact_exceeds(1000));
        let over = quote_buy(&pool, buy + Eth::from_whole(1).bps(100)).unwrap();
        assert!(over.impact_exceeds(1000));
        // closed form ~ 100 * (1.1 * 0.977 - 1) / 0.977 = 7.6458...
        assert!((buy.to_f64() - 7.64585).abs() < 1e-3, "{buy}");

        let sell = max_sell_within_impact(&pool, 1000).unwrap();
        let q = quote_sell(&pool, sell).unwrap();
        assert!(!q.impact_exceeds(1000));
        assert!(quote_sell(&pool, sell + Tokens::from_whole(10)).unwrap().impact_exceeds(1000));
        assert_eq!(max_sell_within_impact(&pool, 10_000), None);
        assert_eq!(max_buy_within_impact(&pool, 200), Eth::ZERO);
    }
}
