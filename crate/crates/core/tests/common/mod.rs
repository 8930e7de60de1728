//! Independent oracles shared by the integration suites. Nothing here
//! calls the code under test for the quantity it checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;

use vaultsim::analytics::Trade;
use vaultsim::guard::{GuardConfig, Verdict};
use vaultsim::market::{Leg, Pool, TokenId, TokenMeta, TradeSide};
use vaultsim::policy::ToolCall;
use vaultsim::vault::{Vault, VaultId};

pub fn big(x: u128) -> BigInt {
    BigInt::from(x)
}

pub fn ratio(n: u128, d: u128) -> BigRational {
    BigRational::new(big(n), big(d))
}

pub fn floor(r: &BigRational) -> u128 {
    r.floor().to_integer().to_u128().expect("non-negative and in range")
}

const SCALE: u128 = 1_000_000_000_000_000_000;

/// Nearest 18-decimal value of a float in `(0, 1)`, ties up.
pub fn fraction_raw(f: f64) -> u128 {
    if f >= 1.0 {
        return SCALE;
    }
    let exact = BigRational::from_float(f).expect("finite") * BigRational::from_integer(big(SCALE));
    let half = BigRational::new(1.into(), 2.into());
    floor(&(exact + half))
}

/// Buy output for `x` wei in, with protocol and LP fees floored off the input.
pub fn buy_out(e: u128, t: u128, x: u128, fees: (u32, u32)) -> u128 {
    let fp = floor(&ratio(x * fees.0 as u128, 10_000));
    let fl = floor(&ratio(x * fees.1 as u128, 10_000));
    let eff = x - fp - fl;
    floor(&BigRational::new(big(t) * big(eff), big(e) + big(eff)))
}

/// Sell output for `y` tokens in, with fees floored off the gross ETH.
pub fn sell_out(e: u128, t: u128, y: u128, fees: (u32, u32)) -> u128 {
    let gross = floor(&BigRational::new(big(e) * big(y), big(t) + big(y)));
    gross - floor(&ratio(gross * fees.0 as u128, 10_000)) - floor(&ratio(gross * fees.1 as u128, 10_000))
}

/// What an independent re-evaluation of a call concludes.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardOracle {
    /// 1-based indices of every failing check.
    pub failing: BTreeSet<u8>,
    /// `(amount in, amount out, min out)` when nothing fails on a trade.
    pub amounts: Option<(u128, u128, u128)>,
}

pub fn guard_oracle(
    call: &ToolCall,
    vault: &Vault,
    tokens: &BTreeMap<TokenId, TokenMeta>,
    pools: &BTreeMap<TokenId, Pool>,
    cfg: &GuardConfig,
    now: u64,
) -> GuardOracle {
    let mut failing = BTreeSet::new();
    if vault.paused || vault.closed {
        failing.insert(1);
    }
    let (token, fraction, buy) = match call {
        ToolCall::Observe { .. } => return GuardOracle { failing, amounts: None },
        ToolCall::Buy { token, fraction, .. } => (token, *fraction, true),
        ToolCall::Sell { token, fraction, .. } => (token, *fraction, false),
    };
    let live = tokens.get(token).is_some_and(|m| !m.delisted && m.launched_at <= now)
        && pools.get(token).is_some_and(|p| !p.delisted)
        && cfg.allowlist.as_ref().is_none_or(|a| a.contains(token));
    if !live {
        failing.insert(2);
    }
    let valid_fraction = fraction > 0.0 && fraction <= 1.0;
    if !valid_fraction {
        failing.insert(3);
        return GuardOracle { failing, amounts: None };
    }
    let balance = if buy { vault.eth_balance.raw() } else { vault.positions.get(token).map_or(0, |p| p.balance.raw()) };
    let amount = floor(&(ratio(balance, 1) * ratio(fraction_raw(fraction), SCALE)));
    if balance == 0 {
        failing.insert(4);
    } else if amount == 0 {
        failing.insert(3);
    }
    if buy {
        let max = floor(&ratio(balance * cfg.max_trade_bps as u128, 10_000));
        if amount > max {
            failing.insert(4);
        }
        if let Some(limit) = cfg.max_positions {
            if !vault.positions.contains_key(token) && vault.positions.len() >= limit {
                failing.insert(4);
            }
        }
        if let Some(meta) = tokens.get(token).filter(|_| live) {
            let age_min = (now - meta.launched_at) * 5;
            if age_min < 50 && amount > SCALE / 100 * (1 + age_min as u128 / 5) {
                failing.insert(5);
            }
        }
    }
    let mut amounts = None;
    if live && amount > 0 {
        let pool = &pools[token];
        let (e, t) = (pool.eth_reserve.raw(), pool.token_reserve.raw());
        let fees = (pool.fees.protocol_fee_bps, pool.fees.lp_fee_bps);
        let out = if buy { buy_out(e, t, amount, fees) } else { sell_out(e, t, amount, fees) };
        if out == 0 {
            failing.insert(3);
        } else {
            let m = cfg.max_price_impact_bps as u128;
            let spot = ratio(e, t);
            let exceeds =
                if buy { ratio(amount, out) > ratio(10_000 + m, 10_000) * spot } else { m < 10_000 && ratio(out, amount) < ratio(10_000 - m, 10_000) * spot };
            if exceeds {
                failing.insert(6);
            }
            let min_out = floor(&ratio(out * (10_000 - cfg.slippage_bps.min(10_000) as u128), 10_000));
            amounts = Some((amount, out, min_out));
        }
    }
    GuardOracle { failing, amounts }
}

/// Checks a verdict against the oracle: acceptance iff no check fails, the
/// accepted amounts match, and a rejection names the earliest failure.
pub fn check_verdict(verdict: &Verdict, oracle: &GuardOracle, is_trade: bool) -> Result<(), String> {
    match (verdict, oracle.failing.first()) {
        (Verdict::Accepted(a), None) => {
            if !is_trade {
                return Ok(());
            }
            let (Some(q), Some(min), Some((amount, out, min_out))) = (&a.quote, a.min_output, oracle.amounts) else {
                return Err("accepted trade without quote".into());
            };
            let got = (q.amount_in().raw(), q.amount_out().raw(), min.raw());
            if got != (amount, out, min_out) {
                return Err(format!("amounts {got:?} != oracle {:?}", (amount, out, min_out)));
            }
            if !matches!((q.side, min), (TradeSide::Buy, Leg::Tokens(_)) | (TradeSide::Sell, Leg::Eth(_))) {
                return Err("min output in the wrong unit".into());
            }
            Ok(())
        }
        (Verdict::Accepted(_), Some(first)) => Err(format!("accepted but check {first} fails ({:?})", oracle.failing)),
        (Verdict::Rejected(r), None) => Err(format!("rejected {} but every check passes", r.code)),
        (Verdict::Rejected(r), Some(first)) => {
            if r.code.check_index() == *first {
                Ok(())
            } else {
                Err(format!("code {} (check {}) but earliest failure is {first} of {:?}", r.code, r.code.check_index(), oracle.failing))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteCascade {
    pub token: TokenId,
    pub start_ms: u64,
    pub end_ms: u64,
    pub sells: usize,
    pub vaults: usize,
    pub median_gap_ms: f64,
}

/// Every sell starts a candidate window; qualifying windows that overlap
/// merge. Quadratic by construction.
pub fn brute_cascades(trades: &[Trade], k: usize, window_ms: u64) -> Vec<BruteCascade> {
    let mut tokens: Vec<&TokenId> = trades.iter().filter(|t| t.side == TradeSide::Sell).map(|t| &t.token).collect();
    tokens.sort();
    tokens.dedup();
    let mut out = Vec::new();
    for token in tokens {
        let mut sells: Vec<(u64, VaultId)> = trades.iter().filter(|t| t.side == TradeSide::Sell && &t.token == token).map(|t| (t.time_ms, t.vault)).collect();
        sells.sort_by_key(|s| s.0);
        // qualifying windows as (start index, end time, last index inside)
        let mut windows = Vec::new();
        for i in 0..sells.len() {
            let end = sells[i].0 + window_ms;
            let inside: Vec<usize> = (i..sells.len()).take_while(|&j| sells[j].0 < end).collect();
            let vaults: BTreeSet<VaultId> = inside.iter().map(|&j| sells[j].1).collect();
            if vaults.len() >= k {
                windows.push((i, end, *inside.last().expect("contains i")));
            }
        }
        let mut groups: Vec<(usize, u64, usize)> = Vec::new();
        for (i, end, last) in windows {
            match groups.last_mut() {
                Some(g) if sells[i].0 < g.1 => {
                    g.1 = g.1.max(end);
                    g.2 = g.2.max(last);
                }
                _ => groups.push((i, end, last)),
            }
        }
        for (first, _, last) in groups {
            let span = &sells[first..=last];
            let mut gaps: Vec<f64> = Vec::new();
            for w in span.windows(2) {
                if w[0].1 != w[1].1 {
                    gaps.push((w[1].0 - w[0].0) as f64);
                }
            }
            gaps.sort_by(f64::total_cmp);
            let median = match gaps.len() {
                0 => 0.0,
                n if n % 2 == 1 => gaps[n / 2],
                n => (gaps[n / 2 - 1] + gaps[n / 2]) / 2.0,
            };
            out.push(BruteCascade {
                token: token.clone(),
                start_ms: span[0].0,
                end_ms: span[span.len() - 1].0,
                sells: span.len(),
                vaults: span.iter().map(|s| s.1).collect::<BTreeSet<_>>().len(),
                median_gap_ms: median,
            });
        }
    }
    out
}

/// Two-sided share by direct pairwise comparison.
pub fn brute_two_sided(trades: &[Trade], window_ms: u64, tiled: bool) -> Option<f64> {
    if trades.is_empty() {
        return None;
    }
    let inside = trades
        .iter()
        .filter(|a| {
            trades.iter().any(|b| {
                b.token == a.token
                    && b.side != a.side
                    && if tiled { a.time_ms / window_ms == b.time_ms / window_ms } else { a.time_ms.abs_diff(b.time_ms) < window_ms }
            })
        })
        .count();
    Some(inside as f64 / trades.len() as f64)
}
