//! Hard-constraint validation. Every parsed call passes through here in a
//! fixed check order before anything touches a pool.
//!
//! Order: (1) vault live, (2) token allowed, (3) fraction in `(0, 1]` and
//! a non-zero amount and output, (4) max-trade and balance, optionally position count,
//! (5) new-coin cap, (6) price impact of the quote, (7) minimum output
//! under the slippage tolerance, (8) accept. Cooldowns are not checked:
//! they are brief-level guidance.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::market::{new_coin_buy_cap, quote_buy, quote_sell, CapResult, Leg, MarketError, Pool, SwapQuote, TokenId, TokenMeta};
use crate::policy::ToolCall;
use crate::units::{mul_div, Eth, Fraction, Tokens, BPS_DENOM, SCALE};
use crate::vault::Vault;
use crate::Tick;

pub const MAX_TRADE_BPS_RANGE: (u32, u32) = (500, 10_000);
pub const SLIPPAGE_BPS_RANGE: (u32, u32) = (10, 5_000);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuardConfig {
    /// Largest buy as basis points of available ETH.
    pub max_trade_bps: u32,
    pub slippage_bps: u32,
    pub max_price_impact_bps: u32,
    /// Optional hard cap on distinct positions; off by default.
    pub max_positions: Option<usize>,
    /// Further restricts the live-token set when present.
    pub allowlist: Option<BTreeSet<TokenId>>,
}

impl Default for GuardConfig {
    fn default() -> Self {
        GuardConfig { max_trade_bps: 10_000, slippage_bps: 100, max_price_impact_bps: 1_000, max_positions: None, allowlist: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GuardConfigError {
    #[error("max_trade_bps {0} outside 500..=10000")]
    MaxTrade(u32),
    #[error("slippage_bps {0} outside 10..=5000")]
    Slippage(u32),
    #[error("max_price_impact_bps must be positive")]
    Impact,
}

impl GuardConfig {
    pub fn validate(&self) -> Result<(), GuardConfigError> {
        if !(MAX_TRADE_BPS_RANGE.0..=MAX_TRADE_BPS_RANGE.1).contains(&self.max_trade_bps) {
            return Err(GuardConfigError::MaxTrade(self.max_trade_bps));
        }
        if !(SLIPPAGE_BPS_RANGE.0..=SLIPPAGE_BPS_RANGE.1).contains(&self.slippage_bps) {
            return Err(GuardConfigError::Slippage(self.slippage_bps));
        }
        if self.max_price_impact_bps == 0 {
            return Err(GuardConfigError::Impact);
        }
        Ok(())
    }

    /// The ETH a vault may spend on one buy.
    pub fn max_trade_eth(&self, eth_balance: Eth) -> Eth {
        Eth(mul_div(eth_balance.raw(), self.max_trade_bps as u128, BPS_DENOM))
    }

    pub fn is_allowed(&self, token: &TokenId) -> bool {
        self.allowlist.as_ref().is_none_or(|a| a.contains(token))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCode {
    VaultPaused,
    UnknownToken,
    ZeroAmount,
    InvalidFraction,
    ExceedsMaxTrade,
    InsufficientBalance,
    ExceedsPositionLimit,
    ExceedsNewCoinCap,
    ExceedsPriceImpact,
}

impl RejectCode {
    pub const ALL: [RejectCode; 9] = [
        RejectCode::VaultPaused,
        RejectCode::UnknownToken,
        RejectCode::ZeroAmount,
        RejectCode::InvalidFraction,
        RejectCode::ExceedsMaxTrade,
        RejectCode::InsufficientBalance,
        RejectCode::ExceedsPositionLimit,
        RejectCode::ExceedsNewCoinCap,
        RejectCode::ExceedsPriceImpact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RejectCode::VaultPaused => "vault_paused",
            RejectCode::UnknownToken => "unknown_token",
            RejectCode::ZeroAmount => "zero_amount",
            RejectCode::InvalidFraction => "invalid_fraction",
            RejectCode::ExceedsMaxTrade => "exceeds_max_trade",
            RejectCode::InsufficientBalance => "insufficient_balance",
            RejectCode::ExceedsPositionLimit => "exceeds_position_limit",
            RejectCode::ExceedsNewCoinCap => "exceeds_new_coin_cap",
            RejectCode::ExceedsPriceImpact => "exceeds_price_impact",
        }
    }

    /// Position in the fixed check order (1-based).
    pub fn check_index(self) -> u8 {
        match self {
            RejectCode::VaultPaused => 1,
            RejectCode::UnknownToken => 2,
            RejectCode::ZeroAmount | RejectCode::InvalidFraction => 3,
            RejectCode::ExceedsMaxTrade | RejectCode::InsufficientBalance | RejectCode::ExceedsPositionLimit => 4,
            RejectCode::ExceedsNewCoinCap => 5,
            RejectCode::ExceedsPriceImpact => 6,
        }
    }
}

impl fmt::Display for RejectCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    /// Absent for observations.
    pub quote: Option<SwapQuote>,
    pub min_output: Option<Leg>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub code: RejectCode,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum Verdict {
    Accepted(Acceptance),
    Rejected(Rejection),
}

impl Verdict {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Verdict::Accepted(_))
    }

    pub fn code(&self) -> Option<RejectCode> {
        match self {
            Verdict::Rejected(r) => Some(r.code),
            Verdict::Accepted(_) => None,
        }
    }
}

fn reject(code: RejectCode, detail: impl Into<String>) -> Verdict {
    Verdict::Rejected(Rejection { code, detail: detail.into() })
}

/// The live-token test shared by guard, brief and reap.
pub fn is_live(token: &TokenId, tokens: &BTreeMap<TokenId, TokenMeta>, pools: &BTreeMap<TokenId, Pool>, now: Tick) -> bool {
    let Some(meta) = tokens.get(token) else { return false };
    let Some(pool) = pools.get(token) else { return false };
    !meta.delisted && !pool.delisted && meta.launched_at <= now
}

/// Exact `floor(amount * fraction)` for a fraction already checked to be in `(0, 1]`.
fn take_fraction(amount: u128, fraction: f64) -> u128 {
    let f = Fraction::from_f64_clamped(fraction);
    mul_div(amount, f.raw(), SCALE)
}

/// ETH a buy of `fraction` would spend from `eth_balance`.
pub fn buy_spend(eth_balance: Eth, fraction: f64) -> Eth {
    Eth(take_fraction(eth_balance.raw(), fraction))
}

/// Tokens a sell of `fraction` would sell from `balance`; a fraction of
/// exactly one sells the whole balance.
pub fn sell_amount(balance: Tokens, fraction: f64) -> Tokens {
    Tokens(take_fraction(balance.raw(), fraction))
}

/// A quote that cannot be formed: a zero output is part of check (3).
fn quote_error(e: &MarketError) -> Verdict {
    match e {
        MarketError::OutputTooSmall | MarketError::ZeroAmount => reject(RejectCode::ZeroAmount, "swap output rounds to zero"),
        e => reject(RejectCode::UnknownToken, e.to_string()),
    }
}

pub fn validate(
    call: &ToolCall,
    vault: &Vault,
    tokens: &BTreeMap<TokenId, TokenMeta>,
    pools: &BTreeMap<TokenId, Pool>,
    cfg: &GuardConfig,
    now: Tick,
) -> Verdict {
    // (1)
    if vault.paused || vault.closed {
        return reject(RejectCode::VaultPaused, format!("vault {} is paused or closed", vault.id));
    }
    let (token, fraction, is_buy) = match call {
        ToolCall::Observe { .. } => return Verdict::Accepted(Acceptance { quote: None, min_output: None }),
        ToolCall::Buy { token, fraction, .. } => (token, *fraction, true),
        ToolCall::Sell { token, fraction, .. } => (token, *fraction, false),
    };
    // (2)
    if !is_live(token, tokens, pools, now) || !cfg.is_allowed(token) {
        return reject(RejectCode::UnknownToken, format!("{token} is not a live token"));
    }
    let pool = &pools[token];
    // (3)
    if fraction.is_nan() || fraction <= 0.0 {
        return reject(RejectCode::ZeroAmount, format!("fraction {fraction} is not positive"));
    }
    if fraction > 1.0 {
        return reject(RejectCode::InvalidFraction, format!("fraction {fraction} exceeds 1"));
    }
    let quote = if is_buy {
        let balance = vault.eth_balance;
        let spend = buy_spend(balance, fraction);
        if spend.is_zero() && !balance.is_zero() {
            return reject(RejectCode::ZeroAmount, format!("{fraction} of {balance} ETH rounds to zero"));
        }
        let quote = (!balance.is_zero()).then(|| quote_buy(pool, spend));
        if let Some(Err(e)) = &quote {
            return quote_error(e);
        }
        // (4)
        let max = cfg.max_trade_eth(balance);
        if balance.is_zero() || spend > balance {
            return reject(RejectCode::InsufficientBalance, format!("spend {spend} ETH exceeds balance {balance} ETH"));
        }
        if spend > max {
            return reject(RejectCode::ExceedsMaxTrade, format!("spend {spend} ETH exceeds max trade {max} ETH ({} bps)", cfg.max_trade_bps));
        }
        if let Some(limit) = cfg.max_positions {
            if vault.position(token).is_none() && vault.positions.len() >= limit {
                return reject(RejectCode::ExceedsPositionLimit, format!("already holding {limit} positions"));
            }
        }
        // (5)
        let cap = new_coin_buy_cap(tokens[token].launched_at, now);
        if !cap.allows(spend) {
            let CapResult::Capped(c) = cap else { unreachable!() };
            return reject(RejectCode::ExceedsNewCoinCap, format!("spend {spend} ETH exceeds new-coin cap {c} ETH"));
        }
        quote.expect("balance checked")
    } else {
        let balance = vault.position(token).map_or(Tokens::ZERO, |p| p.balance);
        let amount = sell_amount(balance, fraction);
        if amount.is_zero() && !balance.is_zero() {
            return reject(RejectCode::ZeroAmount, format!("{fraction} of {balance} {token} rounds to zero"));
        }
        let quote = (!balance.is_zero()).then(|| quote_sell(pool, amount));
        if let Some(Err(e)) = &quote {
            return quote_error(e);
        }
        // (4)
        if balance.is_zero() || amount > balance {
            return reject(RejectCode::InsufficientBalance, format!("sell {amount} exceeds position {balance} {token}"));
        }
        quote.expect("balance checked")
    };
    // (6)
    let quote = quote.expect("errors returned above");
    if quote.impact_exceeds(cfg.max_price_impact_bps) {
        return reject(RejectCode::ExceedsPriceImpact, format!("impact {:.1} bps exceeds {} bps", quote.price_impact_bps, cfg.max_price_impact_bps));
    }
    // (7)
    let min_output = quote.min_output_at(cfg.slippage_bps);
    // (8)
    Verdict::Accepted(Acceptance { quote: Some(quote), min_output: Some(min_output) })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum SettlementAbort {
    #[error("output {got} below minimum {min}")]
    SlippageExceeded { min: u128, got: u128 },
    #[error("token {0} no longer tradable")]
    TokenGone(TokenId),
    #[error("vault can no longer cover the swap")]
    BalanceChanged,
    #[error("injected settlement failure")]
    Injected,
}

/// Re-quotes an accepted swap against the pool at settlement time and
/// returns the quote to execute, or aborts when output fell below the
/// recorded minimum.
pub fn settlement_check(acceptance: &Acceptance, pool: Option<&Pool>) -> Result<SwapQuote, SettlementAbort> {
    let (Some(quoted), Some(min)) = (&acceptance.quote, acceptance.min_output) else { unreachable!("settlement_check on an observation") };
    let Some(pool) = pool.filter(|p| !p.delisted) else {
        return Err(SettlementAbort::TokenGone(quoted.token.clone()));
    };
    let fresh = match quoted.amount_in() {
        Leg::Eth(e) => quote_buy(pool, e),
        Leg::Tokens(t) => quote_sell(pool, t),
    };
    let fresh = fresh.map_err(|_| SettlementAbort::SlippageExceeded { min: min.raw(), got: 0 })?;
    let got = fresh.amount_out().raw();
    if got < min.raw() {
        return Err(SettlementAbort::SlippageExceeded { min: min.raw(), got });
    }
    Ok(fresh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{execute_swap, FeeSchedule};
    use crate::vault::VaultId;

    fn world() -> (BTreeMap<TokenId, TokenMeta>, BTreeMap<TokenId, Pool>, Vault) {
        let mut tokens = BTreeMap::new();
        let mut pools = BTreeMap::new();
        for (sym, launched) in [("FEET", 0), ("NEW", 10)] {
            let id = TokenId::new(sym);
            tokens.insert(id.clone(), TokenMeta::new(sym, launched));
            pools.insert(id.clone(), Pool::new(id, Eth::from_whole(50), Tokens::from_whole(1_000_000_000), FeeSchedule::default()));
        }
        let mut v = Vault::new(VaultId(1), "o", 0);
        v.eth_balance = Eth::from_whole(1);
        (tokens, pools, v)
    }

    fn code(call: &ToolCall, v: &Vault, cfg: &GuardConfig, now: Tick) -> Option<RejectCode> {
        let (t, p, _) = world();
        validate(call, v, &t, &p, cfg, now).code()
    }

    #[test]
    fn spec_examples() {
        let (mut tokens, pools, v) = world();
        tokens.get_mut(&TokenId::new("FEET")).unwrap().delisted = true;
        let feet = TokenId::new("FEET");
        let buy = ToolCall::buy(&feet, 0.1, vec![]);
        assert_eq!(validate(&buy, &v, &tokens, &pools, &GuardConfig::default(), 20).code(), Some(RejectCode::UnknownToken));

        let cfg = GuardConfig { max_trade_bps: 5000, ..Default::default() };
        assert_eq!(code(&ToolCall::buy(&feet, 0.8, vec![]), &v, &cfg, 20), Some(RejectCode::ExceedsMaxTrade));

        // launched at tick 10, now 10 (0 minutes): 0.05 ETH > 0.01 cap
        let new = TokenId::new("NEW");
        assert_eq!(code(&ToolCall::buy(&new, 0.05, vec![]), &v, &GuardConfig::default(), 10), Some(RejectCode::ExceedsNewCoinCap));
        assert_eq!(code(&ToolCall::buy(&new, 0.01, vec![]), &v, &GuardConfig::default(), 10), None);
        assert_eq!(code(&ToolCall::buy(&new, 0.01, vec![]), &v, &GuardConfig::default(), 9), Some(RejectCode::UnknownToken));
    }

    #[test]
    fn fixed_order_for_multiply_invalid_calls() {
        let (_, _, mut v) = world();
        let ghost = TokenId::new("GHOST");
        v.paused = true;
        assert_eq!(code(&ToolCall::buy(&ghost, 5.0, vec![]), &v, &GuardConfig::default(), 20), Some(RejectCode::VaultPaused));
        v.paused = false;
        assert_eq!(code(&ToolCall::buy(&ghost, -1.0, vec![]), &v, &GuardConfig::default(), 20), Some(RejectCode::UnknownToken));
        let feet = TokenId::new("FEET");
        assert_eq!(code(&ToolCall::buy(&feet, f64::NAN, vec![]), &v, &GuardConfig::default(), 20), Some(RejectCode::ZeroAmount));
        assert_eq!(code(&ToolCall::buy(&feet, 1.5, vec![]), &v, &GuardConfig::default(), 20), Some(RejectCode::InvalidFraction));
        assert_eq!(code(&ToolCall::sell(&feet, 0.5, vec![]), &v, &GuardConfig::default(), 20), Some(RejectCode::InsufficientBalance));
        v.eth_balance = Eth::ZERO;
        assert_eq!(code(&ToolCall::buy(&feet, 0.5, vec![]), &v, &GuardConfig::default(), 20), Some(RejectCode::InsufficientBalance));
    }

    #[test]
    fn impact_and_min_output() {
        let (t, p, mut v) = world();
        v.eth_balance = Eth::from_whole(100);
        let feet = TokenId::new("FEET");
        let big = ToolCall::buy(&feet, 0.5, vec![]);
        assert_eq!(validate(&big, &v, &t, &p, &GuardConfig::default(), 20).code(), Some(RejectCode::ExceedsPriceImpact));
        let ok = ToolCall::buy(&feet, 0.01, vec![]);
        let Verdict::Accepted(a) = validate(&ok, &v, &t, &p, &GuardConfig::default(), 20) else { panic!() };
        let q = a.quote.clone().unwrap();
        let Some(Leg::Tokens(min)) = a.min_output else { panic!() };
        assert_eq!(min.raw(), mul_div(q.token_amount.raw(), 9_900, 10_000));
        assert!(validate(&ToolCall::observe(crate::policy::ReasonTag::FeeCost), &v, &t, &p, &GuardConfig::default(), 20).is_accepted());
    }

    #[test]
    fn position_limit_optional() {
        let (t, p, mut v) = world();
        v.add_tokens(&TokenId::new("NEW"), Tokens::from_whole(5), Eth::from_raw(1), 12);
        let cfg = GuardConfig { max_positions: Some(1), ..Default::default() };
        let call = ToolCall::buy(&TokenId::new("FEET"), 0.1, vec![]);
        assert_eq!(validate(&call, &v, &t, &p, &cfg, 20).code(), Some(RejectCode::ExceedsPositionLimit));
        assert!(validate(&call, &v, &t, &p, &GuardConfig::default(), 20).is_accepted());
    }

    #[test]
    fn settlement_check_modes() {
        let (t, mut p, v) = world();
        let feet = TokenId::new("FEET");
        let cfg = GuardConfig { slippage_bps: 50, ..Default::default() };
        let Verdict::Accepted(a) = validate(&ToolCall::buy(&feet, 0.5, vec![]), &v, &t, &p, &cfg, 20) else { panic!() };
        assert!(settlement_check(&a, p.get(&feet)).is_ok());
        // another trader front-runs with a large buy
        let pool = p.get_mut(&feet).unwrap();
        let q = quote_buy(pool, Eth::from_whole(2)).unwrap();
        execute_swap(pool, &q).unwrap();
        assert!(matches!(settlement_check(&a, p.get(&feet)), Err(SettlementAbort::SlippageExceeded { .. })));
        let wide = GuardConfig { slippage_bps: 5000, ..Default::default() };
        let Verdict::Accepted(a2) = validate(&ToolCall::buy(&feet, 0.5, vec![]), &v, &t, &p, &wide, 20) else { panic!() };
        let pool = p.get_mut(&feet).unwrap();
        let q = quote_buy(pool, Eth::from_whole(2)).unwrap();
        execute_swap(pool, &q).unwrap();
        assert!(settlement_check(&a2, p.get(&feet)).is_ok());
        assert!(matches!(settlement_check(&a2, None), Err(SettlementAbort::TokenGone(_))));
    }

    #[test]
    fn config_bounds() {
        assert!(GuardConfig::default().validate().is_ok());
        assert_eq!(GuardConfig { max_trade_bps: 499, ..Default::default() }.validate(), Err(GuardConfigError::MaxTrade(499)));
        assert_eq!(GuardConfig { slippage_bps: 5001, ..Default::default() }.validate(), Err(GuardConfigError::Slippage(5001)));
    }
}
