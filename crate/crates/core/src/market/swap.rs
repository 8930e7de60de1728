use ethnum::U256;
use serde::{Deserialize, Serialize};

use super::{FeeSchedule, MarketError, Pool, TokenId};
use crate::units::{mul_div, Eth, Price, Tokens, BPS_DENOM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TradeSide {
    Buy,
    Sell,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeeSplit {
    pub protocol: Eth,
    pub lp: Eth,
}

impl FeeSplit {
    pub fn total(&self) -> Eth {
        self.protocol + self.lp
    }
}

/// One side of a swap, tagged with its unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Leg {
    Eth(Eth),
    Tokens(Tokens),
}

impl Leg {
    pub fn raw(&self) -> u128 {
        match self {
            Leg::Eth(e) => e.raw(),
            Leg::Tokens(t) => t.raw(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapQuote {
    pub token: TokenId,
    pub side: TradeSide,
    /// Buy: ETH paid in. Sell: ETH received after fees.
    pub eth_amount: Eth,
    /// Buy: tokens received. Sell: tokens paid in.
    pub token_amount: Tokens,
    pub fee: FeeSplit,
    /// Fee-inclusive deviation of execution price from spot.
    pub price_impact_bps: f64,
    pub pool_version: u64,
    pub eth_reserve_before: Eth,
    pub token_reserve_before: Tokens,
}

impl SwapQuote {
    pub fn amount_in(&self) -> Leg {
        match self.side {
            TradeSide::Buy => Leg::Eth(self.eth_amount),
            TradeSide::Sell => Leg::Tokens(self.token_amount),
        }
    }

    pub fn amount_out(&self) -> Leg {
        match self.side {
            TradeSide::Buy => Leg::Tokens(self.token_amount),
            TradeSide::Sell => Leg::Eth(self.eth_amount),
        }
    }

    /// Smallest acceptable output under a slippage tolerance.
    pub fn min_output_at(&self, slippage_bps: u32) -> Leg {
        let keep = BPS_DENOM - (slippage_bps as u128).min(BPS_DENOM);
        match self.amount_out() {
            Leg::Eth(e) => Leg::Eth(Eth(mul_div(e.raw(), keep, BPS_DENOM))),
            Leg::Tokens(t) => Leg::Tokens(Tokens(mul_div(t.raw(), keep, BPS_DENOM))),
        }
    }

    /// Fee-inclusive execution price in ETH per whole token.
    pub fn execution_price(&self) -> Price {
        Price::ratio(self.eth_amount, self.token_amount).unwrap_or(Price::ZERO)
    }

    /// Exact test of `price_impact_bps > max_bps`.
    pub fn impact_exceeds(&self, max_bps: u32) -> bool {
        let e = U256::from(self.eth_reserve_before.raw());
        let t = U256::from(self.token_reserve_before.raw());
        let eth = U256::from(self.eth_amount.raw());
        let tok = U256::from(self.token_amount.raw());
        let m = max_bps as u128;
        match self.side {
            // eth/tok > (1+m) * e/t
            TradeSide::Buy => eth * t * BPS_DENOM > U256::from(BPS_DENOM + m) * tok * e,
            // eth/tok < (1-m) * e/t
            TradeSide::Sell => {
                if m >= BPS_DENOM {
                    return false;
                }
                eth * t * BPS_DENOM < U256::from(BPS_DENOM - m) * tok * e
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapResult {
    pub token: TokenId,
    pub side: TradeSide,
    pub eth_amount: Eth,
    pub token_amount: Tokens,
    pub fee: FeeSplit,
    pub execution_price: Price,
}

fn ratio_f64(num: U256, den: U256) -> f64 {
    num.as_f64() / den.as_f64()
}

fn check_pool(pool: &Pool) -> Result<(), MarketError> {
    if pool.delisted {
        return Err(MarketError::DelistedToken(pool.token.clone()));
    }
    if pool.eth_reserve.is_zero() || pool.token_reserve.is_zero() {
        return Err(MarketError::EmptyPool(pool.token.clone()));
    }
    Ok(())
}

/// Quotes a buy of `eth_in` with the pool's configured fees.
pub fn quote_buy(pool: &Pool, eth_in: Eth) -> Result<SwapQuote, MarketError> {
    quote_buy_with(pool, eth_in, pool.fees)
}

/// Quotes a buy with an explicit fee schedule. Fees come off the ETH input.
pub fn quote_buy_with(pool: &Pool, eth_in: Eth, fees: FeeSchedule) -> Result<SwapQuote, MarketError> {
    if eth_in.is_zero() {
        return Err(MarketError::ZeroAmount);
    }
    check_pool(pool)?;
    let fee = FeeSplit { protocol: eth_in.bps(fees.protocol_fee_bps), lp: eth_in.bps(fees.lp_fee_bps) };
    let effective = eth_in - fee.total();
    let e = pool.eth_reserve.raw();
    let t = pool.token_reserve.raw();
    let out = mul_div(t, effective.raw(), e + effective.raw());
    if out == 0 {
        return Err(MarketError::OutputTooSmall);
    }
    // execution / spot = (eth_in * t) / (out * e)
    let num = U256::from(eth_in.raw()) * U256::from(t);
    let den = U256::from(out) * U256::from(e);
    let impact = (ratio_f64(num, den) - 1.0) * 10_000.0;
    Ok(SwapQuote {
        token: pool.token.clone(),
        side: TradeSide::Buy,
        eth_amount: eth_in,
        token_amount: Tokens(out),
        fee,
        price_impact_bps: impact.max(0.0),
        pool_version: pool.version,
        eth_reserve_before: pool.eth_reserve,
        token_reserve_before: pool.token_reserve,
    })
}

/// Quotes a sell of `tokens_in`. Fees come off the ETH output.
pub fn quote_sell(pool: &Pool, tokens_in: Tokens) -> Result<SwapQuote, MarketError> {
    if tokens_in.is_zero() {
        return Err(MarketError::ZeroAmount);
    }
    check_pool(pool)?;
    let e = pool.eth_reserve.raw();
    let t = pool.token_reserve.raw();
    let gross = Eth(mul_div(e, tokens_in.raw(), t + tokens_in.raw()));
    let fee = FeeSplit { protocol: gross.bps(pool.fees.protocol_fee_bps), lp: gross.bps(pool.fees.lp_fee_bps) };
    let eth_out = gross - fee.total();
    if eth_out.is_zero() {
        return Err(MarketError::OutputTooSmall);
    }
    // execution / spot = (eth_out * t) / (tokens_in * e)
    let num = U256::from(eth_out.raw()) * U256::from(t);
    let den = U256::from(tokens_in.raw()) * U256::from(e);
    let impact = (1.0 - ratio_f64(num, den)) * 10_000.0;
    Ok(SwapQuote {
        token: pool.token.clone(),
        side: TradeSide::Sell,
        eth_amount: eth_out,
        token_amount: tokens_in,
        fee,
        price_impact_bps: impact.max(0.0),
        pool_version: pool.version,
        eth_reserve_before: pool.eth_reserve,
        token_reserve_before: pool.token_reserve,
    })
}

/// Applies a quote to the pool it was taken from. The LP fee stays in
/// reserves; the protocol fee is moved to `protocol_fee_accrued`.
pub fn execute_swap(pool: &mut Pool, quote: &SwapQuote) -> Result<SwapResult, MarketError> {
    if quote.pool_version != pool.version {
        return Err(MarketError::StaleQuote { quoted: quote.pool_version, current: pool.version });
    }
    check_pool(pool)?;
    match quote.side {
        TradeSide::Buy => {
            pool.eth_reserve += quote.eth_amount - quote.fee.protocol;
            pool.token_reserve -= quote.token_amount;
        }
        TradeSide::Sell => {
            pool.eth_reserve -= quote.eth_amount + quote.fee.protocol;
            pool.token_reserve += quote.token_amount;
        }
    }
    pool.protocol_fee_accrued += quote.fee.protocol;
    pool.version += 1;
    Ok(SwapResult {
        token: quote.token.clone(),
        side: quote.side,
        eth_amount: quote.eth_amount,
        token_amount: quote.token_amount,
        fee: quote.fee,
        execution_price: quote.execution_price(),
    })
}
