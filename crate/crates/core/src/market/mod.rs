//! Tokens, constant-product pools and the market indexer.

mod caps;
mod snapshot;
mod swap;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::units::{Eth, Price, Tokens};
use crate::Tick;

pub use caps::{
    max_buy_within_impact, max_sell_within_impact, new_coin_buy_cap, new_coin_cap_at_age, CapResult, NEW_COIN_BASE_CAP, NEW_COIN_CAP_STEP,
    NEW_COIN_STEP_MINUTES, NEW_COIN_UNCAP_MINUTES,
};
pub use snapshot::{EthDelta, MarketHistory, MarketSnapshot, PctChanges, TokenStats, TradeRecord, WindowPair};
pub use swap::{execute_swap, quote_buy, quote_buy_with, quote_sell, FeeSplit, Leg, SwapQuote, SwapResult, TradeSide};

/// Every token launches with a fixed supply of one billion whole tokens.
pub const TOTAL_SUPPLY: Tokens = Tokens::from_whole(1_000_000_000);

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub String);

impl TokenId {
    pub fn new(s: impl Into<String>) -> Self {
        TokenId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TokenId {
    fn from(s: &str) -> Self {
        TokenId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenMeta {
    pub id: TokenId,
    pub symbol: String,
    pub total_supply: Tokens,
    pub launched_at: Tick,
    pub delisted: bool,
}

impl TokenMeta {
    pub fn new(symbol: &str, launched_at: Tick) -> Self {
        TokenMeta { id: TokenId::new(symbol), symbol: symbol.to_string(), total_supply: TOTAL_SUPPLY, launched_at, delisted: false }
    }

    /// Launched at simulation genesis rather than on the launch schedule.
    pub fn is_genesis(&self) -> bool {
        self.launched_at == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeeSchedule {
    pub lp_fee_bps: u32,
    pub protocol_fee_bps: u32,
}

impl FeeSchedule {
    pub fn total_bps(&self) -> u32 {
        self.lp_fee_bps + self.protocol_fee_bps
    }

    pub fn lp_only(&self) -> FeeSchedule {
        FeeSchedule { lp_fee_bps: self.lp_fee_bps, protocol_fee_bps: 0 }
    }
}

impl Default for FeeSchedule {
    /// 0.3% to liquidity, 2.0% to the protocol.
    fn default() -> Self {
        FeeSchedule { lp_fee_bps: 30, protocol_fee_bps: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub token: TokenId,
    pub eth_reserve: Eth,
    pub token_reserve: Tokens,
    pub fees: FeeSchedule,
    pub protocol_fee_accrued: Eth,
    pub delisted: bool,
    /// Bumped on every reserve change; quotes carry the version they saw.
    pub version: u64,
}

impl Pool {
    pub fn new(token: TokenId, eth_reserve: Eth, token_reserve: Tokens, fees: FeeSchedule) -> Self {
        Pool { token, eth_reserve, token_reserve, fees, protocol_fee_accrued: Eth::ZERO, delisted: false, version: 0 }
    }

    pub fn spot_price(&self) -> Option<Price> {
        Price::ratio(self.eth_reserve, self.token_reserve)
    }

    /// Spot price times total supply.
    pub fn market_cap(&self) -> Eth {
        self.spot_price().map(|p| p.value_of(TOTAL_SUPPLY)).unwrap_or(Eth::ZERO)
    }

    /// The constant-product invariant `eth_reserve * token_reserve` as a
    /// 256-bit integer.
    pub fn k(&self) -> ethnum::U256 {
        ethnum::U256::from(self.eth_reserve.raw()) * ethnum::U256::from(self.token_reserve.raw())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MarketError {
    #[error("swap amount must be positive")]
    ZeroAmount,
    #[error("token {0} is delisted")]
    DelistedToken(TokenId),
    #[error("pool for {0} has an empty reserve")]
    EmptyPool(TokenId),
    #[error("swap output rounds to zero")]
    OutputTooSmall,
    #[error("quote was taken at pool version {quoted} but pool is at {current}")]
    StaleQuote { quoted: u64, current: u64 },
}
