//! Indexed market history and the per-tick snapshot fed to briefs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Pool, TokenId, TokenMeta, TradeSide};
use crate::units::{Eth, Price, SCALE};
use crate::vault::VaultId;
use crate::{Tick, TICKS_PER_DAY, TICKS_PER_HOUR};

const WINDOW_5M: u64 = 1;
const WINDOW_1H: u64 = TICKS_PER_HOUR;
const WINDOW_6H: u64 = 6 * TICKS_PER_HOUR;
const WINDOW_24H: u64 = TICKS_PER_DAY;

/// Signed ETH amount in wei, used for net flows and PnL.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EthDelta(pub i128);

impl EthDelta {
    pub fn of(eth: Eth) -> EthDelta {
        EthDelta(i128::try_from(eth.raw()).expect("eth fits i128"))
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }
}

impl std::ops::Add for EthDelta {
    type Output = EthDelta;
    fn add(self, rhs: EthDelta) -> EthDelta {
        EthDelta(self.0 + rhs.0)
    }
}

impl std::ops::Sub for EthDelta {
    type Output = EthDelta;
    fn sub(self, rhs: EthDelta) -> EthDelta {
        EthDelta(self.0 - rhs.0)
    }
}

impl std::ops::AddAssign for EthDelta {
    fn add_assign(&mut self, rhs: EthDelta) {
        self.0 += rhs.0;
    }
}

impl fmt::Display for EthDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "+" };
        let mag = Eth(self.0.unsigned_abs());
        match f.precision() {
            Some(p) => write!(f, "{sign}{mag:.p$}"),
            None => write!(f, "{sign}{mag}"),
        }
    }
}

impl Serialize for EthDelta {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EthDelta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let (neg, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(&s)),
        };
        let mag: Eth = body.parse().map_err(serde::de::Error::custom)?;
        let v = i128::try_from(mag.raw()).map_err(serde::de::Error::custom)?;
        Ok(EthDelta(if neg { -v } else { v }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub tick: Tick,
    pub token: TokenId,
    pub vault: VaultId,
    pub side: TradeSide,
    /// ETH leg as experienced by the trader: paid for buys, received for sells.
    pub eth: Eth,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PctChanges {
    pub m5: Option<f64>,
    pub h1: Option<f64>,
    pub h6: Option<f64>,
    pub h24: Option<f64>,
    pub all: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPair<T> {
    pub m5: Option<T>,
    pub h1: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub token: TokenId,
    pub symbol: String,
    pub genesis: bool,
    pub launched_at: Tick,
    pub price: Price,
    pub market_cap: Eth,
    pub age_ticks: u64,
    pub pct_change: PctChanges,
    pub volume: WindowPair<Eth>,
    pub net_flow: WindowPair<EthDelta>,
    pub holders: u32,
    pub unique_traders_5m: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSnapshot {
    pub tick: Tick,
    pub rows: Vec<TokenStats>,
}

impl MarketSnapshot {
    pub fn row(&self, token: &TokenId) -> Option<&TokenStats> {
        self.rows.iter().find(|r| &r.token == token)
    }
}

#[derive(Debug, Clone)]
struct TokenSeries {
    launched_at: Tick,
    genesis_price: Price,
    /// `opens[i]` is the spot price at the start of tick `launched_at + i`.
    opens: Vec<Price>,
}

/// Tick-open prices and a rolling trade log, enough to answer every
/// windowed aggregate in a snapshot.
#[derive(Debug, Clone, Default)]
pub struct MarketHistory {
    series: BTreeMap<TokenId, TokenSeries>,
    trades: VecDeque<TradeRecord>,
}

impl MarketHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_token(&mut self, token: TokenId, launched_at: Tick, genesis_price: Price) {
        self.series.insert(token, TokenSeries { launched_at, genesis_price, opens: Vec::new() });
    }

    /// Records the opening spot of `tick` for every live pool and drops
    /// trades older than the longest trade window.
    pub fn record_open<'a>(&mut self, tick: Tick, pools: impl IntoIterator<Item = &'a Pool>) {
        for pool in pools {
            let Some(series) = self.series.get_mut(&pool.token) else { continue };
            if tick < series.launched_at {
                continue;
            }
            let Some(price) = pool.spot_price() else { continue };
            let idx = (tick - series.launched_at) as usize;
            // forward-fill gaps so index arithmetic stays valid
            while series.opens.len() < idx {
                let last = series.opens.last().copied().unwrap_or(series.genesis_price);
                series.opens.push(last);
            }
            if series.opens.len() == idx {
                series.opens.push(price);
            } else {
                series.opens[idx] = price;
            }
        }
        let horizon = tick.saturating_sub(WINDOW_1H);
        while self.trades.front().is_some_and(|t| t.tick < horizon) {
            self.trades.pop_front();
        }
    }

    pub fn record_trade(&mut self, trade: TradeRecord) {
        debug_assert!(self.trades.back().is_none_or(|t| t.tick <= trade.tick));
        self.trades.push_back(trade);
    }

    pub fn forget_token(&mut self, token: &TokenId) {
        self.series.remove(token);
        self.trades.retain(|t| &t.token != token);
    }

    fn open_at(&self, token: &TokenId, tick: Tick) -> Option<Price> {
        let s = self.series.get(token)?;
        if tick < s.launched_at {
            return None;
        }
        s.opens.get((tick - s.launched_at) as usize).copied()
    }

    /// One row per launched, live token. Aggregates use half-open windows
    /// `[now - w, now)`; windows without history are `None`.
    pub fn snapshot(
        &self,
        now: Tick,
        tokens: &BTreeMap<TokenId, TokenMeta>,
        pools: &BTreeMap<TokenId, Pool>,
        holders: &BTreeMap<TokenId, u32>,
    ) -> MarketSnapshot {
        let mut rows = Vec::new();
        for meta in tokens.values() {
            if meta.delisted || meta.launched_at > now {
                continue;
            }
            let Some(pool) = pools.get(&meta.id) else { continue };
            let Some(price) = pool.spot_price() else { continue };
            let change = |w: u64| -> Option<f64> {
                if now < meta.launched_at + w {
                    return None;
                }
                let base = self.open_at(&meta.id, now - w)?;
                pct(base, price)
            };
            let all = if now > meta.launched_at { self.series.get(&meta.id).and_then(|s| pct(s.genesis_price, price)) } else { None };
            let (vol5, flow5, traders5) = self.window_stats(&meta.id, now, WINDOW_5M);
            let (vol1h, flow1h, _) = self.window_stats(&meta.id, now, WINDOW_1H);
            rows.push(TokenStats {
                token: meta.id.clone(),
                symbol: meta.symbol.clone(),
                genesis: meta.is_genesis(),
                launched_at: meta.launched_at,
                price,
                market_cap: pool.market_cap(),
                age_ticks: now - meta.launched_at,
                pct_change: PctChanges { m5: change(WINDOW_5M), h1: change(WINDOW_1H), h6: change(WINDOW_6H), h24: change(WINDOW_24H), all },
                volume: WindowPair { m5: vol5, h1: vol1h },
                net_flow: WindowPair { m5: flow5, h1: flow1h },
                holders: holders.get(&meta.id).copied().unwrap_or(0),
                unique_traders_5m: traders5,
            });
        }
        MarketSnapshot { tick: now, rows }
    }

    fn window_stats(&self, token: &TokenId, now: Tick, w: u64) -> (Option<Eth>, Option<EthDelta>, u32) {
        let start = now.saturating_sub(w);
        let mut volume = Eth::ZERO;
        let mut flow = EthDelta::default();
        let mut traders = BTreeSet::new();
        let mut any = false;
        for t in self.trades.iter().filter(|t| &t.token == token && t.tick >= start && t.tick < now) {
            any = true;
            volume += t.eth;
            match t.side {
                TradeSide::Buy => flow += EthDelta::of(t.eth),
                TradeSide::Sell => flow = flow - EthDelta::of(t.eth),
            }
            traders.insert(t.vault);
        }
        if any {
            (Some(volume), Some(flow), traders.len() as u32)
        } else {
            (None, None, 0)
        }
    }
}

fn pct(base: Price, now: Price) -> Option<f64> {
    if base.is_zero() {
        return None;
    }
    Some((now.raw() as f64 / base.raw() as f64 - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::FeeSchedule;
    use crate::units::Tokens;

    fn world() -> (MarketHistory, BTreeMap<TokenId, TokenMeta>, BTreeMap<TokenId, Pool>) {
        let mut h = MarketHistory::new();
        let mut tokens = BTreeMap::new();
        let mut pools = BTreeMap::new();
        for sym in ["AAA", "BBB"] {
            let id = TokenId::new(sym);
            let pool = Pool::new(id.clone(), Eth::from_whole(10), Tokens::from_whole(1_000_000), FeeSchedule::default());
            h.register_token(id.clone(), 0, pool.spot_price().unwrap());
            tokens.insert(id.clone(), TokenMeta::new(sym, 0));
            pools.insert(id, pool);
        }
        (h, tokens, pools)
    }

    #[test]
    fn empty_windows_are_absent() {
        let (mut h, tokens, pools) = world();
        h.record_open(0, pools.values());
        let snap = h.snapshot(0, &tokens, &pools, &BTreeMap::new());
        assert_eq!(snap.rows.len(), 2);
        let row = &snap.rows[0];
        assert_eq!(row.volume.m5, None);
        assert_eq!(row.net_flow.m5, None);
        assert_eq!(row.pct_change, PctChanges::default());
        assert_eq!(row.unique_traders_5m, 0);
    }

    #[test]
    fn window_sums_match_brute_force() {
        let (mut h, tokens, pools) = world();
        for t in 0..=3 {
            h.record_open(t, pools.values());
        }
        let a = TokenId::new("AAA");
        // outside the 5m window but inside 1h
        h.record_trade(TradeRecord { tick: 1, token: a.clone(), vault: VaultId(3), side: TradeSide::Buy, eth: Eth::from_whole(2) });
        h.record_trade(TradeRecord { tick: 2, token: a.clone(), vault: VaultId(1), side: TradeSide::Buy, eth: Eth::from_whole(1) });
        h.record_trade(TradeRecord { tick: 2, token: a.clone(), vault: VaultId(2), side: TradeSide::Sell, eth: "0.4".parse().unwrap() });
        let snap = h.snapshot(3, &tokens, &pools, &BTreeMap::new());
        let row = snap.row(&a).unwrap();
        assert_eq!(row.volume.m5, Some("1.4".parse().unwrap()));
        assert_eq!(row.net_flow.m5, Some(EthDelta::of("0.6".parse().unwrap())));
        assert_eq!(row.volume.h1, Some("3.4".parse().unwrap()));
        assert_eq!(row.unique_traders_5m, 2);
        assert_eq!(row.pct_change.m5, Some(0.0));
        assert_eq!(row.pct_change.h1, None);
        let other = snap.row(&TokenId::new("BBB")).unwrap();
        assert_eq!(other.volume.m5, None);
    }

    #[test]
    fn delisted_and_unlaunched_rows_omitted() {
        let (mut h, mut tokens, pools) = world();
        h.record_open(0, pools.values());
        tokens.get_mut(&TokenId::new("AAA")).unwrap().delisted = true;
        tokens.insert(TokenId::new("NEW"), TokenMeta::new("NEW", 50));
        let snap = h.snapshot(0, &tokens, &pools, &BTreeMap::new());
        assert_eq!(snap.rows.len(), 1);
        assert_eq!(snap.rows[0].symbol, "BBB");
    }

    #[test]
    fn signed_delta_roundtrip() {
        let d = EthDelta(-1_500_000_000_000_000_000);
        assert_eq!(d.to_string(), "-1.5");
        let s = serde_json::to_string(&d).unwrap();
        assert_eq!(serde_json::from_str::<EthDelta>(&s).unwrap(), d);
    }
}
