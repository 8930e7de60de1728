//! Diagnostics computed from a trace alone.
//!
//! Time windows are half-open, `[t, t + w)`. Trades derived from a trace
//! carry tick resolution: every trade in a tick sits at the tick's start.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;

use crate::guard::Verdict;
use crate::mandate::Slider;
use crate::market::{TokenId, TradeSide};
use crate::policy::{ActionType, ReasonTag, ToolCall};
use crate::trace::{Parsed, Settlement, TraceEvent, TraceRecord, TraceStore};
use crate::vault::{OwnerAction, VaultId};
use crate::{Tick, SECONDS_PER_TICK};

pub const COLD_START_INVOCATIONS: usize = 30;
pub const CASCADE_MIN_VAULTS: usize = 10;
pub const CASCADE_WINDOW_MS: u64 = 10 * 60 * 1000;
pub const TWO_SIDED_WINDOW_MS: u64 = 5 * 60 * 1000;
/// Adjacent cohort means closer than this count as flat.
pub const FLAT_TOLERANCE: f64 = 1e-9;

pub const METRICS: [&str; 8] = ["taxonomy", "cold_start", "gradient", "deployment", "fee_salience", "cascades", "two_sided", "two_sided_rolling"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("slider {slider} has {found} cohort level(s); at least 2 are needed")]
    InsufficientCohorts { slider: Slider, found: usize },
    #[error("unknown metric {name:?}; valid metrics: {}", METRICS.join(", "))]
    UnknownMetric { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum ColdStart {
    Ratio(f64),
    /// Buys but no sells; the ratio has no finite value.
    BuysOnly(u32),
    /// Neither buys nor sells.
    Undefined,
}

/// Buy:sell ratio over a vault's first 30 invocations, counting emitted calls.
pub fn cold_start_buy_sell(trace: &TraceStore, vault: VaultId) -> ColdStart {
    let (mut buys, mut sells) = (0u32, 0u32);
    for r in trace.by_vault(vault).take(COLD_START_INVOCATIONS) {
        match r.action() {
            Some(ActionType::Buy) => buys += 1,
            Some(ActionType::Sell) => sells += 1,
            _ => {}
        }
    }
    match (buys, sells) {
        (0, 0) => ColdStart::Undefined,
        (b, 0) => ColdStart::BuysOnly(b),
        (b, s) => ColdStart::Ratio(b as f64 / s as f64),
    }
}

/// Per-vault behaviour used for slider gradients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VaultMetrics {
    pub vault: VaultId,
    pub invocations: u64,
    pub trades: u64,
    pub trade_rate: f64,
    /// Mean of ETH spent over ETH available across settled buys.
    pub spend_fraction: Option<f64>,
    /// Mean of `1 - launch-age percentile` over settled buys; higher is younger.
    pub risk_index: Option<f64>,
    /// Mean ticks between acquiring a position and a settled sell of it.
    pub hold_ticks: Option<f64>,
    pub mean_positions: f64,
}

impl VaultMetrics {
    pub fn value(&self, slider: Slider) -> Option<f64> {
        match slider {
            Slider::TradingActivity => Some(self.trade_rate),
            Slider::TradeSize => self.spend_fraction,
            Slider::AssetRiskPreference => self.risk_index,
            Slider::HoldingStyle => self.hold_ticks,
            Slider::Diversification => Some(self.mean_positions),
        }
    }
}

pub fn metric_name(slider: Slider) -> &'static str {
    match slider {
        Slider::TradingActivity => "trade_rate",
        Slider::TradeSize => "spend_fraction",
        Slider::AssetRiskPreference => "risk_index",
        Slider::HoldingStyle => "hold_ticks",
        Slider::Diversification => "mean_positions",
    }
}

/// Launch tick and reap tick of every token, from trace events.
fn token_lifetimes(trace: &TraceStore) -> BTreeMap<TokenId, (Tick, Tick)> {
    let mut life = BTreeMap::new();
    for e in trace.events() {
        match e {
            TraceEvent::Launch { tick, token, .. } => {
                life.insert(token.clone(), (*tick, Tick::MAX));
            }
            TraceEvent::Reap(r) => {
                if let Some(l) = life.get_mut(&r.eliminated) {
                    l.1 = r.tick;
                }
            }
            TraceEvent::Owner { .. } => {}
        }
    }
    life
}

/// Fraction of live tokens strictly older than `token` at `tick`, with
/// ties split evenly; 0 for the oldest, near 1 for the youngest.
fn youth_percentile(life: &BTreeMap<TokenId, (Tick, Tick)>, token: &TokenId, tick: Tick) -> Option<f64> {
    let (born, _) = *life.get(token)?;
    let live: Vec<Tick> = life.values().filter(|(b, d)| *b <= tick && tick <= *d).map(|(b, _)| *b).collect();
    if live.len() < 2 {
        return None;
    }
    let older = live.iter().filter(|&&b| b < born).count() as f64;
    let ties = live.iter().filter(|&&b| b == born).count() as f64 - 1.0;
    Some((older + ties / 2.0) / (live.len() - 1) as f64)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn vault_metrics(trace: &TraceStore) -> Vec<VaultMetrics> {
    let life = token_lifetimes(trace);
    trace
        .vaults()
        .map(|vault| {
            let (mut n, mut trades) = (0u64, 0u64);
            let (mut spend, mut risk, mut holds, mut positions) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut acquired: BTreeMap<TokenId, Tick> = BTreeMap::new();
            for r in trace.by_vault(vault) {
                n += 1;
                if r.is_trade_request() {
                    trades += 1;
                }
                for t in r.portfolio_before.positions.keys() {
                    acquired.entry(t.clone()).or_insert(r.tick);
                }
                acquired.retain(|t, _| r.portfolio_before.positions.contains_key(t));
                if let Settlement::Settled { side, token, eth_amount, .. } = &r.settlement {
                    match side {
                        TradeSide::Buy => {
                            let avail = r.portfolio_before.eth_balance.raw() as f64;
                            if avail > 0.0 {
                                spend.push(eth_amount.raw() as f64 / avail);
                            }
                            if let Some(p) = youth_percentile(&life, token, r.tick) {
                                risk.push(p);
                            }
                            acquired.entry(token.clone()).or_insert(r.tick);
                        }
                        TradeSide::Sell => {
                            if let Some(&at) = acquired.get(token) {
                                holds.push((r.tick - at) as f64);
                            }
                        }
                    }
                }
                positions.push(r.portfolio_after.positions.len() as f64);
            }
            VaultMetrics {
                vault,
                invocations: n,
                trades,
                trade_rate: if n == 0 { 0.0 } else { trades as f64 / n as f64 },
                spend_fraction: mean(&spend),
                risk_index: mean(&risk),
                hold_ticks: mean(&holds),
                mean_positions: mean(&positions).unwrap_or(0.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Up,
    Down,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientVerdict {
    /// Every adjacent level rises.
    StrictlyMonotone,
    /// At least one adjacent level falls or stalls while others move.
    Inverted,
    /// No adjacent level moves.
    Flat,
}

impl GradientVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            GradientVerdict::StrictlyMonotone => "strictly-monotone",
            GradientVerdict::Inverted => "inverted",
            GradientVerdict::Flat => "flat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelStat {
    pub level: u8,
    pub mean: f64,
    /// Units (vaults or sweep samples) with a defined value.
    pub samples: usize,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientReport {
    pub slider: Slider,
    pub metric: &'static str,
    pub levels: Vec<LevelStat>,
    pub steps: Vec<Step>,
    pub verdict: GradientVerdict,
}

/// Gradient over `(level, value)` samples.
pub fn gradient_from_samples(slider: Slider, samples: &[(u8, f64)]) -> Result<GradientReport, AnalyticsError> {
    let mut by_level: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for &(l, v) in samples {
        by_level.entry(l).or_default().push(v);
    }
    if by_level.len() < 2 {
        return Err(AnalyticsError::InsufficientCohorts { slider, found: by_level.len() });
    }
    let levels: Vec<LevelStat> = by_level
        .into_iter()
        .map(|(level, xs)| {
            let m = mean(&xs).expect("non-empty");
            let var = if xs.len() > 1 { xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64 } else { 0.0 };
            LevelStat { level, mean: m, samples: xs.len(), std_error: (var / xs.len() as f64).sqrt() }
        })
        .collect();
    let steps: Vec<Step> = levels
        .windows(2)
        .map(|w| {
            let d = w[1].mean - w[0].mean;
            if d.abs() <= FLAT_TOLERANCE {
                Step::Flat
            } else if d > 0.0 {
                Step::Up
            } else {
                Step::Down
            }
        })
        .collect();
    let verdict = if steps.iter().all(|s| *s == Step::Up) {
        GradientVerdict::StrictlyMonotone
    } else if steps.iter().all(|s| *s == Step::Flat) {
        GradientVerdict::Flat
    } else {
        GradientVerdict::Inverted
    };
    Ok(GradientReport { slider, metric: metric_name(slider), levels, steps, verdict })
}

/// Gradient across the vaults of one trace, grouped by their slider level
/// at each vault's first invocation.
pub fn slider_gradient_report(trace: &TraceStore, slider: Slider) -> Result<GradientReport, AnalyticsError> {
    let level: BTreeMap<VaultId, u8> = trace.vaults().filter_map(|v| trace.by_vault(v).next().map(|r| (v, r.sliders.get(slider)))).collect();
    let samples: Vec<(u8, f64)> = vault_metrics(trace).iter().filter_map(|m| m.value(slider).map(|x| (level[&m.vault], x))).collect();
    gradient_from_samples(slider, &samples)
}

/// Marked deployment of a vault as of the end of `at`; zero after an
/// emergency liquidation with no later invocation.
pub fn deployment_fraction(trace: &TraceStore, vault: VaultId, at: Tick) -> Option<f64> {
    let last = trace.by_vault(vault).take_while(|r| r.tick <= at).last();
    let liquidated = trace.events().iter().rev().find_map(|e| match e {
        TraceEvent::Owner { tick, vault_id, action: OwnerAction::EmergencyLiquidate, ok: true, .. } if *vault_id == vault && *tick <= at => Some(*tick),
        _ => None,
    });
    match (last, liquidated) {
        (Some(r), Some(t)) if t > r.tick => Some(0.0),
        (None, Some(_)) => Some(0.0),
        (Some(r), _) => Some(r.portfolio_after.deployment_fraction()),
        (None, None) => None,
    }
}

/// Share of observations whose dominant reason is fees; `None` without observations.
pub fn fee_salience_rate<'a>(records: impl IntoIterator<Item = &'a TraceRecord>) -> Option<f64> {
    let (mut obs, mut fee) = (0u64, 0u64);
    for r in records {
        if let Parsed::Call(ToolCall::Observe { reasons, .. }) = &r.parsed {
            obs += 1;
            if reasons.first() == Some(&ReasonTag::FeeCost) {
                fee += 1;
            }
        }
    }
    (obs > 0).then(|| fee as f64 / obs as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Trade {
    pub time_ms: u64,
    pub token: TokenId,
    pub vault: VaultId,
    pub side: TradeSide,
}

/// Settled trades and liquidation sells in trace order.
pub fn trades_from_trace(trace: &TraceStore) -> Vec<Trade> {
    let ms = |t: Tick| t * SECONDS_PER_TICK * 1000;
    let mut out: Vec<Trade> = trace
        .records()
        .iter()
        .filter_map(|r| match &r.settlement {
            Settlement::Settled { side, token, .. } => Some(Trade { time_ms: ms(r.tick), token: token.clone(), vault: r.vault_id, side: *side }),
            _ => None,
        })
        .collect();
    for e in trace.events() {
        if let TraceEvent::Owner { tick, vault_id, liquidations, .. } = e {
            out.extend(liquidations.iter().map(|l| Trade { time_ms: ms(*tick), token: l.token.clone(), vault: *vault_id, side: l.side }));
        }
    }
    out.sort_by_key(|t| t.time_ms);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeEvent {
    pub token: TokenId,
    pub start_ms: u64,
    pub end_ms: u64,
    pub vaults: usize,
    pub sells: usize,
    /// Median gap between consecutive sells by different vaults.
    pub median_gap_ms: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn sells_by_token(trades: &[Trade]) -> BTreeMap<&TokenId, Vec<(u64, VaultId)>> {
    let mut by: BTreeMap<&TokenId, Vec<(u64, VaultId)>> = BTreeMap::new();
    for t in trades.iter().filter(|t| t.side == TradeSide::Sell) {
        by.entry(&t.token).or_default().push((t.time_ms, t.vault));
    }
    for v in by.values_mut() {
        v.sort_by_key(|s| s.0);
    }
    by
}

fn cascade_event(token: &TokenId, sells: &[(u64, VaultId)]) -> CascadeEvent {
    let vaults: BTreeSet<VaultId> = sells.iter().map(|s| s.1).collect();
    let gaps: Vec<f64> = sells.windows(2).filter(|w| w[0].1 != w[1].1).map(|w| (w[1].0 - w[0].0) as f64).collect();
    CascadeEvent {
        token: token.clone(),
        start_ms: sells[0].0,
        end_ms: sells[sells.len() - 1].0,
        vaults: vaults.len(),
        sells: sells.len(),
        median_gap_ms: median(gaps),
    }
}

/// Bursts where at least `k` distinct vaults sell one token inside some
/// window `[t, t + window_ms)` starting at a sell. Overlapping qualifying
/// windows merge into one event spanning their sells.
pub fn detect_sell_cascades(trades: &[Trade], k: usize, window_ms: u64) -> Vec<CascadeEvent> {
    let mut events = Vec::new();
    for (token, sells) in sells_by_token(trades) {
        let mut counts: BTreeMap<VaultId, usize> = BTreeMap::new();
        let mut hi = 0;
        // merged run: (first sell index, window end time, last covered sell index)
        let mut run: Option<(usize, u64, usize)> = None;
        for lo in 0..sells.len() {
            let end = sells[lo].0.saturating_add(window_ms);
            while hi < sells.len() && sells[hi].0 < end {
                *counts.entry(sells[hi].1).or_insert(0) += 1;
                hi += 1;
            }
            if counts.len() >= k {
                run = match run {
                    Some((first, run_end, _)) if sells[lo].0 < run_end => Some((first, end, hi - 1)),
                    Some((first, _, last)) => {
                        events.push(cascade_event(token, &sells[first..=last]));
                        Some((lo, end, hi - 1))
                    }
                    None => Some((lo, end, hi - 1)),
                };
            }
            let c = counts.get_mut(&sells[lo].1).expect("counted");
            *c -= 1;
            if *c == 0 {
                counts.remove(&sells[lo].1);
            }
        }
        if let Some((first, _, last)) = run {
            events.push(cascade_event(token, &sells[first..=last]));
        }
    }
    events
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Windowing {
    /// Consecutive windows aligned to tick 0.
    Tiled,
    /// A trade is two-sided if an opposite-side trade of its token lies
    /// within the window length of it.
    Rolling,
}

/// Share of trades inside two-sided token-windows; `None` without trades.
pub fn two_sided_fraction(trades: &[Trade], window_ms: u64, windowing: Windowing) -> Option<f64> {
    if trades.is_empty() {
        return None;
    }
    let inside = match windowing {
        Windowing::Tiled => {
            let mut tiles: BTreeMap<(&TokenId, u64), (usize, usize)> = BTreeMap::new();
            for t in trades {
                let e = tiles.entry((&t.token, t.time_ms / window_ms)).or_default();
                match t.side {
                    TradeSide::Buy => e.0 += 1,
                    TradeSide::Sell => e.1 += 1,
                }
            }
            tiles.values().filter(|(b, s)| *b > 0 && *s > 0).map(|(b, s)| b + s).sum::<usize>()
        }
        Windowing::Rolling => {
            let mut by: BTreeMap<(&TokenId, TradeSide), Vec<u64>> = BTreeMap::new();
            for t in trades {
                by.entry((&t.token, t.side)).or_default().push(t.time_ms);
            }
            for v in by.values_mut() {
                v.sort_unstable();
            }
            trades
                .iter()
                .filter(|t| {
                    let other = match t.side {
                        TradeSide::Buy => TradeSide::Sell,
                        TradeSide::Sell => TradeSide::Buy,
                    };
                    by.get(&(&t.token, other)).is_some_and(|v| {
                        let i = v.partition_point(|&x| x < t.time_ms);
                        let near = |x: u64| x.abs_diff(t.time_ms) < window_ms;
                        v.get(i).copied().is_some_and(near) || (i > 0 && near(v[i - 1]))
                    })
                })
                .count()
        }
    };
    Some(inside as f64 / trades.len() as f64)
}

/// Accepted over validated calls; `None` when nothing reached the guard.
pub fn acceptance_rate<'a>(records: impl IntoIterator<Item = &'a TraceRecord>) -> Option<f64> {
    let (mut n, mut ok) = (0u64, 0u64);
    for r in records {
        if let Some(v) = &r.verdict {
            n += 1;
            ok += matches!(v, Verdict::Accepted(_)) as u64;
        }
    }
    (n > 0).then(|| ok as f64 / n as f64)
}

/// A named table of values, written as CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub metric: String,
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub scope: String,
    pub key: String,
    pub window: String,
    pub value: String,
    pub samples: u64,
}

impl MetricReport {
    fn new(metric: &str) -> Self {
        MetricReport { metric: metric.into(), rows: Vec::new() }
    }

    fn push(&mut self, scope: impl Into<String>, key: impl Into<String>, window: &str, value: impl Into<String>, samples: u64) {
        self.rows.push(MetricRow { scope: scope.into(), key: key.into(), window: window.into(), value: value.into(), samples });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,scope,key,window,value,samples\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{},{},{}", self.metric, csv(&r.scope), csv(&r.key), csv(&r.window), csv(&r.value), r.samples);
        }
        out
    }
}

fn csv(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".into(), |v| format!("{v:.6}"))
}

/// Computes one named metric over a whole trace.
pub fn report(trace: &TraceStore, metric: &str) -> Result<MetricReport, AnalyticsError> {
    let mut rep = MetricReport::new(metric);
    match metric {
        "taxonomy" => {
            let t = crate::trace::failure_taxonomy(trace.records());
            rep.push("all", "parse_errors", "run", t.parse_errors.to_string(), t.total);
            for (code, n) in &t.guard_rejections {
                rep.push("all", format!("rejected:{}", code.as_str()), "run", n.to_string(), t.total);
            }
            rep.push("all", "settlement_failures", "run", t.settlement_failures.to_string(), t.total);
            rep.push("all", "settled", "run", t.settled.to_string(), t.total);
            rep.push("all", "not_applicable", "run", t.not_applicable.to_string(), t.total);
            rep.push("all", "settlement_success_rate", "run", opt(t.settlement_success_rate()), t.settled + t.settlement_failures);
        }
        "cold_start" => {
            for v in trace.vaults() {
                let value = match cold_start_buy_sell(trace, v) {
                    ColdStart::Ratio(r) => format!("{r:.6}"),
                    ColdStart::BuysOnly(b) => format!("buys_only:{b}"),
                    ColdStart::Undefined => "undefined".into(),
                };
                let n = trace.by_vault(v).take(COLD_START_INVOCATIONS).count() as u64;
                rep.push(format!("vault:{v}"), "buy_sell_ratio", "first 30 invocations", value, n);
            }
        }
        "gradient" => {
            for slider in Slider::ALL {
                match slider_gradient_report(trace, slider) {
                    Ok(g) => {
                        for l in &g.levels {
                            rep.push(format!("{}={}", slider.short(), l.level), g.metric, "run", format!("{:.6}", l.mean), l.samples as u64);
                        }
                        rep.push(slider.short(), "verdict", "adjacent levels", g.verdict.as_str(), g.levels.len() as u64);
                    }
                    Err(e) => rep.push(slider.short(), "verdict", "adjacent levels", e.to_string(), 0),
                }
            }
        }
        "deployment" => {
            let end = trace.records().last().map_or(0, |r| r.tick);
            for v in trace.vaults() {
                rep.push(format!("vault:{v}"), "deployment_fraction", format!("at tick {end}").as_str(), opt(deployment_fraction(trace, v, end)), 1);
            }
        }
        "fee_salience" => {
            rep.push("all", "fee_led_observe_share", "run", opt(fee_salience_rate(trace.records())), trace.len() as u64);
            let mut by_policy: BTreeMap<&str, Vec<&TraceRecord>> = BTreeMap::new();
            for r in trace.records() {
                by_policy.entry(r.policy.as_str()).or_default().push(r);
            }
            for (p, rs) in by_policy {
                rep.push(format!("policy:{p}"), "fee_led_observe_share", "run", opt(fee_salience_rate(rs.iter().copied())), rs.len() as u64);
            }
        }
        "cascades" => {
            let trades = trades_from_trace(trace);
            let events = detect_sell_cascades(&trades, CASCADE_MIN_VAULTS, CASCADE_WINDOW_MS);
            rep.push("all", "events", "10 min, 10 vaults", events.len().to_string(), trades.len() as u64);
            for e in &events {
                rep.push(
                    format!("token:{}", e.token),
                    format!("{}..{}", e.start_ms, e.end_ms),
                    "10 min, 10 vaults",
                    format!("vaults={} median_gap_ms={:.1}", e.vaults, e.median_gap_ms),
                    e.sells as u64,
                );
            }
        }
        "two_sided" | "two_sided_rolling" => {
            let trades = trades_from_trace(trace);
            let w = if metric == "two_sided" { Windowing::Tiled } else { Windowing::Rolling };
            let label = if metric == "two_sided" { "5 min tiled" } else { "5 min rolling" };
            rep.push("all", "two_sided_fraction", label, opt(two_sided_fraction(&trades, TWO_SIDED_WINDOW_MS, w)), trades.len() as u64);
        }
        other => return Err(AnalyticsError::UnknownMetric { name: other.to_string() }),
    }
    Ok(rep)
}
