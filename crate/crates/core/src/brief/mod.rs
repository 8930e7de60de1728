//! Brief compilation: mandate, market, portfolio, constraints, reap,
//! launch, memory and clock become a typed [`StructuredBrief`] and an
//! ordered, hashed [`RenderedBrief`].
//!
//! The structured form never depends on the template, so two templates that
//! differ only in section order or prose compile to equal structures.

mod template;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use template::{
    move_section, permute_sections, BriefTemplate, Clause, CmpOp, ConditionalRule, Predicate, SectionId, SettingsStyle, TemplateError, BUILTIN_TEMPLATES,
    PLACEHOLDERS,
};

use crate::directive::{classify_directive, ActionKind, Condition, DirectiveClass, DirectiveStatus, Restriction};
use crate::guard::GuardConfig;
use crate::mandate::{active_strategies, ConfigCommit, Priority, SliderConfig};
use crate::market::{
    max_buy_within_impact, max_sell_within_impact, new_coin_buy_cap, CapResult, EthDelta, FeeSchedule, MarketSnapshot, Pool, TokenId, TokenStats,
    NEW_COIN_BASE_CAP, NEW_COIN_CAP_STEP, NEW_COIN_STEP_MINUTES, NEW_COIN_UNCAP_MINUTES,
};
use crate::policy::ActionType;
use crate::units::{Eth, Price, Tokens, SCALE};
use crate::vault::PortfolioContext;
use crate::{format_clock, Tick, MINUTES_PER_TICK, TICKS_PER_DAY};

/// Ticks after launch during which a token counts as a new launch.
pub const NEW_LAUNCH_TICKS: u64 = TICKS_PER_DAY;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BriefError {
    #[error("section {0} is required by the template but has no payload")]
    MissingSectionPayload(SectionId),
}

/// What happened to a remembered invocation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum MemoryOutcome {
    Settled,
    Observed,
    Rejected(String),
    Failed(String),
    ParseError,
}

impl MemoryOutcome {
    pub fn is_settled(&self) -> bool {
        matches!(self, MemoryOutcome::Settled)
    }

    fn render(&self) -> String {
        match self {
            MemoryOutcome::Settled => "settled".into(),
            MemoryOutcome::Observed => "observed".into(),
            MemoryOutcome::Rejected(code) => format!("rejected ({code})"),
            MemoryOutcome::Failed(why) => format!("failed ({why})"),
            MemoryOutcome::ParseError => "unparseable output".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub tick: Tick,
    pub tool: ActionType,
    pub token: Option<TokenId>,
    pub fraction: Option<f64>,
    pub strategy: Option<String>,
    pub reasons: Vec<String>,
    pub outcome: MemoryOutcome,
}

/// Per-vault execution record of strategy directives, keyed by label and
/// text so a rewritten strategy starts fresh.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectiveBook {
    records: BTreeMap<String, DirectiveRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectiveRecord {
    pub executions: u32,
    pub rejections: u32,
    pub last_executed_at: Option<Tick>,
}

/// Guard rejections after which a directive counts as blocked.
pub const BLOCK_AFTER_REJECTIONS: u32 = 3;

fn book_key(label: &str, text: &str) -> String {
    format!("{label}\u{1f}{text}")
}

impl DirectiveBook {
    pub fn record(&self, label: &str, text: &str) -> Option<&DirectiveRecord> {
        self.records.get(&book_key(label, text))
    }

    pub fn note_settled(&mut self, label: &str, text: &str, at: Tick) {
        let r = self.records.entry(book_key(label, text)).or_default();
        r.executions += 1;
        r.last_executed_at = Some(at);
    }

    pub fn note_rejected(&mut self, label: &str, text: &str) {
        self.records.entry(book_key(label, text)).or_default().rejections += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyView {
    pub label: String,
    pub text: String,
    pub priority: Priority,
    pub expiry: Option<Tick>,
    pub created_at: Tick,
    pub class: DirectiveClass,
    pub status: DirectiveStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLimit {
    pub token: TokenId,
    pub symbol: String,
    /// Largest BUY spend within the impact bound.
    pub buy_max_eth: Eth,
    /// Largest SELL within the impact bound; present only for held tokens.
    pub sell_max: Option<Tokens>,
    pub new_coin_cap: CapResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintsView {
    pub max_trade_bps: u32,
    pub max_trade_eth: Eth,
    pub slippage_bps: u32,
    pub max_price_impact_bps: u32,
    pub max_positions: Option<usize>,
    pub token_limits: Vec<TokenLimit>,
}

impl ConstraintsView {
    pub fn limit(&self, token: &TokenId) -> Option<&TokenLimit> {
        self.token_limits.iter().find(|l| &l.token == token)
    }
}

/// Impact-bounded trade sizes per live pool; computed once per tick.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImpactLimits {
    pub max_impact_bps: u32,
    pub per_token: BTreeMap<TokenId, (Eth, Option<Tokens>)>,
}

impl ImpactLimits {
    pub fn compute<'a>(pools: impl IntoIterator<Item = &'a Pool>, max_impact_bps: u32) -> ImpactLimits {
        let per_token = pools
            .into_iter()
            .filter(|p| !p.delisted)
            .map(|p| (p.token.clone(), (max_buy_within_impact(p, max_impact_bps), max_sell_within_impact(p, max_impact_bps))))
            .collect();
        ImpactLimits { max_impact_bps, per_token }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReapInfo {
    pub next_at: Tick,
    pub countdown: Tick,
    /// Lowest market caps first.
    pub sources: Vec<TokenId>,
    /// Highest market caps first.
    pub targets: Vec<TokenId>,
}

/// Candidates listed on each side of the reap context.
pub const REAP_CANDIDATES: usize = 2;

impl ReapInfo {
    pub fn from_snapshot(snapshot: &MarketSnapshot, next_at: Tick, now: Tick) -> Option<ReapInfo> {
        if snapshot.rows.len() < 2 || next_at < now {
            return None;
        }
        // same tie-breaks as reap pair selection
        let tie = |a: &&TokenStats, b: &&TokenStats| a.launched_at.cmp(&b.launched_at).then_with(|| a.token.cmp(&b.token));
        let mut asc: Vec<&TokenStats> = snapshot.rows.iter().collect();
        asc.sort_by(|a, b| a.market_cap.cmp(&b.market_cap).then_with(|| tie(a, b)));
        let mut desc = asc.clone();
        desc.sort_by(|a, b| b.market_cap.cmp(&a.market_cap).then_with(|| tie(a, b)));
        let n = REAP_CANDIDATES.min(asc.len() / 2).max(1);
        let sources = asc.iter().take(n).map(|r| r.token.clone()).collect();
        let targets = desc.iter().take(n).map(|r| r.token.clone()).collect();
        Some(ReapInfo { next_at, countdown: next_at - now, sources, targets })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchInfo {
    pub symbol: String,
    pub launches_at: Tick,
}

/// Everything a brief is compiled from. All borrowed, all immutable.
#[derive(Debug, Clone, Copy)]
pub struct BriefInputs<'a> {
    pub commit: &'a ConfigCommit,
    pub snapshot: &'a MarketSnapshot,
    pub portfolio: &'a PortfolioContext,
    pub guard: &'a GuardConfig,
    pub fees: FeeSchedule,
    pub limits: &'a ImpactLimits,
    pub reap: Option<&'a ReapInfo>,
    pub launch: Option<&'a LaunchInfo>,
    pub memory: &'a [MemoryEntry],
    pub directives: &'a DirectiveBook,
    pub now: Tick,
}

/// Typed brief. Equality ignores section order by construction: nothing
/// here records it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredBrief {
    pub now: Tick,
    pub config_version: u64,
    pub sliders: SliderConfig,
    pub strategies: Vec<StrategyView>,
    pub market: Vec<TokenStats>,
    pub portfolio: PortfolioContext,
    pub constraints: ConstraintsView,
    pub fees: FeeSchedule,
    pub reap: Option<ReapInfo>,
    pub launch: Option<LaunchInfo>,
    pub memory: Vec<MemoryEntry>,
}

impl StructuredBrief {
    pub fn row(&self, token: &TokenId) -> Option<&TokenStats> {
        self.market.iter().find(|r| &r.token == token)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("brief serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedBrief {
    pub text: String,
    /// Hex SHA-256 of `text`.
    pub brief_hash: String,
    pub template_variant_id: String,
}

impl RenderedBrief {
    pub fn new(text: String, template_variant_id: impl Into<String>) -> Self {
        let brief_hash = hash_text(&text);
        RenderedBrief { text, brief_hash, template_variant_id: template_variant_id.into() }
    }
}

pub fn hash_text(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledBrief {
    pub structured: StructuredBrief,
    pub rendered: RenderedBrief,
}

pub fn compile(template: &BriefTemplate, inputs: &BriefInputs<'_>) -> Result<CompiledBrief, BriefError> {
    let structured = structure(inputs, template.memory_window);
    let rendered = render(template, &structured)?;
    Ok(CompiledBrief { structured, rendered })
}

/// The typed half of compilation.
pub fn structure(inputs: &BriefInputs<'_>, memory_window: usize) -> StructuredBrief {
    let now = inputs.now;
    let memory_start = inputs.memory.len().saturating_sub(memory_window);
    let memory = inputs.memory[memory_start..].to_vec();
    let strategies = active_strategies(inputs.commit, now)
        .into_iter()
        .map(|s| {
            let class = classify_directive(&s.text);
            let record = inputs.directives.record(&s.label, &s.text);
            let status = directive_status(&class, record, s.created_at, inputs.snapshot, inputs.portfolio, &memory);
            StrategyView { label: s.label.clone(), text: s.text.clone(), priority: s.priority, expiry: s.expiry, created_at: s.created_at, class, status }
        })
        .collect();
    let token_limits = inputs
        .snapshot
        .rows
        .iter()
        .filter_map(|row| {
            let (buy_max_eth, sell_cap) = inputs.limits.per_token.get(&row.token)?.clone();
            let held = inputs.portfolio.position(&row.token).is_some();
            Some(TokenLimit {
                token: row.token.clone(),
                symbol: row.symbol.clone(),
                buy_max_eth,
                sell_max: if held { sell_cap } else { None },
                new_coin_cap: new_coin_buy_cap(row.launched_at, now),
            })
        })
        .collect();
    StructuredBrief {
        now,
        config_version: inputs.commit.version,
        sliders: inputs.commit.sliders,
        strategies,
        market: inputs.snapshot.rows.clone(),
        portfolio: inputs.portfolio.clone(),
        constraints: ConstraintsView {
            max_trade_bps: inputs.guard.max_trade_bps,
            max_trade_eth: inputs.guard.max_trade_eth(inputs.portfolio.eth_balance),
            slippage_bps: inputs.guard.slippage_bps,
            max_price_impact_bps: inputs.guard.max_price_impact_bps,
            max_positions: inputs.guard.max_positions,
            token_limits,
        },
        fees: inputs.fees,
        reap: inputs.reap.cloned(),
        launch: inputs.launch.cloned(),
        memory,
    }
}

fn symbol_matches(row: &TokenStats, sym: &str) -> bool {
    row.symbol.eq_ignore_ascii_case(sym) || row.token.as_str().eq_ignore_ascii_case(sym)
}

fn find_row<'a>(snapshot: &'a MarketSnapshot, sym: &str) -> Option<&'a TokenStats> {
    snapshot.rows.iter().find(|r| symbol_matches(r, sym))
}

fn held_symbol<'a>(portfolio: &'a PortfolioContext, sym: &str) -> Option<&'a crate::vault::PositionView> {
    portfolio.positions.iter().find(|p| p.symbol.eq_ignore_ascii_case(sym) || p.token.as_str().eq_ignore_ascii_case(sym))
}

/// Whether a triggered condition currently holds for its token.
pub fn condition_holds(condition: &Condition, token: Option<&str>, snapshot: &MarketSnapshot, portfolio: &PortfolioContext) -> bool {
    let Some(sym) = token else { return false };
    match condition {
        Condition::Pnl { cmp, pct } => held_symbol(portfolio, sym).is_some_and(|p| p.unrealized_pnl_pct.is_finite() && cmp.holds(p.unrealized_pnl_pct, *pct)),
        Condition::PriceChange { cmp, pct } => find_row(snapshot, sym).and_then(|r| r.pct_change.h1).is_some_and(|c| cmp.holds(c, *pct)),
        Condition::Price { cmp, eth } => find_row(snapshot, sym).is_some_and(|r| cmp.holds(r.price.to_f64(), *eth)),
    }
}

fn action_feasible(kind: ActionKind, token: Option<&str>, snapshot: &MarketSnapshot, portfolio: &PortfolioContext) -> bool {
    match (kind, token) {
        (ActionKind::Buy, Some(sym)) => find_row(snapshot, sym).is_some() && !portfolio.eth_balance.is_zero(),
        (ActionKind::Buy, None) => false,
        (ActionKind::Sell | ActionKind::Liquidate, Some(sym)) => held_symbol(portfolio, sym).is_some(),
        (ActionKind::Sell | ActionKind::Liquidate, None) => !portfolio.positions.is_empty(),
    }
}

fn sold_since(memory: &[MemoryEntry], since: Tick, tokens: &[String]) -> bool {
    memory.iter().any(|m| {
        m.tick >= since
            && m.tool == ActionType::Sell
            && m.outcome.is_settled()
            && (tokens.is_empty() || m.token.as_ref().is_some_and(|t| tokens.iter().any(|s| s.eq_ignore_ascii_case(t.as_str()))))
    })
}

/// Status of one directive given its execution record and current state.
pub fn directive_status(
    class: &DirectiveClass,
    record: Option<&DirectiveRecord>,
    created_at: Tick,
    snapshot: &MarketSnapshot,
    portfolio: &PortfolioContext,
    memory: &[MemoryEntry],
) -> DirectiveStatus {
    let executions = record.map_or(0, |r| r.executions);
    let rejections = record.map_or(0, |r| r.rejections);
    match class {
        DirectiveClass::ImmediateAction { action } => {
            let token = action.token.as_deref();
            let done = match (action.kind, token) {
                // a liquidation is done once nothing in scope is left
                (ActionKind::Liquidate, None) => executions > 0 && portfolio.positions.is_empty(),
                (ActionKind::Liquidate, Some(sym)) => executions > 0 && held_symbol(portfolio, sym).is_none(),
                _ => executions > 0,
            };
            if done {
                DirectiveStatus::Completed
            } else if rejections >= BLOCK_AFTER_REJECTIONS || !action_feasible(action.kind, token, snapshot, portfolio) {
                DirectiveStatus::Blocked
            } else {
                DirectiveStatus::Pending
            }
        }
        DirectiveClass::TriggeredAction { condition, token, action } => {
            if executions > 0 {
                DirectiveStatus::Completed
            } else if !condition_holds(condition, token.as_deref(), snapshot, portfolio) {
                DirectiveStatus::Pending
            } else if rejections >= BLOCK_AFTER_REJECTIONS || !action_feasible(action.kind, action.token.as_deref().or(token.as_deref()), snapshot, portfolio) {
                DirectiveStatus::Blocked
            } else {
                DirectiveStatus::Triggered
            }
        }
        DirectiveClass::Restriction { rule } => {
            let violated = match rule {
                Restriction::OnlyTokens(syms) => portfolio.positions.iter().any(|p| !syms.iter().any(|s| s.eq_ignore_ascii_case(&p.symbol))),
                Restriction::AvoidTokens(syms) => syms.iter().any(|s| held_symbol(portfolio, s).is_some()),
                Restriction::AvoidGenesis => portfolio.positions.iter().any(|p| snapshot.row(&p.token).is_some_and(|r| r.genesis)),
                Restriction::AvoidNewLaunches => {
                    portfolio.positions.iter().any(|p| snapshot.row(&p.token).is_some_and(|r| !r.genesis && r.age_ticks < NEW_LAUNCH_TICKS))
                }
                Restriction::StayFlat => !portfolio.positions.is_empty(),
                Restriction::BuyOnly => sold_since(memory, created_at, &[]),
            };
            if violated {
                DirectiveStatus::Violated
            } else {
                DirectiveStatus::ActiveCompliant
            }
        }
        DirectiveClass::HoldRule { tokens } => {
            if sold_since(memory, created_at, tokens) {
                DirectiveStatus::Violated
            } else {
                DirectiveStatus::ActiveCompliant
            }
        }
        DirectiveClass::Unclassified => DirectiveStatus::Pending,
    }
}

/// Whether a token passes a restriction's buy filter.
pub fn restriction_allows_buy(rule: &Restriction, row: &TokenStats) -> bool {
    match rule {
        Restriction::OnlyTokens(syms) => syms.iter().any(|s| symbol_matches(row, s)),
        Restriction::AvoidTokens(syms) => !syms.iter().any(|s| symbol_matches(row, s)),
        Restriction::AvoidGenesis => !row.genesis,
        Restriction::AvoidNewLaunches => row.genesis || row.age_ticks >= NEW_LAUNCH_TICKS,
        Restriction::StayFlat => false,
        Restriction::BuyOnly => true,
    }
}

// ---- rendering ----

fn bps_pct(bps: u32) -> String {
    let whole = bps / 100;
    let frac = bps % 100;
    if frac == 0 {
        format!("{whole}%")
    } else if frac % 10 == 0 {
        format!("{whole}.{}%", frac / 10)
    } else {
        format!("{whole}.{frac:02}%")
    }
}

fn digits(mut n: u128) -> usize {
    let mut d = 1;
    while n >= 10 {
        n /= 10;
        d += 1;
    }
    d
}

/// Fixed-point value with about `sig` significant digits, truncated.
fn fmt_sig(raw: u128, sig: usize) -> String {
    let eth = Eth(raw);
    if raw == 0 {
        return "0".into();
    }
    let prec = if raw >= SCALE { 4 } else { (18 - digits(raw)) + sig };
    let s = format!("{eth:.prec$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn fmt_price(p: Price) -> String {
    fmt_sig(p.raw(), 6)
}

fn fmt_eth_short(e: Eth) -> String {
    fmt_sig(e.raw(), 4)
}

fn fmt_delta(d: EthDelta) -> String {
    let sign = if d.0 < 0 { "-" } else { "+" };
    format!("{sign}{}", fmt_eth_short(Eth(d.0.unsigned_abs())))
}

fn fmt_pct(x: f64) -> String {
    if x.is_finite() {
        format!("{x:+.2}%")
    } else {
        "n/a".into()
    }
}

fn fmt_duration(ticks: u64) -> String {
    let minutes = ticks * MINUTES_PER_TICK;
    let (d, h, m) = (minutes / 1440, (minutes / 60) % 24, minutes % 60);
    if d > 0 {
        format!("{d}d {h:02}h")
    } else if h > 0 {
        format!("{h}h {m:02}m")
    } else {
        format!("{m}m")
    }
}

fn fmt_fraction(f: f64) -> String {
    // shortest representation that round-trips
    let s = format!("{f}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn symbol_of<'a>(brief: &'a StructuredBrief, token: &'a TokenId) -> &'a str {
    brief.row(token).map_or(token.as_str(), |r| r.symbol.as_str())
}

fn placeholder_value(name: &str, b: &StructuredBrief) -> Option<String> {
    let fees = b.fees;
    Some(match name {
        "fee_pct" => bps_pct(fees.total_bps()),
        "lp_fee_pct" => bps_pct(fees.lp_fee_bps),
        "protocol_fee_pct" => bps_pct(fees.protocol_fee_bps),
        "round_trip_pct" => bps_pct(2 * fees.total_bps()),
        "max_trade_pct" => bps_pct(b.constraints.max_trade_bps),
        "slippage_pct" => bps_pct(b.constraints.slippage_bps),
        "max_impact_bps" => b.constraints.max_price_impact_bps.to_string(),
        "new_coin_base" => NEW_COIN_BASE_CAP.to_string(),
        "new_coin_step" => NEW_COIN_CAP_STEP.to_string(),
        "new_coin_step_minutes" => NEW_COIN_STEP_MINUTES.to_string(),
        "new_coin_uncap_minutes" => NEW_COIN_UNCAP_MINUTES.to_string(),
        _ => return None,
    })
}

fn section_payload(id: SectionId, b: &StructuredBrief) -> Option<String> {
    let mut out = String::new();
    match id {
        SectionId::SystemRules | SectionId::OperatingRules => {}
        SectionId::DirectiveRouter => {
            let high: Vec<&StrategyView> = b.strategies.iter().filter(|s| s.priority == Priority::High).collect();
            if high.is_empty() {
                out.push_str("- No [HIGH] directives.");
            }
            for s in high {
                let _ = writeln!(out, "- {}: {} ({})", s.label, s.class.label(), s.status.as_str());
            }
        }
        SectionId::MarketSnapshot => {
            if b.market.is_empty() {
                out.push_str("- No tokens are trading.");
            }
            for r in &b.market {
                let _ = write!(out, "- {}", r.symbol);
                if r.genesis {
                    out.push_str(" (genesis)");
                }
                let _ = write!(out, " | Price: {} ETH | Age: {} | Mcap: {} ETH", fmt_price(r.price), fmt_duration(r.age_ticks), fmt_eth_short(r.market_cap));
                let pc = &r.pct_change;
                if pc.m5.is_some() || pc.h1.is_some() || pc.h24.is_some() {
                    out.push_str(" | Price Changes:");
                    for (label, v) in [("5m", pc.m5), ("1h", pc.h1), ("24h", pc.h24)] {
                        if let Some(v) = v {
                            let _ = write!(out, " {label}: {}", fmt_pct(v));
                        }
                    }
                }
                if r.volume.m5.is_some() || r.volume.h1.is_some() {
                    out.push_str(" | Volume:");
                    if let Some(v) = r.volume.m5 {
                        let _ = write!(out, " 5m: {}", fmt_eth_short(v));
                    }
                    if let Some(v) = r.volume.h1 {
                        let _ = write!(out, " 1h: {}", fmt_eth_short(v));
                    }
                }
                let flow = |d: Option<EthDelta>| d.map_or("n/a".to_string(), fmt_delta);
                let _ =
                    writeln!(out, " | Flow: {} / {} | Holders: {} | 5m traders: {}", flow(r.net_flow.m5), flow(r.net_flow.h1), r.holders, r.unique_traders_5m);
            }
        }
        SectionId::ActiveStrategies => {
            if b.strategies.is_empty() {
                out.push_str("- No active strategies.");
            }
            for s in &b.strategies {
                let _ = write!(out, "- [{}] {}: {}", s.priority, s.label, s.text);
                if let Some(exp) = s.expiry {
                    let _ = write!(out, " (until {})", format_clock(exp));
                }
                out.push('\n');
            }
        }
        SectionId::ActiveSettings => {
            let s = &b.sliders;
            let _ = writeln!(out, "- Trading Activity: {} / 5", s.trading_activity);
            let _ = writeln!(out, "- Asset Risk Preference: {} / 5", s.asset_risk_preference);
            let _ = writeln!(out, "- Trade Size: {} / 5", s.trade_size);
            let _ = writeln!(out, "- Holding Style: {} / 5", s.holding_style);
            let _ = writeln!(out, "- Diversification: {} / 5", s.diversification);
        }
        SectionId::PortfolioContext => {
            let p = &b.portfolio;
            let _ =
                writeln!(out, "- ETH: {} | Total value: {} ETH | Deployed: {:.1}%", p.eth_balance, fmt_eth_short(p.total_value), p.deployment_fraction * 100.0);
            if p.positions.is_empty() {
                out.push_str("- No token positions.");
            }
            for pos in &p.positions {
                let _ = writeln!(
                    out,
                    "- {}: Balance: {} | Avg Entry: {} | Unrealized PnL: {} | Time Held: {}",
                    pos.symbol,
                    pos.balance,
                    fmt_price(pos.avg_entry_price),
                    fmt_pct(pos.unrealized_pnl_pct),
                    fmt_duration(pos.time_held)
                );
            }
        }
        SectionId::ExecutionConstraints => {
            let c = &b.constraints;
            let _ = writeln!(out, "- Max trade: {} bps of available ETH ({} ETH per BUY).", c.max_trade_bps, c.max_trade_eth);
            let _ = writeln!(out, "- Slippage tolerance: {} bps.", c.slippage_bps);
            if let Some(n) = c.max_positions {
                let _ = writeln!(out, "- Position limit: {n} tokens.");
            }
            let _ = writeln!(out, "- Price impact limit: max {} bps.", c.max_price_impact_bps);
            for l in &c.token_limits {
                let _ = write!(out, "- {}: BUY max {} ETH", l.symbol, l.buy_max_eth);
                if let Some(s) = l.sell_max {
                    let _ = write!(out, ", SELL max {} {}", s, l.symbol);
                }
                if let CapResult::Capped(cap) = l.new_coin_cap {
                    let _ = write!(out, ", new-coin cap {cap} ETH");
                }
                out.push('\n');
            }
        }
        SectionId::ReapContext => {
            let r = b.reap.as_ref()?;
            let _ = writeln!(out, "Next reap: {} (in {})", format_clock(r.next_at), fmt_duration(r.countdown));
            out.push_str("Current lower market cap:\n");
            for t in &r.sources {
                let _ = writeln!(out, "- {}", symbol_of(b, t));
            }
            out.push_str("Current higher market cap:\n");
            for t in &r.targets {
                let _ = writeln!(out, "- {}", symbol_of(b, t));
            }
        }
        SectionId::UpcomingLaunch => {
            let l = b.launch.as_ref()?;
            let _ = writeln!(
                out,
                "A new token, {}, launches at {} (in {}).",
                l.symbol,
                format_clock(l.launches_at),
                fmt_duration(l.launches_at.saturating_sub(b.now))
            );
        }
        SectionId::PreviousDecisions => {
            if b.memory.is_empty() {
                out.push_str("- No recent actions recorded.");
            }
            for m in &b.memory {
                let _ = writeln!(out, "- {} | {} | args: {} | {}", format_clock(m.tick), tool_name(m.tool), memory_args(m), m.outcome.render());
            }
        }
        SectionId::CurrentState => {
            let _ = writeln!(out, "- Current time: {} (tick {})", format_clock(b.now), b.now);
            out.push_str("- Allowed actions: BUY (buy_token), SELL (sell_token), OBSERVE (record_observation)");
        }
    }
    Some(out.trim_end().to_string())
}

pub fn tool_name(a: ActionType) -> &'static str {
    match a {
        ActionType::Buy => "buy_token",
        ActionType::Sell => "sell_token",
        ActionType::Observe => "record_observation",
    }
}

fn memory_args(m: &MemoryEntry) -> String {
    let mut parts = Vec::new();
    if let Some(t) = &m.token {
        parts.push(format!("\"token\":{}", serde_json::Value::String(t.to_string())));
    }
    if let Some(f) = m.fraction {
        parts.push(format!("\"fraction\":{}", fmt_fraction(f)));
    }
    if let Some(s) = &m.strategy {
        parts.push(format!("\"strategy\":{}", serde_json::Value::String(s.clone())));
    }
    if !m.reasons.is_empty() {
        parts.push(format!("\"reason\":{}", serde_json::to_string(&m.reasons).expect("strings")));
    }
    format!("{{{}}}", parts.join(","))
}

fn fill_line(line: &str, b: &StructuredBrief, data: &str, conditionals: &str) -> String {
    let mut out = String::with_capacity(line.len() + data.len());
    let mut rest = line;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else { break };
        match after[..close].trim() {
            "data" => out.push_str(data),
            "conditionals" => out.push_str(conditionals),
            name => out.push_str(&placeholder_value(name, b).expect("placeholders checked at load")),
        }
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    out
}

/// Renders a structured brief under a template. Pure.
pub fn render(template: &BriefTemplate, b: &StructuredBrief) -> Result<RenderedBrief, BriefError> {
    let mut sections = Vec::with_capacity(template.section_order.len());
    for &id in &template.section_order {
        let data = match section_payload(id, b) {
            Some(d) => d,
            None if template.optional.contains(&id) => continue,
            None => return Err(BriefError::MissingSectionPayload(id)),
        };
        let inserted: Vec<&str> = template.active_conditionals(&b.sliders).filter(|c| c.section == id).map(|c| c.text.as_str()).collect();
        let cond = inserted.join("\n");
        let text = &template.static_texts[&id];
        let mut lines = Vec::new();
        for line in text.lines() {
            // a bare placeholder with nothing to insert leaves no blank line
            let bare = line.trim();
            if (bare == "{{data}}" && data.is_empty()) || (bare == "{{conditionals}}" && cond.is_empty()) {
                continue;
            }
            lines.push(fill_line(line, b, &data, &cond));
        }
        if !cond.is_empty() && !text.contains("{{conditionals}}") {
            lines.push(cond);
        }
        sections.push(lines.join("\n"));
    }
    let mut text = sections.join("\n\n");
    text.push('\n');
    Ok(RenderedBrief::new(text, template.variant_id.clone()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BriefDiff {
    /// Unified line diff of the rendered texts.
    pub diff: String,
    pub changed_lines: usize,
    pub structurally_equal: bool,
}

pub fn brief_diff(a: &CompiledBrief, b: &CompiledBrief) -> BriefDiff {
    let text_diff = similar::TextDiff::from_lines(&a.rendered.text, &b.rendered.text);
    let changed_lines = text_diff.iter_all_changes().filter(|c| c.tag() != similar::ChangeTag::Equal).count();
    let diff = text_diff.unified_diff().header(&a.rendered.template_variant_id, &b.rendered.template_variant_id).to_string();
    BriefDiff { diff, changed_lines, structurally_equal: a.structured == b.structured }
}

/// Tokens the brief names as reap sources.
pub fn reap_sources(b: &StructuredBrief) -> BTreeSet<&TokenId> {
    b.reap.iter().flat_map(|r| r.sources.iter()).collect()
}
