//! The slider-conditioned reference policy: a transparent rule system that
//! follows the brief's decision hierarchy.
//!
//! 1. a pending [HIGH] immediate action is carried out;
//! 2. a fired [HIGH] trigger is carried out;
//! 3. a violated [HIGH] restriction is repaired, an active [HIGH]
//!    restriction or hold rule means observe;
//! 4. otherwise trade on the sliders, gated by the pace table.

use std::collections::BTreeMap;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{format_tool_call, DecisionContext, Policy, ReasonTag, ToolCall};
use crate::brief::{restriction_allows_buy, StrategyView, StructuredBrief};
use crate::directive::{ActionKind, ActionSpec, DirectiveClass, DirectiveStatus, Restriction};
use crate::mandate::{Priority, Slider};
use crate::market::{CapResult, TokenId, TokenStats};
use crate::policy::ActionType;
use crate::units::Eth;
use crate::vault::PositionView;
use crate::Tick;

/// Slider lookup tables, indexed by level minus one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTables {
    /// Probability of acting at all on an invocation, by TA.
    pub trade_prob: [f64; 5],
    /// Buy size as a fraction of available ETH, by TS.
    pub spend: [f64; 5],
    /// Minimum ticks held before a voluntary (non-stop) sell, by HS.
    pub min_hold: [u64; 5],
    /// Stop-loss threshold on unrealized PnL percent, by HS.
    pub stop_loss_pct: [f64; 5],
    /// Profit target on unrealized PnL percent, by HS.
    pub take_profit_pct: [f64; 5],
    /// Ticks after which a position is exited; `None` holds indefinitely.
    pub max_hold: [Option<u64>; 5],
    /// Most distinct positions, by DIV.
    pub max_positions: [usize; 5],
    /// Minimum token age for buy candidates, by ARP.
    pub min_age: [u64; 5],
    /// Momentum bonus in percentage points for a brand-new token, by ARP.
    pub youth_bonus: [f64; 5],
    pub sell_rebuy_cooldown: Tick,
    pub buy_buy_cooldown: Tick,
    pub sell_sell_cooldown: Tick,
    /// A held reap source is not sold this close to the reap.
    pub reap_hold_window: Tick,
    /// Share of a position sold on reaching the profit target.
    pub target_sell_fraction: f64,
    /// Ticks a same-token repeat needs fresh evidence for, at TA >= 4.
    pub fresh_signal_window: Tick,
    /// Five-minute move, in percent, that counts as fresh evidence.
    pub fresh_signal_move_pct: f64,
    /// Candidates the pick is drawn from.
    pub top_k: usize,
}

impl Default for ReferenceTables {
    fn default() -> Self {
        ReferenceTables {
            trade_prob: [0.03, 0.06, 0.10, 0.13, 0.17],
            spend: [0.02, 0.10, 0.25, 0.50, 0.95],
            min_hold: [1, 6, 24, 72, 288],
            stop_loss_pct: [-8.0, -12.0, -18.0, -25.0, -35.0],
            take_profit_pct: [8.0, 15.0, 25.0, 40.0, 60.0],
            max_hold: [Some(12), Some(48), Some(288), Some(864), None],
            max_positions: [1, 2, 4, 6, 10],
            min_age: [288, 288, 12, 0, 0],
            youth_bonus: [0.0, 0.0, 0.0, 5.0, 15.0],
            sell_rebuy_cooldown: 8,
            buy_buy_cooldown: 4,
            sell_sell_cooldown: 4,
            reap_hold_window: 12,
            target_sell_fraction: 0.5,
            fresh_signal_window: 12,
            fresh_signal_move_pct: 2.0,
            top_k: 3,
        }
    }
}

fn level(brief: &StructuredBrief, s: Slider) -> usize {
    (brief.sliders.get(s).clamp(1, 5) - 1) as usize
}

/// Keeps a fraction a hair under a ratio so fixed-point rounding of the
/// guard's `floor(balance * fraction)` cannot exceed the bound.
fn under(ratio: f64) -> f64 {
    ratio * (1.0 - 1e-9)
}

fn resolve_token(brief: &StructuredBrief, sym: &str) -> Option<TokenId> {
    brief.market.iter().find(|r| r.symbol.eq_ignore_ascii_case(sym) || r.token.as_str().eq_ignore_ascii_case(sym)).map(|r| r.token.clone())
}

fn held_by_symbol<'a>(brief: &'a StructuredBrief, sym: &str) -> Option<&'a PositionView> {
    brief.portfolio.positions.iter().find(|p| p.symbol.eq_ignore_ascii_case(sym) || p.token.as_str().eq_ignore_ascii_case(sym))
}

/// Balances below this are dust and never spent.
pub const MIN_BUY_BALANCE: Eth = Eth::from_raw(1_000_000_000_000);

/// Positions worth less than this are dust: never sold, never counted.
pub const DUST_VALUE: Eth = MIN_BUY_BALANCE;

fn is_dust(pos: &PositionView) -> bool {
    pos.value < DUST_VALUE
}

/// Largest buy fraction every hard limit allows for this token; zero on a
/// dust balance.
pub fn buy_fraction_cap(brief: &StructuredBrief, token: &TokenId) -> f64 {
    let balance = brief.portfolio.eth_balance;
    if balance < MIN_BUY_BALANCE {
        return 0.0;
    }
    let b = balance.to_f64();
    let mut cap = brief.constraints.max_trade_eth.to_f64() / b;
    if let Some(limit) = brief.constraints.limit(token) {
        cap = cap.min(limit.buy_max_eth.to_f64() / b);
        if let CapResult::Capped(c) = limit.new_coin_cap {
            cap = cap.min(c.to_f64() / b);
        }
    }
    under(cap.min(1.0))
}

/// Largest sell fraction the impact bound allows for this position.
pub fn sell_fraction_cap(brief: &StructuredBrief, pos: &PositionView) -> f64 {
    match brief.constraints.limit(&pos.token).and_then(|l| l.sell_max) {
        Some(max) if max < pos.balance => under(max.to_f64() / pos.balance.to_f64()),
        _ => 1.0,
    }
}

/// Tick of the last settled action of `tool` on `token`, from memory.
fn last_settled(brief: &StructuredBrief, token: &TokenId, tool: ActionType) -> Option<Tick> {
    brief.memory.iter().rev().find(|m| m.tool == tool && m.outcome.is_settled() && m.token.as_ref() == Some(token)).map(|m| m.tick)
}

pub fn buy_on_cooldown(brief: &StructuredBrief, t: &ReferenceTables, token: &TokenId) -> bool {
    let now = brief.now;
    last_settled(brief, token, ActionType::Sell).is_some_and(|at| now - at < t.sell_rebuy_cooldown)
        || last_settled(brief, token, ActionType::Buy).is_some_and(|at| now - at < t.buy_buy_cooldown)
}

pub fn sell_on_cooldown(brief: &StructuredBrief, t: &ReferenceTables, token: &TokenId) -> bool {
    last_settled(brief, token, ActionType::Sell).is_some_and(|at| brief.now - at < t.sell_sell_cooldown)
}

fn momentum(row: &TokenStats) -> f64 {
    row.pct_change.h1.or(row.pct_change.m5).unwrap_or(0.0)
}

fn high(brief: &StructuredBrief) -> impl Iterator<Item = &StrategyView> {
    brief.strategies.iter().filter(|s| s.priority == Priority::High)
}

/// Carries out one directive action; `None` when nothing executable remains.
fn execute_action(brief: &StructuredBrief, t: &ReferenceTables, action: &ActionSpec, fallback_token: Option<&str>, label: &str) -> Option<ToolCall> {
    let sym = action.token.as_deref().or(fallback_token);
    let call = match action.kind {
        ActionKind::Buy => {
            let token = resolve_token(brief, sym?)?;
            let wanted = action.fraction.unwrap_or(t.spend[level(brief, Slider::TradeSize)]);
            let f = wanted.min(buy_fraction_cap(brief, &token));
            if f <= 0.0 {
                return None;
            }
            ToolCall::buy(&token, f, vec![ReasonTag::StrategyExecution])
        }
        ActionKind::Sell | ActionKind::Liquidate => {
            let pos = match sym {
                Some(s) => held_by_symbol(brief, s)?,
                None => brief.portfolio.positions.iter().max_by(|a, b| a.value.cmp(&b.value).then_with(|| b.token.cmp(&a.token)))?,
            };
            let wanted = if action.kind == ActionKind::Liquidate { 1.0 } else { action.fraction.unwrap_or(1.0) };
            ToolCall::sell(&pos.token, wanted.min(sell_fraction_cap(brief, pos)), vec![ReasonTag::StrategyExecution])
        }
    };
    Some(call.with_strategy(label).with_note(format!("carrying out {label}")))
}

/// Sell that repairs a violated restriction, if one applies.
fn repair(brief: &StructuredBrief, rule: &Restriction, label: &str) -> Option<ToolCall> {
    let offending = brief.portfolio.positions.iter().find(|p| {
        let Some(row) = brief.row(&p.token) else { return false };
        match rule {
            Restriction::StayFlat => true,
            Restriction::BuyOnly => false,
            other => !restriction_allows_buy(other, row),
        }
    })?;
    Some(
        ToolCall::sell(&offending.token, sell_fraction_cap(brief, offending), vec![ReasonTag::StrategyExecution])
            .with_strategy(label)
            .with_note(format!("{label} excludes {}", offending.symbol)),
    )
}

/// Steps one to three of the hierarchy.
fn directive_step(brief: &StructuredBrief, t: &ReferenceTables) -> Option<ToolCall> {
    for s in high(brief) {
        if let (DirectiveClass::ImmediateAction { action }, DirectiveStatus::Pending) = (&s.class, s.status) {
            if let Some(call) = execute_action(brief, t, action, None, &s.label) {
                return Some(call);
            }
        }
    }
    for s in high(brief) {
        if let (DirectiveClass::TriggeredAction { token, action, .. }, DirectiveStatus::Triggered) = (&s.class, s.status) {
            if let Some(call) = execute_action(brief, t, action, token.as_deref(), &s.label) {
                return Some(call);
            }
        }
    }
    for s in high(brief) {
        if let (DirectiveClass::Restriction { rule }, DirectiveStatus::Violated) = (&s.class, s.status) {
            if let Some(call) = repair(brief, rule, &s.label) {
                return Some(call);
            }
        }
    }
    for s in high(brief) {
        let tag = match &s.class {
            DirectiveClass::Restriction { .. } => ReasonTag::RestrictionCompliant,
            DirectiveClass::HoldRule { .. } => ReasonTag::HoldRule,
            // an unreadable directive is monitored, not guessed at
            DirectiveClass::Unclassified => ReasonTag::RestrictionCompliant,
            _ => continue,
        };
        return Some(ToolCall::observe(tag).with_note(format!("{} in force", s.label)));
    }
    None
}

/// Tokens protected from slider-driven sells by hold rules at any priority.
fn hold_protected(brief: &StructuredBrief, token: &TokenId) -> bool {
    let symbol = brief.row(token).map_or(token.as_str(), |r| r.symbol.as_str());
    brief.strategies.iter().any(|s| match &s.class {
        DirectiveClass::HoldRule { tokens } => tokens.is_empty() || tokens.iter().any(|t| t.eq_ignore_ascii_case(symbol)),
        DirectiveClass::Restriction { rule: Restriction::BuyOnly } => true,
        _ => false,
    })
}

fn buy_filters(brief: &StructuredBrief) -> Vec<&Restriction> {
    brief
        .strategies
        .iter()
        .filter_map(|s| match &s.class {
            DirectiveClass::Restriction { rule } => Some(rule),
            _ => None,
        })
        .collect()
}

enum Exit {
    Stop,
    Target,
    Stale,
}

/// The slider step. `gate` overrides the pace draw when set.
pub fn slider_step(brief: &StructuredBrief, t: &ReferenceTables, rng: &mut ChaCha8Rng, gate: Option<bool>) -> ToolCall {
    let ta = level(brief, Slider::TradingActivity);
    let hs = level(brief, Slider::HoldingStyle);
    let arp = level(brief, Slider::AssetRiskPreference);
    let div = level(brief, Slider::Diversification);
    let ts = level(brief, Slider::TradeSize);
    let draw: f64 = rng.random();
    let acting = gate.unwrap_or(draw < t.trade_prob[ta]);
    let round_trip = 2.0 * brief.fees.total_bps() as f64 / 100.0;

    let reap_near = brief.reap.as_ref().filter(|r| r.countdown <= t.reap_hold_window);
    let mut reap_held = false;
    let mut cooled = false;

    // exits
    let mut exit: Option<(Exit, &PositionView)> = None;
    for pos in &brief.portfolio.positions {
        if is_dust(pos) || hold_protected(brief, &pos.token) {
            continue;
        }
        let pnl = pos.unrealized_pnl_pct;
        let kind = if pnl.is_finite() && pnl <= t.stop_loss_pct[hs] {
            Exit::Stop
        } else if pos.time_held < t.min_hold[hs] {
            continue;
        } else if pnl.is_finite() && pnl >= t.take_profit_pct[hs] {
            Exit::Target
        } else if t.max_hold[hs].is_some_and(|m| pos.time_held >= m) {
            Exit::Stale
        } else {
            continue;
        };
        if reap_near.is_some_and(|r| r.sources.contains(&pos.token)) {
            reap_held = true;
            continue;
        }
        if sell_on_cooldown(brief, t, &pos.token) {
            cooled = true;
            continue;
        }
        let rank = |e: &Exit| match e {
            Exit::Stop => 0,
            Exit::Target => 1,
            Exit::Stale => 2,
        };
        if exit.as_ref().is_none_or(|(e, _)| rank(&kind) < rank(e)) {
            exit = Some((kind, pos));
        }
    }

    // buy candidates
    let filters = buy_filters(brief);
    let held = brief.portfolio.positions.iter().filter(|p| !is_dust(p)).count();
    let mut cands: Vec<(f64, &TokenStats)> = Vec::new();
    for row in &brief.market {
        if row.age_ticks < t.min_age[arp] && !row.genesis {
            continue;
        }
        if !filters.iter().all(|r| restriction_allows_buy(r, row)) {
            continue;
        }
        let is_held = brief.portfolio.position(&row.token).is_some_and(|p| !is_dust(p));
        if !is_held && held >= t.max_positions[div] {
            continue;
        }
        if buy_on_cooldown(brief, t, &row.token) {
            cooled = true;
            continue;
        }
        if ta >= 3 && repeats_without_evidence(brief, t, row) {
            continue;
        }
        if buy_fraction_cap(brief, &row.token) <= 0.0 {
            continue;
        }
        let youth = 1.0 - (row.age_ticks as f64 / (3 * crate::TICKS_PER_DAY) as f64).min(1.0);
        cands.push((momentum(row) + t.youth_bonus[arp] * youth, row));
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.token.cmp(&b.1.token)));
    let best_move = cands.first().map_or(0.0, |c| c.0);

    if acting {
        if let Some((kind, pos)) = exit {
            let (f, tag) = match kind {
                Exit::Stop => (1.0, ReasonTag::StopLoss),
                Exit::Target => (t.target_sell_fraction, ReasonTag::ProfitTarget),
                Exit::Stale => (1.0, ReasonTag::ThesisBroken),
            };
            // a remainder that would be dust goes with this sale
            let f = if pos.value.to_f64() * (1.0 - f) < DUST_VALUE.to_f64() { 1.0 } else { f };
            let f = f.min(sell_fraction_cap(brief, pos));
            return ToolCall::sell(&pos.token, f, vec![tag])
                .with_note(format!("{} PnL {:+.1}%, held {} ticks", pos.symbol, pos.unrealized_pnl_pct, pos.time_held));
        }
        if !cands.is_empty() && !brief.portfolio.eth_balance.is_zero() {
            let k = t.top_k.min(cands.len()).max(1);
            let (score, row) = cands[rng.random_range(0..k)];
            let f = t.spend[ts].min(buy_fraction_cap(brief, &row.token));
            return ToolCall::buy(&row.token, f, vec![ReasonTag::Momentum]).with_note(format!("{} score {:+.2}, size level {}", row.symbol, score, ts + 1));
        }
    }
    let tag = if reap_held {
        ReasonTag::ReapHold
    } else if cooled && acting {
        ReasonTag::Cooldown
    } else if best_move < round_trip {
        ReasonTag::FeeCost
    } else {
        ReasonTag::Momentum
    };
    ToolCall::observe(tag)
}

/// Fresh-signal gate: a same-token buy repeating a recent buy needs a
/// five-minute move of its own.
fn repeats_without_evidence(brief: &StructuredBrief, t: &ReferenceTables, row: &TokenStats) -> bool {
    let Some(at) = last_settled(brief, &row.token, ActionType::Buy) else { return false };
    if brief.now - at >= t.fresh_signal_window {
        return false;
    }
    row.pct_change.m5.is_none_or(|m| m.abs() < t.fresh_signal_move_pct)
}

pub fn reference_decide(brief: &StructuredBrief, tables: &ReferenceTables, rng: &mut ChaCha8Rng) -> ToolCall {
    directive_step(brief, tables).unwrap_or_else(|| slider_step(brief, tables, rng, None))
}

#[derive(Debug, Clone, Default)]
pub struct ReferencePolicy {
    pub tables: ReferenceTables,
}

impl Policy for ReferencePolicy {
    fn name(&self) -> String {
        "reference".into()
    }

    fn respond(&self, ctx: DecisionContext<'_>, rng: &mut ChaCha8Rng) -> String {
        format_tool_call(&reference_decide(ctx.brief, &self.tables, rng))
    }
}

/// Per-token last settled buy and sell ticks, for cooldown audits.
pub fn cooldown_violation(last: &BTreeMap<TokenId, (Option<Tick>, Option<Tick>)>, t: &ReferenceTables, token: &TokenId, side: ActionType, now: Tick) -> bool {
    let Some((buy, sell)) = last.get(token) else { return false };
    match side {
        ActionType::Buy => sell.is_some_and(|s| now - s < t.sell_rebuy_cooldown) || buy.is_some_and(|b| now - b < t.buy_buy_cooldown),
        ActionType::Sell => sell.is_some_and(|s| now - s < t.sell_sell_cooldown),
        ActionType::Observe => false,
    }
}
