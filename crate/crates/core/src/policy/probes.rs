//! Deliberately misbehaving policies that exercise the parser, guard and
//! analytics.

use rand::seq::IndexedRandom;
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use super::reference::{buy_fraction_cap, slider_step, ReferenceTables};
use super::{format_tool_call, DecisionContext, Policy, ReasonTag, ToolCall};
use crate::brief::StructuredBrief;
use crate::market::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    /// Trades every `k` ticks after activation regardless of the market.
    CadenceTrader { k: u64 },
    /// Sells (or buys when flat) citing a rule that appears nowhere.
    RuleFabricator,
    /// Always observes, citing fees.
    FeeParalyzed,
    /// Buys with the whole balance, ignoring the max-trade cap.
    Overspender,
    /// Emits free text instead of an action object.
    SchemaBreaker,
    /// Reads the pace floor off the rendered text and anchors on it.
    NumberAnchored,
    /// Requests zero-sized buys.
    ZeroAmount,
    /// Random mixture of valid, invalid and malformed output.
    Chaos,
}

fn top_token(brief: &StructuredBrief) -> Option<&TokenId> {
    brief
        .market
        .iter()
        .max_by(|a, b| {
            let ma = a.pct_change.h1.unwrap_or(0.0);
            let mb = b.pct_change.h1.unwrap_or(0.0);
            ma.total_cmp(&mb).then_with(|| b.token.cmp(&a.token))
        })
        .map(|r| &r.token)
}

/// Percentage floor from a line like "observe on at least 87.1% of polls".
pub fn pace_floor(text: &str) -> Option<f64> {
    let at = text.find("observe on at least ")?;
    let rest = &text[at + "observe on at least ".len()..];
    let end = rest.find('%')?;
    rest[..end].trim().parse().ok()
}

/// Trade probability a floor-anchored agent lands on. Small gaps are read
/// literally; once the gap passes a salience threshold the agent hedges
/// and trades half as often, producing the inversion at the top level.
pub fn anchored_probability(floor_pct: f64) -> f64 {
    let gap = (100.0 - floor_pct).max(0.0);
    if gap <= 13.0 {
        gap / 100.0
    } else {
        gap / 200.0
    }
}

const JUNK: [&str; 6] = [
    "",
    "I think we should wait and see.",
    "{\"action\":\"buy\"",
    "{\"action\":\"teleport\",\"token\":\"X\"}",
    "{\"action\":\"observe\"}{\"action\":\"buy\",\"token\":\"X\",\"fraction\":0.1}",
    "[1,2,3]",
];

impl Probe {
    pub fn decide_raw(&self, ctx: DecisionContext<'_>, rng: &mut ChaCha8Rng) -> String {
        let brief = ctx.brief;
        let call = match self {
            Probe::CadenceTrader { k } => {
                let since = brief.now.saturating_sub(brief.portfolio.activated_at);
                if since % k != 0 {
                    ToolCall::observe(ReasonTag::Cadence).with_note(format!("{} ticks since the last slot", since % k))
                } else if let Some(pos) = brief.portfolio.positions.first() {
                    ToolCall::sell(&pos.token, 1.0, vec![ReasonTag::Cadence]).with_note(format!("last trade was {k} ticks ago"))
                } else if let Some(token) = top_token(brief) {
                    let f = 0.05f64.min(buy_fraction_cap(brief, token));
                    ToolCall::buy(token, f, vec![ReasonTag::Cadence]).with_note(format!("last trade was {k} ticks ago"))
                } else {
                    ToolCall::observe(ReasonTag::Cadence)
                }
            }
            Probe::RuleFabricator => match brief.portfolio.positions.first() {
                Some(pos) => ToolCall::sell(&pos.token, 1.0, vec![ReasonTag::FabricatedRule]).with_note("Rule A: exit any position after three polls"),
                None => match top_token(brief) {
                    Some(token) => ToolCall::buy(token, 0.1f64.min(buy_fraction_cap(brief, token)), vec![ReasonTag::FabricatedRule])
                        .with_note("Rule B: always hold one position"),
                    None => ToolCall::observe(ReasonTag::FabricatedRule),
                },
            },
            Probe::FeeParalyzed => ToolCall::observe(ReasonTag::FeeCost).with_note("fees exceed any expected move"),
            Probe::Overspender => match top_token(brief) {
                Some(token) => ToolCall::buy(token, 1.0, vec![ReasonTag::Momentum]),
                None => ToolCall::observe(ReasonTag::Momentum),
            },
            Probe::SchemaBreaker => {
                let sym = brief.market.first().map_or("FEET", |r| r.symbol.as_str());
                return format!("buy lots of {sym}!!!");
            }
            Probe::NumberAnchored => {
                let tables = ReferenceTables::default();
                match pace_floor(&ctx.rendered.text) {
                    Some(floor) => {
                        let u: f64 = rng.random();
                        slider_step(brief, &tables, rng, Some(u < anchored_probability(floor)))
                    }
                    None => slider_step(brief, &tables, rng, None),
                }
            }
            Probe::ZeroAmount => match top_token(brief) {
                Some(token) => ToolCall::buy(token, 0.0, vec![ReasonTag::Momentum]),
                None => ToolCall::observe(ReasonTag::Momentum),
            },
            Probe::Chaos => return chaos(brief, rng),
        };
        format_tool_call(&call)
    }
}

fn chaos(brief: &StructuredBrief, rng: &mut ChaCha8Rng) -> String {
    let market: Vec<TokenId> = brief.market.iter().map(|r| r.token.clone()).collect();
    let held: Vec<TokenId> = brief.portfolio.positions.iter().map(|p| p.token.clone()).collect();
    chaos_response(&market, &held, rng)
}

/// One raw chaos response given the listed tokens and the vault's holdings.
pub fn chaos_response(market: &[TokenId], held: &[TokenId], rng: &mut ChaCha8Rng) -> String {
    let mut tokens = market.to_vec();
    tokens.push(TokenId::new("GHOST"));
    let token = tokens.choose(rng).cloned().expect("non-empty");
    let fraction = match rng.random_range(0..6) {
        0 => 0.0,
        1 => -rng.random::<f64>(),
        2 => 1.0 + rng.random::<f64>(),
        3 => 1.0,
        _ => rng.random::<f64>().max(1e-6),
    };
    let call = match rng.random_range(0..10) {
        0 => return (*JUNK.choose(rng).expect("non-empty")).to_string(),
        1 => ToolCall::observe(*ReasonTag::ALL.choose(rng).expect("non-empty")),
        2..=5 => ToolCall::buy(&token, fraction, vec![ReasonTag::Momentum]),
        _ => {
            let held = held.choose(rng).cloned();
            let token = if rng.random_bool(0.7) { held.unwrap_or(token) } else { token };
            ToolCall::sell(&token, fraction, vec![ReasonTag::StopLoss])
        }
    };
    format_tool_call(&call)
}

impl Policy for Probe {
    fn name(&self) -> String {
        match self {
            Probe::CadenceTrader { k } => format!("cadence_trader(k={k})"),
            Probe::RuleFabricator => "rule_fabricator".into(),
            Probe::FeeParalyzed => "fee_paralyzed".into(),
            Probe::Overspender => "overspender".into(),
            Probe::SchemaBreaker => "schema_breaker".into(),
            Probe::NumberAnchored => "number_anchored".into(),
            Probe::ZeroAmount => "zero_amount".into(),
            Probe::Chaos => "chaos".into(),
        }
    }

    fn respond(&self, ctx: DecisionContext<'_>, rng: &mut ChaCha8Rng) -> String {
        self.decide_raw(ctx, rng)
    }
}
