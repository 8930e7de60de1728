//! Keyword grammar for classifying strategy text into directive kinds.
//!
//! The grammar is deliberately small. It recognises imperative trades,
//! `if`/`when` triggers over PnL, price change or absolute price, scope
//! restrictions and hold rules; anything else is `Unclassified`, which the
//! reference policy treats as monitor-and-observe.

use serde::{Deserialize, Serialize};

/// Bumped whenever classification results can change for some input.
pub const GRAMMAR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Buy,
    Sell,
    /// Sell everything in scope.
    Liquidate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub kind: ActionKind,
    /// Upper-case symbol named in the text, if any.
    pub token: Option<String>,
    /// Fraction in `(0, 1]` when stated ("50%", "half", "all").
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cmp {
    Ge,
    Le,
}

impl Cmp {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Cmp::Ge => lhs >= rhs,
            Cmp::Le => lhs <= rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "metric")]
pub enum Condition {
    /// Unrealized PnL of the position, in percent.
    Pnl { cmp: Cmp, pct: f64 },
    /// One-hour price change of the token, in percent.
    PriceChange { cmp: Cmp, pct: f64 },
    /// Spot price in ETH per token.
    Price { cmp: Cmp, eth: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule", content = "tokens")]
pub enum Restriction {
    OnlyTokens(Vec<String>),
    AvoidTokens(Vec<String>),
    /// Every token launched at genesis, without narrowing.
    AvoidGenesis,
    AvoidNewLaunches,
    StayFlat,
    BuyOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "class")]
pub enum DirectiveClass {
    ImmediateAction {
        action: ActionSpec,
    },
    TriggeredAction {
        condition: Condition,
        token: Option<String>,
        action: ActionSpec,
    },
    Restriction {
        rule: Restriction,
    },
    /// Empty token list means every held token.
    HoldRule {
        tokens: Vec<String>,
    },
    Unclassified,
}

impl DirectiveClass {
    pub fn label(&self) -> &'static str {
        match self {
            DirectiveClass::ImmediateAction { .. } => "Immediate-action",
            DirectiveClass::TriggeredAction { .. } => "Triggered-action",
            DirectiveClass::Restriction { .. } => "Restriction",
            DirectiveClass::HoldRule { .. } => "Hold rule",
            DirectiveClass::Unclassified => "Unclassified",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectiveStatus {
    Pending,
    Triggered,
    Completed,
    Blocked,
    ActiveCompliant,
    Violated,
}

impl DirectiveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            DirectiveStatus::Pending => "pending",
            DirectiveStatus::Triggered => "triggered",
            DirectiveStatus::Completed => "completed",
            DirectiveStatus::Blocked => "blocked",
            DirectiveStatus::ActiveCompliant => "active_compliant",
            DirectiveStatus::Violated => "violated",
        }
    }
}

const STOP_SYMBOLS: &[&str] = &["ETH", "WETH", "PNL", "HIGH", "LOW", "MEDIUM", "ALL", "NOW", "ASAP", "USD", "IF", "I", "A", "TA", "TS", "HS", "ARP", "DIV"];

const VAGUE_PHRASES: &[&str] =
    &["outperform", "pick winners", "pick the winners", "beat the market", "maximize profit", "maximise profit", "make money", "make me money"];

/// Upper-case ticker-like words (two or more characters) in order of
/// appearance, without duplicates.
pub fn symbols_in(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for word in text.split(|c: char| !(c.is_ascii_alphanumeric() || c == '$')) {
        let w = word.trim_start_matches('$');
        if w.len() < 2 || !w.chars().any(|c| c.is_ascii_uppercase()) {
            continue;
        }
        if !w.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit()) {
            continue;
        }
        if STOP_SYMBOLS.contains(&w) || out.iter().any(|s| s == w) {
            continue;
        }
        out.push(w.to_string());
    }
    out
}

fn words(lower: &str) -> Vec<&str> {
    lower
        .split(|c: char| c.is_whitespace() || c == ',' || c == ';' || c == ':' || c == '!' || c == '?')
        .map(|w| w.trim_matches(|c: char| c == '.' || c == '(' || c == ')' || c == '"' || c == '\''))
        .filter(|w| !w.is_empty())
        .collect()
}

fn has_phrase(lower: &str, phrase: &str) -> bool {
    let padded = format!(" {} ", words(lower).join(" "));
    padded.contains(&format!(" {phrase} "))
}

fn parse_number(w: &str) -> Option<f64> {
    let t = w.trim_start_matches(['+', '$']).trim_end_matches("eth");
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn percent(w: &str) -> Option<f64> {
    w.strip_suffix('%').and_then(parse_number)
}

/// First percentage in the word list, with the index it was found at.
fn first_percent(ws: &[&str]) -> Option<(usize, f64)> {
    ws.iter().enumerate().find_map(|(i, w)| {
        if let Some(v) = percent(w) {
            return Some((i, v));
        }
        // "20 %" or "20 percent"
        if let (Some(v), Some(next)) = (parse_number(w), ws.get(i + 1)) {
            if *next == "%" || *next == "percent" || *next == "pct" {
                return Some((i, v));
            }
        }
        None
    })
}

fn action_verb(w: &str) -> Option<ActionKind> {
    match w {
        "buy" | "ape" | "accumulate" => Some(ActionKind::Buy),
        "sell" | "dump" | "exit" | "trim" => Some(ActionKind::Sell),
        "liquidate" => Some(ActionKind::Liquidate),
        _ => None,
    }
}

fn fraction_in(ws: &[&str]) -> Option<f64> {
    if let Some((_, v)) = first_percent(ws) {
        if v > 0.0 && v <= 100.0 {
            return Some(v / 100.0);
        }
    }
    if ws.iter().any(|w| *w == "half") {
        return Some(0.5);
    }
    if ws.iter().any(|w| matches!(*w, "all" | "everything" | "entire" | "full")) {
        return Some(1.0);
    }
    None
}

fn parse_action(original: &str, lower_words: &[&str]) -> Option<ActionSpec> {
    let idx = lower_words.iter().position(|w| action_verb(w).is_some())?;
    let kind = action_verb(lower_words[idx])?;
    Some(ActionSpec { kind, token: symbols_in(original).into_iter().next(), fraction: fraction_in(&lower_words[idx..]) })
}

fn parse_condition(ws: &[&str]) -> Option<Condition> {
    let any = |set: &[&str]| ws.iter().any(|w| set.contains(w));
    let downish = any(&["drops", "drop", "falls", "fall", "dumps", "down", "below", "under", "loses", "loss", "declines"]);
    let is_pnl = any(&["pnl", "p&l", "profit", "loss", "gain", "gains", "return"]);
    if is_pnl {
        let (_, v) = first_percent(ws)?;
        let loss_word = any(&["loss", "down", "drops", "falls", "below", "under"]);
        return Some(if loss_word || v < 0.0 { Condition::Pnl { cmp: Cmp::Le, pct: -v.abs() } } else { Condition::Pnl { cmp: Cmp::Ge, pct: v } });
    }
    if any(&["price", "it", "token"]) || any(&["drops", "pumps", "rises", "falls"]) {
        if let Some((_, v)) = first_percent(ws) {
            return Some(if downish || v < 0.0 {
                Condition::PriceChange { cmp: Cmp::Le, pct: -v.abs() }
            } else {
                Condition::PriceChange { cmp: Cmp::Ge, pct: v }
            });
        }
        // absolute price comparator: "price above 0.00002"
        let pos = ws.iter().position(|w| matches!(*w, "above" | "over" | "below" | "under" | ">=" | "<=" | ">" | "<"))?;
        let value = ws[pos + 1..].iter().find_map(|w| parse_number(w))?;
        let cmp = if matches!(ws[pos], "above" | "over" | ">=" | ">") { Cmp::Ge } else { Cmp::Le };
        return Some(Condition::Price { cmp, eth: value });
    }
    None
}

/// Classifies one strategy text. Total and deterministic.
pub fn classify_directive(text: &str) -> DirectiveClass {
    let lower = text.to_lowercase();
    let ws = words(&lower);
    if ws.is_empty() {
        return DirectiveClass::Unclassified;
    }
    let symbols = symbols_in(text);

    // Triggered: a conditional clause plus a trade verb.
    if let Some(cond_at) = ws.iter().position(|w| matches!(*w, "if" | "when" | "once" | "whenever")) {
        let verb_at = ws.iter().position(|w| action_verb(w).is_some());
        let Some(verb_at) = verb_at else {
            return DirectiveClass::Unclassified;
        };
        let (cond_words, action_words) =
            if verb_at > cond_at { (&ws[cond_at + 1..verb_at], &ws[verb_at..]) } else { (&ws[cond_at + 1..], &ws[verb_at..cond_at]) };
        let Some(condition) = parse_condition(cond_words) else {
            return DirectiveClass::Unclassified;
        };
        let kind = action_verb(ws[verb_at]).expect("verb");
        let action = ActionSpec { kind, token: symbols.first().cloned(), fraction: fraction_in(action_words) };
        return DirectiveClass::TriggeredAction { condition, token: symbols.first().cloned(), action };
    }

    // Hold rules.
    if has_phrase(&lower, "never sell")
        || has_phrase(&lower, "don't sell")
        || has_phrase(&lower, "do not sell")
        || has_phrase(&lower, "diamond hands")
        || ws[0] == "hold"
        || (ws.contains(&"hold") && ws.contains(&"forever"))
    {
        return DirectiveClass::HoldRule { tokens: symbols };
    }

    // Restrictions.
    if has_phrase(&lower, "stay flat") || has_phrase(&lower, "stay in eth") || has_phrase(&lower, "no trading") {
        return DirectiveClass::Restriction { rule: Restriction::StayFlat };
    }
    let avoids = ws.iter().any(|w| matches!(*w, "avoid" | "skip" | "exclude"))
        || has_phrase(&lower, "don't buy")
        || has_phrase(&lower, "do not buy")
        || has_phrase(&lower, "never buy");
    if avoids {
        if ws.contains(&"genesis") {
            return DirectiveClass::Restriction { rule: Restriction::AvoidGenesis };
        }
        if has_phrase(&lower, "new launches") || has_phrase(&lower, "new tokens") || has_phrase(&lower, "new coins") {
            return DirectiveClass::Restriction { rule: Restriction::AvoidNewLaunches };
        }
        if !symbols.is_empty() {
            return DirectiveClass::Restriction { rule: Restriction::AvoidTokens(symbols) };
        }
        return DirectiveClass::Unclassified;
    }
    if ws.contains(&"only") {
        if has_phrase(&lower, "buy only") || has_phrase(&lower, "only buy") && symbols.is_empty() || has_phrase(&lower, "buy-only") {
            return DirectiveClass::Restriction { rule: Restriction::BuyOnly };
        }
        if !symbols.is_empty() {
            return DirectiveClass::Restriction { rule: Restriction::OnlyTokens(symbols) };
        }
    }
    if has_phrase(&lower, "buy-only") {
        return DirectiveClass::Restriction { rule: Restriction::BuyOnly };
    }

    // Immediate actions: imperative verb, either leading or with a now-form.
    let now_form = ws.iter().any(|w| matches!(*w, "now" | "immediately" | "asap")) || has_phrase(&lower, "right away");
    let leading = action_verb(ws[0]).is_some();
    if now_form || leading {
        if let Some(action) = parse_action(text, &ws) {
            return DirectiveClass::ImmediateAction { action };
        }
    }
    DirectiveClass::Unclassified
}

/// Vague performance asks: an outcome phrase with no token, exit or bound.
pub fn is_vague_mandate(text: &str) -> bool {
    let lower = text.to_lowercase();
    if !VAGUE_PHRASES.iter().any(|p| lower.contains(p)) {
        return false;
    }
    let ws = words(&lower);
    let has_token = !symbols_in(text).is_empty();
    let has_exit = ws.iter().any(|w| matches!(*w, "if" | "when" | "stop" | "stop-loss" | "exit" | "target" | "sell"));
    let has_bound = first_percent(&ws).is_some() || ws.iter().any(|w| parse_number(w).is_some());
    !(has_token || has_exit || has_bound)
}

/// Hold-forever phrasing regardless of token scope.
pub fn is_permanent_hold(text: &str) -> bool {
    matches!(classify_directive(text), DirectiveClass::HoldRule { .. })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn immediate_sell_half() {
        let c = classify_directive("sell 50% of FEET now");
        assert_eq!(c, DirectiveClass::ImmediateAction { action: ActionSpec { kind: ActionKind::Sell, token: Some("FEET".into()), fraction: Some(0.5) } });
        assert!(matches!(
            classify_directive("liquidate"),
            DirectiveClass::ImmediateAction { action: ActionSpec { kind: ActionKind::Liquidate, token: None, .. } }
        ));
        assert!(matches!(classify_directive("buy POOPCOIN immediately"), DirectiveClass::ImmediateAction { .. }));
    }

    #[test]
    fn triggered_pnl() {
        let c = classify_directive("if PnL reaches 20% sell POOPCOIN");
        match c {
            DirectiveClass::TriggeredAction { condition, token, action } => {
                assert_eq!(condition, Condition::Pnl { cmp: Cmp::Ge, pct: 20.0 });
                assert_eq!(token.as_deref(), Some("POOPCOIN"));
                assert_eq!(action.kind, ActionKind::Sell);
                assert_eq!(action.fraction, None);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            classify_directive("when price drops 10% buy FEET"),
            DirectiveClass::TriggeredAction { condition: Condition::PriceChange { cmp: Cmp::Le, .. }, .. }
        ));
        assert!(matches!(
            classify_directive("sell half of FEET if price above 0.00002"),
            DirectiveClass::TriggeredAction { condition: Condition::Price { cmp: Cmp::Ge, .. }, action: ActionSpec { fraction: Some(f), .. }, .. } if f == 0.5
        ));
        assert!(matches!(
            classify_directive("if loss reaches 15% sell FEET"),
            DirectiveClass::TriggeredAction { condition: Condition::Pnl { cmp: Cmp::Le, pct }, .. } if pct == -15.0
        ));
    }

    #[test]
    fn restrictions_are_literal() {
        assert_eq!(classify_directive("Avoid genesis tokens"), DirectiveClass::Restriction { rule: Restriction::AvoidGenesis });
        assert_eq!(classify_directive("only buy FEET"), DirectiveClass::Restriction { rule: Restriction::OnlyTokens(vec!["FEET".into()]) });
        assert_eq!(classify_directive("stay flat"), DirectiveClass::Restriction { rule: Restriction::StayFlat });
        assert_eq!(classify_directive("buy only, no selling"), DirectiveClass::Restriction { rule: Restriction::BuyOnly });
        assert_eq!(classify_directive("avoid DOG and CAT"), DirectiveClass::Restriction { rule: Restriction::AvoidTokens(vec!["DOG".into(), "CAT".into()]) });
    }

    #[test]
    fn hold_rules() {
        assert_eq!(classify_directive("hold FEET forever"), DirectiveClass::HoldRule { tokens: vec!["FEET".into()] });
        assert_eq!(classify_directive("never sell"), DirectiveClass::HoldRule { tokens: vec![] });
    }

    #[test]
    fn unrecognised_is_unclassified() {
        assert_eq!(classify_directive("vibes only, be smart"), DirectiveClass::Unclassified);
        assert_eq!(classify_directive("if the moon is full sell FEET"), DirectiveClass::Unclassified);
        assert_eq!(classify_directive(""), DirectiveClass::Unclassified);
        assert_eq!(classify_directive("保持冷静"), DirectiveClass::Unclassified);
    }

    #[test]
    fn vague_detection() {
        assert!(is_vague_mandate("outperform the market"));
        assert!(!is_vague_mandate("outperform by selling FEET at 20%"));
        assert!(!is_vague_mandate("hold FEET"));
    }

    #[test]
    fn symbol_extraction() {
        assert_eq!(symbols_in("Buy $FEET and POOPCOIN with ETH now"), vec!["FEET", "POOPCOIN"]);
        assert!(symbols_in("buy feet").is_empty());
    }
}
