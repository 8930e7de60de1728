//! Decision-makers standing in for the model: the reference rule policy,
//! misbehaving probes, and an adapter for external text agents.
//!
//! Every policy answers with raw text; the engine parses it with
//! [`parse_tool_call`] so built-in and external agents share one path.

use std::fmt;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brief::{RenderedBrief, StructuredBrief};
use crate::market::TokenId;

pub mod adapter;
pub mod probes;
pub mod reference;
mod wire;

pub use adapter::{ExternalAgent, ExternalConfig};
pub use probes::Probe;
pub use reference::{reference_decide, ReferencePolicy, ReferenceTables};
pub use wire::{format_tool_call, parse_tool_call, ParseCause, ParseError};

/// Closed vocabulary of decision reasons; analytics keys on these names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonTag {
    FeeCost,
    Momentum,
    StopLoss,
    ProfitTarget,
    ThesisBroken,
    StrategyExecution,
    Cooldown,
    RestrictionCompliant,
    HoldRule,
    ReapHold,
    /// Probe only.
    Cadence,
    /// Probe only.
    FabricatedRule,
    /// Recorded by the adapter when an external agent does not answer.
    Timeout,
}

impl ReasonTag {
    pub const ALL: [ReasonTag; 13] = [
        ReasonTag::FeeCost,
        ReasonTag::Momentum,
        ReasonTag::StopLoss,
        ReasonTag::ProfitTarget,
        ReasonTag::ThesisBroken,
        ReasonTag::StrategyExecution,
        ReasonTag::Cooldown,
        ReasonTag::RestrictionCompliant,
        ReasonTag::HoldRule,
        ReasonTag::ReapHold,
        ReasonTag::Cadence,
        ReasonTag::FabricatedRule,
        ReasonTag::Timeout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReasonTag::FeeCost => "fee_cost",
            ReasonTag::Momentum => "momentum",
            ReasonTag::StopLoss => "stop_loss",
            ReasonTag::ProfitTarget => "profit_target",
            ReasonTag::ThesisBroken => "thesis_broken",
            ReasonTag::StrategyExecution => "strategy_execution",
            ReasonTag::Cooldown => "cooldown",
            ReasonTag::RestrictionCompliant => "restriction_compliant",
            ReasonTag::HoldRule => "hold_rule",
            ReasonTag::ReapHold => "reap_hold",
            ReasonTag::Cadence => "cadence",
            ReasonTag::FabricatedRule => "fabricated_rule",
            ReasonTag::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<ReasonTag> {
        ReasonTag::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Tags only probes may emit.
    pub fn is_probe_only(self) -> bool {
        matches!(self, ReasonTag::Cadence | ReasonTag::FabricatedRule)
    }
}

impl fmt::Display for ReasonTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The single action of one invocation.
///
/// Fractions are carried as parsed; range checks belong to the guard so
/// that out-of-range requests show up as rejections, not parse errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "action")]
pub enum ToolCall {
    Buy {
        token: TokenId,
        /// Share of available ETH to spend.
        fraction: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        strategy: Option<String>,
        #[serde(default)]
        reasons: Vec<ReasonTag>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    Sell {
        token: TokenId,
        /// Share of the position to sell.
        fraction: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        strategy: Option<String>,
        #[serde(default)]
        reasons: Vec<ReasonTag>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
    Observe {
        #[serde(default)]
        reasons: Vec<ReasonTag>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        note: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Buy,
    Sell,
    Observe,
}

impl ToolCall {
    pub fn buy(token: &TokenId, fraction: f64, reasons: Vec<ReasonTag>) -> Self {
        ToolCall::Buy { token: token.clone(), fraction, strategy: None, reasons, note: None }
    }

    pub fn sell(token: &TokenId, fraction: f64, reasons: Vec<ReasonTag>) -> Self {
        ToolCall::Sell { token: token.clone(), fraction, strategy: None, reasons, note: None }
    }

    pub fn observe(reason: ReasonTag) -> Self {
        ToolCall::Observe { reasons: vec![reason], note: None }
    }

    pub fn with_strategy(mut self, label: &str) -> Self {
        if let ToolCall::Buy { strategy, .. } | ToolCall::Sell { strategy, .. } = &mut self {
            *strategy = Some(label.to_string());
        }
        self
    }

    pub fn with_note(mut self, text: impl Into<String>) -> Self {
        match &mut self {
            ToolCall::Buy { note, .. } | ToolCall::Sell { note, .. } | ToolCall::Observe { note, .. } => *note = Some(text.into()),
        }
        self
    }

    pub fn action(&self) -> ActionType {
        match self {
            ToolCall::Buy { .. } => ActionType::Buy,
            ToolCall::Sell { .. } => ActionType::Sell,
            ToolCall::Observe { .. } => ActionType::Observe,
        }
    }

    pub fn token(&self) -> Option<&TokenId> {
        match self {
            ToolCall::Buy { token, .. } | ToolCall::Sell { token, .. } => Some(token),
            ToolCall::Observe { .. } => None,
        }
    }

    pub fn fraction(&self) -> Option<f64> {
        match self {
            ToolCall::Buy { fraction, .. } | ToolCall::Sell { fraction, .. } => Some(*fraction),
            ToolCall::Observe { .. } => None,
        }
    }

    pub fn strategy(&self) -> Option<&str> {
        match self {
            ToolCall::Buy { strategy, .. } | ToolCall::Sell { strategy, .. } => strategy.as_deref(),
            ToolCall::Observe { .. } => None,
        }
    }

    pub fn reasons(&self) -> &[ReasonTag] {
        match self {
            ToolCall::Buy { reasons, .. } | ToolCall::Sell { reasons, .. } | ToolCall::Observe { reasons, .. } => reasons,
        }
    }

    /// The first tag, which policies order by importance.
    pub fn dominant_reason(&self) -> Option<ReasonTag> {
        self.reasons().first().copied()
    }
}

/// What a policy sees: the typed brief and its rendered text.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub brief: &'a StructuredBrief,
    pub rendered: &'a RenderedBrief,
}

pub trait Policy: Send + Sync {
    fn name(&self) -> String;

    /// Raw response text for one invocation.
    fn respond(&self, ctx: DecisionContext<'_>, rng: &mut ChaCha8Rng) -> String;
}

/// Serializable policy selection for scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicyKind {
    Reference,
    CadenceTrader {
        k: u64,
    },
    RuleFabricator,
    FeeParalyzed,
    Overspender,
    SchemaBreaker,
    NumberAnchored,
    ZeroAmount,
    /// Uniformly random, frequently invalid calls for guard fuzzing.
    Chaos,
    External(ExternalConfig),
}

impl Default for PolicyKind {
    fn default() -> Self {
        PolicyKind::Reference
    }
}

impl PolicyKind {
    pub fn name(&self) -> String {
        match self {
            PolicyKind::Reference => "reference".into(),
            PolicyKind::CadenceTrader { k } => format!("cadence_trader(k={k})"),
            PolicyKind::RuleFabricator => "rule_fabricator".into(),
            PolicyKind::FeeParalyzed => "fee_paralyzed".into(),
            PolicyKind::Overspender => "overspender".into(),
            PolicyKind::SchemaBreaker => "schema_breaker".into(),
            PolicyKind::NumberAnchored => "number_anchored".into(),
            PolicyKind::ZeroAmount => "zero_amount".into(),
            PolicyKind::Chaos => "chaos".into(),
            PolicyKind::External(cfg) => format!("external({})", cfg.command),
        }
    }

    pub fn build(&self) -> Arc<dyn Policy> {
        match self {
            PolicyKind::Reference => Arc::new(ReferencePolicy::default()),
            PolicyKind::CadenceTrader { k } => Arc::new(Probe::CadenceTrader { k: (*k).max(1) }),
            PolicyKind::RuleFabricator => Arc::new(Probe::RuleFabricator),
            PolicyKind::FeeParalyzed => Arc::new(Probe::FeeParalyzed),
            PolicyKind::Overspender => Arc::new(Probe::Overspender),
            PolicyKind::SchemaBreaker => Arc::new(Probe::SchemaBreaker),
            PolicyKind::NumberAnchored => Arc::new(Probe::NumberAnchored),
            PolicyKind::ZeroAmount => Arc::new(Probe::ZeroAmount),
            PolicyKind::Chaos => Arc::new(Probe::Chaos),
            PolicyKind::External(cfg) => Arc::new(ExternalAgent::new(cfg.clone())),
        }
    }
}
