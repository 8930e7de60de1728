//! Versioned mandate log: five sliders plus prioritised, expiring
//! strategies, read before every invocation.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::directive::{classify_directive, is_permanent_hold, is_vague_mandate, DirectiveClass, Restriction};
use crate::units::Eth;
use crate::Tick;

pub const SLIDER_MIN: u8 = 1;
pub const SLIDER_MAX: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliderConfig {
    pub trading_activity: u8,
    pub asset_risk_preference: u8,
    pub trade_size: u8,
    pub holding_style: u8,
    pub diversification: u8,
}

impl Default for SliderConfig {
    fn default() -> Self {
        SliderConfig { trading_activity: 3, asset_risk_preference: 3, trade_size: 3, holding_style: 3, diversification: 3 }
    }
}

/// The five sliders by name, for sweeps, predicates and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Slider {
    #[serde(rename = "TA")]
    TradingActivity,
    #[serde(rename = "ARP")]
    AssetRiskPreference,
    #[serde(rename = "TS")]
    TradeSize,
    #[serde(rename = "HS")]
    HoldingStyle,
    #[serde(rename = "DIV")]
    Diversification,
}

impl Slider {
    pub const ALL: [Slider; 5] = [Slider::TradingActivity, Slider::AssetRiskPreference, Slider::TradeSize, Slider::HoldingStyle, Slider::Diversification];

    pub fn short(self) -> &'static str {
        match self {
            Slider::TradingActivity => "TA",
            Slider::AssetRiskPreference => "ARP",
            Slider::TradeSize => "TS",
            Slider::HoldingStyle => "HS",
            Slider::Diversification => "DIV",
        }
    }

    /// Accepts the short code or the snake_case field name.
    pub fn parse(s: &str) -> Option<Slider> {
        let s = s.trim();
        Slider::ALL.into_iter().find(|sl| sl.short().eq_ignore_ascii_case(s) || sl.field_name().eq_ignore_ascii_case(s))
    }

    pub fn field_name(self) -> &'static str {
        match self {
            Slider::TradingActivity => "trading_activity",
            Slider::AssetRiskPreference => "asset_risk_preference",
            Slider::TradeSize => "trade_size",
            Slider::HoldingStyle => "holding_style",
            Slider::Diversification => "diversification",
        }
    }
}

impl fmt::Display for Slider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl SliderConfig {
    pub fn get(&self, slider: Slider) -> u8 {
        match slider {
            Slider::TradingActivity => self.trading_activity,
            Slider::AssetRiskPreference => self.asset_risk_preference,
            Slider::TradeSize => self.trade_size,
            Slider::HoldingStyle => self.holding_style,
            Slider::Diversification => self.diversification,
        }
    }

    pub fn with(mut self, slider: Slider, value: u8) -> SliderConfig {
        match slider {
            Slider::TradingActivity => self.trading_activity = value,
            Slider::AssetRiskPreference => self.asset_risk_preference = value,
            Slider::TradeSize => self.trade_size = value,
            Slider::HoldingStyle => self.holding_style = value,
            Slider::Diversification => self.diversification = value,
        }
        self
    }

    pub fn validate(&self) -> Result<(), MandateError> {
        for s in Slider::ALL {
            let v = self.get(s);
            if !(SLIDER_MIN..=SLIDER_MAX).contains(&v) {
                return Err(MandateError::SliderOutOfRange { slider: s, value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Priority {
    High,
    Medium,
    Low,
}

impl fmt::Display for Priority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Priority::High => "HIGH",
            Priority::Medium => "MEDIUM",
            Priority::Low => "LOW",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Strategy {
    pub label: String,
    pub text: String,
    pub priority: Priority,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expiry: Option<Tick>,
    #[serde(default)]
    pub created_at: Tick,
}

impl Strategy {
    pub fn new(label: &str, text: &str, priority: Priority) -> Self {
        Strategy { label: label.to_string(), text: text.to_string(), priority, expiry: None, created_at: 0 }
    }

    pub fn is_active(&self, now: Tick) -> bool {
        self.expiry.is_none_or(|e| e >= now)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfigCommit {
    pub version: u64,
    pub committed_at: Tick,
    pub sliders: SliderConfig,
    pub strategies: Vec<Strategy>,
}

impl ConfigCommit {
    /// Content hash over the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("commit serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MandateBounds {
    pub max_strategies: usize,
    /// In characters, not bytes.
    pub max_text_chars: usize,
}

impl Default for MandateBounds {
    fn default() -> Self {
        MandateBounds { max_strategies: 10, max_text_chars: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MandateError {
    #[error("slider {slider} = {value} outside 1..=5")]
    SliderOutOfRange { slider: Slider, value: u8 },
    #[error("{count} strategies exceeds the maximum of {max}")]
    TooManyStrategies { count: usize, max: usize },
    #[error("strategy {label} is {chars} characters, maximum {max}")]
    StrategyTextTooLong { label: String, chars: usize, max: usize },
    #[error("strategy {label} has empty text")]
    EmptyStrategyText { label: String },
    #[error("strategy label {0} is used twice")]
    DuplicateLabel(String),
    #[error("commit at tick {at} precedes the latest commit at tick {latest}")]
    OutOfOrderCommit { at: Tick, latest: Tick },
    #[error("no configuration committed at or before tick {0}")]
    NoConfigYet(Tick),
}

/// Append-only commit log for one vault.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MandateLog {
    commits: Vec<ConfigCommit>,
    bounds: MandateBounds,
}

impl MandateLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_bounds(bounds: MandateBounds) -> Self {
        MandateLog { commits: Vec::new(), bounds }
    }

    pub fn commits(&self) -> &[ConfigCommit] {
        &self.commits
    }

    pub fn latest(&self) -> Option<&ConfigCommit> {
        self.commits.last()
    }

    pub fn version(&self, version: u64) -> Option<&ConfigCommit> {
        self.commits.iter().find(|c| c.version == version)
    }

    /// Validates and appends a commit, returning its version.
    pub fn commit(&mut self, sliders: SliderConfig, strategies: Vec<Strategy>, at: Tick) -> Result<u64, MandateError> {
        sliders.validate()?;
        if strategies.len() > self.bounds.max_strategies {
            return Err(MandateError::TooManyStrategies { count: strategies.len(), max: self.bounds.max_strategies });
        }
        for (i, s) in strategies.iter().enumerate() {
            if s.text.trim().is_empty() {
                return Err(MandateError::EmptyStrategyText { label: s.label.clone() });
            }
            let chars = s.text.chars().count();
            if chars > self.bounds.max_text_chars {
                return Err(MandateError::StrategyTextTooLong { label: s.label.clone(), chars, max: self.bounds.max_text_chars });
            }
            if strategies[..i].iter().any(|o| o.label == s.label) {
                return Err(MandateError::DuplicateLabel(s.label.clone()));
            }
        }
        if let Some(last) = self.commits.last() {
            if at < last.committed_at {
                return Err(MandateError::OutOfOrderCommit { at, latest: last.committed_at });
            }
        }
        let version = self.commits.last().map_or(1, |c| c.version + 1);
        self.commits.push(ConfigCommit { version, committed_at: at, sliders, strategies });
        Ok(version)
    }

    /// The commit with the greatest `committed_at <= at`; same-tick
    /// commits are visible.
    pub fn read_latest(&self, at: Tick) -> Result<&ConfigCommit, MandateError> {
        let idx = self.commits.partition_point(|c| c.committed_at <= at);
        if idx == 0 {
            Err(MandateError::NoConfigYet(at))
        } else {
            Ok(&self.commits[idx - 1])
        }
    }
}

/// Unexpired strategies in commit order.
pub fn active_strategies(commit: &ConfigCommit, now: Tick) -> Vec<&Strategy> {
    commit.strategies.iter().filter(|s| s.is_active(now)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InconsistencyKind {
    HoldVsHoldingStyle,
    BuyOnlyWithoutFunding,
    VagueMandate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inconsistency {
    pub kind: InconsistencyKind,
    pub label: String,
    pub message: String,
}

/// Flags mandate combinations that cannot both be honoured. Never blocks
/// a commit. `funding` is the vault's unallocated ETH, when known.
pub fn lint_mandate(commit: &ConfigCommit, funding: Option<Eth>) -> Vec<Inconsistency> {
    let mut out = Vec::new();
    for s in &commit.strategies {
        if is_permanent_hold(&s.text) && commit.sliders.holding_style <= 2 {
            out.push(Inconsistency {
                kind: InconsistencyKind::HoldVsHoldingStyle,
                label: s.label.clone(),
                message: format!("{} asks for a permanent hold but Holding Style is {} (short holds)", s.label, commit.sliders.holding_style),
            });
        }
        let buy_only = matches!(classify_directive(&s.text), DirectiveClass::Restriction { rule: Restriction::BuyOnly });
        if buy_only && commit.sliders.trade_size == 5 && funding.is_some_and(|f| f.is_zero()) {
            out.push(Inconsistency {
                kind: InconsistencyKind::BuyOnlyWithoutFunding,
                label: s.label.clone(),
                message: format!("{} is buy-only at Trade Size 5 but the vault holds no ETH", s.label),
            });
        }
        if is_vague_mandate(&s.text) {
            out.push(Inconsistency {
                kind: InconsistencyKind::VagueMandate,
                label: s.label.clone(),
                message: format!("{} names an outcome without a token, exit condition or bound", s.label),
            });
        }
    }
    out
}
