//! Scenario files: the experiment record for a run.
//!
//! TOML with a versioned header:
//!
//! ```toml
//! format = "vaultsim-scenario/1"
//! ticks = 288
//! seed = 7
//! template = "default"          # builtin name or a path relative to this file
//!
//! [engine]
//! settlement_failure_rate = 0.0
//! settlement_mode = "immediate" # or "delayed"
//!
//! [guard]
//! max_trade_bps = 10000
//!
//! [reap]
//! period = 288
//!
//! [[tokens]]
//! symbol = "PEPE"
//! eth_reserve = "20"
//! launch_at = 0
//!
//! [[vaults]]
//! count = 10
//! funding = "1"
//! policy = { kind = "reference" }
//! sliders = { trading_activity = 5 }
//!
//! [[events]]
//! at = 100
//! vault = 1
//! action = { kind = "pause" }
//! ```
//!
//! Amounts are decimal strings. Vault ids default to consecutive numbers
//! starting at 1; a group with `count = n` expands to n vaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::brief::{BriefTemplate, TemplateError};
use crate::engine::{EngineConfig, ScriptedAction, SettlementMode, TokenLaunch, VaultSpec, World};
use crate::guard::GuardConfig;
use crate::mandate::{MandateLog, Priority, Slider, SliderConfig, Strategy};
use crate::market::TOTAL_SUPPLY;
use crate::policy::PolicyKind;
use crate::reap::ReapSchedule;
use crate::trace::RunMeta;
use crate::units::{Eth, Tokens};
use crate::vault::{OwnerAction, VaultId};
use crate::Tick;

pub const SCENARIO_FORMAT: &str = "vaultsim-scenario/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format: String,
    #[serde(default)]
    pub name: String,
    pub ticks: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_template")]
    pub template: String,
    #[serde(default)]
    pub engine: EngineSection,
    #[serde(default)]
    pub guard: GuardConfig,
    #[serde(default)]
    pub reap: Option<ReapSpec>,
    pub tokens: Vec<TokenSpec>,
    pub vaults: Vec<VaultGroup>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    /// Original text, hashed into the manifest.
    #[serde(skip)]
    pub source: String,
    /// Directory relative template paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_template() -> String {
    "default".into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub settlement_failure_rate: f64,
    pub settlement_mode: SettlementMode,
    pub invocation_jitter: bool,
    pub shuffle: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReapSpec {
    pub period: Tick,
    /// First reap tick; defaults to one period in.
    pub first_at: Option<Tick>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSpec {
    pub symbol: String,
    pub eth_reserve: Eth,
    #[serde(default = "default_token_reserve")]
    pub token_reserve: Tokens,
    #[serde(default)]
    pub launch_at: Tick,
}

fn default_token_reserve() -> Tokens {
    TOTAL_SUPPLY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaultGroup {
    pub id: Option<u32>,
    #[serde(default = "one")]
    pub count: u32,
    pub owner: Option<String>,
    pub funding: Eth,
    #[serde(default)]
    pub activated_at: Tick,
    #[serde(default)]
    pub policy: PolicyKind,
    #[serde(default)]
    pub sliders: SliderConfig,
    #[serde(default)]
    pub strategies: Vec<StrategySpec>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySpec {
    pub label: String,
    pub text: String,
    #[serde(default = "medium")]
    pub priority: Priority,
    pub expiry: Option<Tick>,
    #[serde(default)]
    pub created_at: Tick,
}

fn medium() -> Priority {
    Priority::Medium
}

impl From<&StrategySpec> for Strategy {
    fn from(s: &StrategySpec) -> Strategy {
        Strategy { label: s.label.clone(), text: s.text.clone(), priority: s.priority, expiry: s.expiry, created_at: s.created_at }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub at: Tick,
    pub vault: u32,
    pub action: OwnerAction,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("unsupported scenario format {found:?}, expected {SCENARIO_FORMAT:?}")]
    Format { found: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("template: {0}")]
    Template(#[from] TemplateError),
}

/// Per-run knobs that sit outside the scenario file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub ticks: Option<u64>,
    /// Builtin name or path; replaces the scenario's template.
    pub template: Option<String>,
    pub sequential: bool,
    pub hashes_only: bool,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let header: toml::Table = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        match header.get("format").and_then(|f| f.as_str()) {
            Some(SCENARIO_FORMAT) => {}
            Some(other) => return Err(ScenarioError::Format { found: other.to_string() }),
            None => return Err(ScenarioError::Format { found: String::new() }),
        }
        let mut s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        s.source = text.to_string();
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
        let mut s = Scenario::parse(&text)?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(s)
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.source.as_bytes()))
    }

    /// `(id, group index)` for every vault after expanding counts.
    pub fn vault_ids(&self) -> Vec<(VaultId, usize)> {
        let mut next = 1u32;
        let mut out = Vec::new();
        for (g, group) in self.vaults.iter().enumerate() {
            let start = group.id.unwrap_or(next);
            for i in 0..group.count {
                out.push((VaultId(start + i), g));
            }
            next = start + group.count;
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.tokens.is_empty() {
            return bad("at least one token is required".into());
        }
        let mut symbols = BTreeSet::new();
        for t in &self.tokens {
            if t.symbol.trim().is_empty() || t.symbol.chars().any(char::is_whitespace) {
                return bad(format!("token symbol {:?} is empty or contains whitespace", t.symbol));
            }
            if !symbols.insert(t.symbol.as_str()) {
                return bad(format!("token {} is listed twice", t.symbol));
            }
            if t.eth_reserve.is_zero() || t.token_reserve.is_zero() {
                return bad(format!("token {} needs non-zero reserves", t.symbol));
            }
        }
        if !self.tokens.iter().any(|t| t.launch_at == 0) {
            return bad("at least one token must launch at tick 0".into());
        }
        if let Err(e) = self.guard.validate() {
            return bad(format!("guard: {e}"));
        }
        if let Some(allow) = &self.guard.allowlist {
            if let Some(t) = allow.iter().find(|t| !symbols.contains(t.as_str())) {
                return bad(format!("allowlist names unknown token {t}"));
            }
        }
        let rate = self.engine.settlement_failure_rate;
        if !(0.0..=1.0).contains(&rate) {
            return bad(format!("settlement_failure_rate {rate} is outside [0, 1]"));
        }
        if let Some(r) = &self.reap {
            if r.period == 0 {
                return bad("reap period must be positive".into());
            }
        }
        if self.vaults.is_empty() {
            return bad("at least one vault is required".into());
        }
        let ids = self.vault_ids();
        let mut seen = BTreeSet::new();
        for (id, _) in &ids {
            if id.0 == 0 {
                return bad("vault ids start at 1".into());
            }
            if !seen.insert(*id) {
                return bad(format!("vault id {id} is used twice"));
            }
        }
        for group in &self.vaults {
            if group.count == 0 {
                return bad("vault group count must be positive".into());
            }
            if let PolicyKind::CadenceTrader { k: 0 } = group.policy {
                return bad("cadence_trader needs k >= 1".into());
            }
            let strategies: Vec<Strategy> = group.strategies.iter().map(Strategy::from).collect();
            if let Err(e) = MandateLog::new().commit(group.sliders, strategies, 0) {
                return bad(format!("vault mandate: {e}"));
            }
        }
        for e in &self.events {
            if !seen.contains(&VaultId(e.vault)) {
                return bad(format!("event at tick {} targets unknown vault {}", e.at, e.vault));
            }
            if let OwnerAction::UpdateSliders { sliders } = &e.action {
                if let Err(err) = sliders.validate() {
                    return bad(format!("event at tick {}: {err}", e.at));
                }
            }
        }
        Ok(())
    }

    /// Every vault group moved to `level` on `slider`, for sweeps.
    pub fn with_slider(&self, slider: Slider, level: u8) -> Scenario {
        let mut s = self.clone();
        for g in &mut s.vaults {
            g.sliders = g.sliders.with(slider, level);
        }
        s
    }

    fn template_spec(&self, over: Option<&str>) -> String {
        let spec = over.unwrap_or(&self.template);
        if BriefTemplate::builtin(spec).is_ok() || Path::new(spec).is_absolute() || over.is_some() {
            spec.to_string()
        } else {
            self.base_dir.join(spec).display().to_string()
        }
    }

    /// A world at tick 0 with tokens, vaults and events scheduled.
    pub fn build(&self, opts: &RunOptions) -> Result<World, ScenarioError> {
        let template_spec = self.template_spec(opts.template.as_deref());
        let template = BriefTemplate::resolve(&template_spec)?;
        let config = EngineConfig {
            seed: opts.seed.unwrap_or(self.seed),
            settlement_failure_rate: self.engine.settlement_failure_rate,
            settlement_mode: self.engine.settlement_mode,
            invocation_jitter: self.engine.invocation_jitter,
            shuffle: self.engine.shuffle,
            check_invariants: true,
            parallel: !opts.sequential,
            retain_brief_text: !opts.hashes_only,
        };
        let seed = config.seed;
        let mut world = World::new(config, self.guard.clone(), template);
        let invalid = |e: crate::engine::SetupError| ScenarioError::Invalid(e.to_string());
        for t in &self.tokens {
            world
                .schedule_launch(TokenLaunch { symbol: t.symbol.clone(), at: t.launch_at, eth_reserve: t.eth_reserve, token_reserve: t.token_reserve })
                .map_err(invalid)?;
        }
        if let Some(r) = &self.reap {
            world.reap = Some(ReapSchedule::new(r.period, r.first_at.unwrap_or(r.period)));
        }
        for (id, g) in self.vault_ids() {
            let group = &self.vaults[g];
            let spec = VaultSpec {
                id,
                owner: group.owner.clone().unwrap_or_else(|| format!("owner-{id}")),
                funding: group.funding,
                activated_at: group.activated_at,
                sliders: group.sliders,
                strategies: group.strategies.iter().map(Strategy::from).collect(),
            };
            world.add_vault_with(spec, &group.policy).map_err(invalid)?;
        }
        for e in &self.events {
            world.schedule_action(ScriptedAction { at: e.at, vault: VaultId(e.vault), action: e.action.clone() }).map_err(invalid)?;
        }
        world.trace.meta = RunMeta {
            seed,
            scenario_hash: self.hash(),
            template_variant: world.template.variant_id.clone(),
            scenario: Some(self.source.clone()),
            template: Some(template_spec),
            ticks: opts.ticks.unwrap_or(self.ticks),
        };
        Ok(world)
    }

    /// Builds and runs to completion.
    pub fn run(&self, opts: &RunOptions) -> Result<World, ScenarioError> {
        let mut world = self.build(opts)?;
        let ticks = world.trace.meta.ticks;
        world.run(ticks);
        Ok(world)
    }
}
