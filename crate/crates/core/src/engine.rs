//! The deterministic tick loop.
//!
//! Per tick: settle last tick's deferred swaps (delayed mode), launch due
//! tokens, apply scripted owner actions, record opens, run invocation
//! rounds, reap if due, advance the clock.
//!
//! Within a round, decisions (compile, respond, parse) run concurrently
//! against the round-start world; validation and settlement then run
//! serially in vault order against current pools. All randomness comes
//! from keyed streams, so thread scheduling cannot change a byte.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brief::{compile, BriefInputs, BriefTemplate, CompiledBrief, DirectiveBook, ImpactLimits, LaunchInfo, MemoryEntry, MemoryOutcome, ReapInfo};
use crate::guard::{settlement_check, validate, Acceptance, GuardConfig, SettlementAbort, Verdict};
use crate::mandate::{MandateError, MandateLog, Priority, SliderConfig, Strategy};
use crate::market::{execute_swap, EthDelta, FeeSchedule, Leg, MarketHistory, MarketSnapshot, Pool, SwapResult, TokenId, TokenMeta, TradeRecord};
use crate::policy::{parse_tool_call, DecisionContext, Policy, PolicyKind, ToolCall};
use crate::reap::{execute_reap, select_reap_pair, ProtocolAccounts, ReapSchedule};
use crate::rng::{stream, stream_n, Purpose};
use crate::trace::{CompactPortfolio, ParseFailure, Parsed, Settlement, TraceEvent, TraceRecord, TraceStore};
use crate::units::{Eth, Price, Tokens};
use crate::vault::{apply_owner_action, portfolio_view, Actor, OwnerAction, Vault, VaultError, VaultId};
use crate::{Tick, TICKS_PER_DAY, TICKS_PER_HOUR};

/// Memory entries kept per vault; the template decides how many it shows.
pub const MEMORY_CAPACITY: usize = 64;
/// Extra invocations per vault-hour under jitter are drawn from `0..=MAX_JITTER`.
pub const MAX_JITTER: usize = 3;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettlementMode {
    #[default]
    Immediate,
    /// Accepted swaps settle at the start of the next tick against the
    /// pool as it is then, aborting below the recorded minimum output.
    Delayed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub seed: u64,
    pub settlement_failure_rate: f64,
    pub settlement_mode: SettlementMode,
    pub invocation_jitter: bool,
    /// Seeded shuffle of the serial phase instead of vault order.
    pub shuffle: bool,
    /// Conservation and accounting checks after every tick.
    pub check_invariants: bool,
    pub parallel: bool,
    pub retain_brief_text: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            seed: 0,
            settlement_failure_rate: 0.0,
            settlement_mode: SettlementMode::Immediate,
            invocation_jitter: false,
            shuffle: false,
            check_invariants: true,
            parallel: true,
            retain_brief_text: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLaunch {
    pub symbol: String,
    pub at: Tick,
    pub eth_reserve: Eth,
    pub token_reserve: Tokens,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedAction {
    pub at: Tick,
    pub vault: VaultId,
    pub action: OwnerAction,
}

pub struct Agent {
    pub policy: Arc<dyn Policy>,
    pub policy_name: String,
    pub mandate: MandateLog,
    pub memory: VecDeque<MemoryEntry>,
    pub directives: DirectiveBook,
}

impl Agent {
    fn remember(&mut self, entry: MemoryEntry) {
        if self.memory.len() == MEMORY_CAPACITY {
            self.memory.pop_front();
        }
        self.memory.push_back(entry);
    }
}

/// ETH that entered or left the system; everything else only moves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct EthLedger {
    pub seeded: Eth,
    pub funded: Eth,
    pub withdrawn: Eth,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub ticks: u64,
    pub invocations: u64,
    pub parse_errors: u64,
    pub rejections: u64,
    pub settled: u64,
    pub settlement_failures: u64,
    pub reaps: u64,
    pub launches: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SetupError {
    #[error("vault {0} already exists")]
    DuplicateVault(VaultId),
    #[error("token {0} already exists")]
    DuplicateToken(String),
    #[error("token {0} needs non-zero reserves")]
    EmptyReserves(String),
    #[error("scripted action for unknown vault {0}")]
    UnknownVault(VaultId),
    #[error("mandate: {0}")]
    Mandate(#[from] MandateError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaultSpec {
    pub id: VaultId,
    pub owner: String,
    pub funding: Eth,
    pub activated_at: Tick,
    pub sliders: SliderConfig,
    pub strategies: Vec<Strategy>,
}

struct Pending {
    record: TraceRecord,
    acceptance: Acceptance,
    call: ToolCall,
}

struct Decision {
    vault: VaultId,
    compiled: CompiledBrief,
    raw: String,
    parsed: Result<ToolCall, ParseFailure>,
}

pub struct World {
    pub now: Tick,
    pub config: EngineConfig,
    pub guard: GuardConfig,
    pub fees: FeeSchedule,
    pub template: BriefTemplate,
    pub tokens: BTreeMap<TokenId, TokenMeta>,
    pub pools: BTreeMap<TokenId, Pool>,
    pub history: MarketHistory,
    pub vaults: BTreeMap<VaultId, Vault>,
    pub agents: BTreeMap<VaultId, Agent>,
    pub reap: Option<ReapSchedule>,
    pub protocol: ProtocolAccounts,
    pub trace: TraceStore,
    pub ledger: EthLedger,
    pub counters: Counters,
    /// Invariant failures found by the per-tick checks; empty in a sound run.
    pub violations: Vec<String>,
    launches: Vec<TokenLaunch>,
    scripted: Vec<ScriptedAction>,
    pending: Vec<Pending>,
}

impl World {
    pub fn new(config: EngineConfig, guard: GuardConfig, template: BriefTemplate) -> Self {
        let trace = TraceStore::new(config.retain_brief_text);
        World {
            now: 0,
            config,
            guard,
            fees: FeeSchedule::default(),
            template,
            tokens: BTreeMap::new(),
            pools: BTreeMap::new(),
            history: MarketHistory::new(),
            vaults: BTreeMap::new(),
            agents: BTreeMap::new(),
            reap: None,
            protocol: ProtocolAccounts::default(),
            trace,
            ledger: EthLedger::default(),
            counters: Counters::default(),
            violations: Vec::new(),
            launches: Vec::new(),
            scripted: Vec::new(),
            pending: Vec::new(),
        }
    }

    /// Schedules a token; launches at or before `now` happen on the next tick.
    pub fn schedule_launch(&mut self, launch: TokenLaunch) -> Result<(), SetupError> {
        let id = TokenId::new(&launch.symbol);
        if self.tokens.contains_key(&id) || self.launches.iter().any(|l| l.symbol == launch.symbol) {
            return Err(SetupError::DuplicateToken(launch.symbol));
        }
        if launch.eth_reserve.is_zero() || launch.token_reserve.is_zero() {
            return Err(SetupError::EmptyReserves(launch.symbol));
        }
        let at = self.launches.partition_point(|l| (l.at, l.symbol.as_str()) <= (launch.at, launch.symbol.as_str()));
        self.launches.insert(at, launch);
        Ok(())
    }

    pub fn add_vault(&mut self, spec: VaultSpec, policy: Arc<dyn Policy>) -> Result<(), SetupError> {
        if self.vaults.contains_key(&spec.id) {
            return Err(SetupError::DuplicateVault(spec.id));
        }
        let mut mandate = MandateLog::new();
        mandate.commit(spec.sliders, spec.strategies, 0)?;
        let mut vault = Vault::new(spec.id, spec.owner.clone(), spec.activated_at);
        if !spec.funding.is_zero() {
            let mut pools = BTreeMap::new();
            apply_owner_action(&mut vault, &Actor::Owner(spec.owner), &OwnerAction::Fund { eth: spec.funding }, &mut mandate, &mut pools, 0)
                .expect("owner funding an open vault");
            self.ledger.funded += spec.funding;
        }
        let agent = Agent { policy_name: policy.name(), policy, mandate, memory: VecDeque::new(), directives: DirectiveBook::default() };
        self.agents.insert(spec.id, agent);
        self.vaults.insert(spec.id, vault);
        Ok(())
    }

    pub fn add_vault_with(&mut self, spec: VaultSpec, kind: &PolicyKind) -> Result<(), SetupError> {
        self.add_vault(spec, kind.build())
    }

    pub fn schedule_action(&mut self, action: ScriptedAction) -> Result<(), SetupError> {
        if !self.vaults.contains_key(&action.vault) {
            return Err(SetupError::UnknownVault(action.vault));
        }
        let at = self.scripted.partition_point(|a| (a.at, a.vault) <= (action.at, action.vault));
        self.scripted.insert(at, action);
        Ok(())
    }

    /// Total ETH held anywhere in the system.
    pub fn total_eth(&self) -> Eth {
        let vaults: Eth = self.vaults.values().map(|v| v.eth_balance).sum();
        let pools: Eth = self.pools.values().map(|p| p.eth_reserve + p.protocol_fee_accrued).sum();
        vaults + pools + self.protocol.treasury
    }

    pub fn expected_eth(&self) -> Eth {
        (self.ledger.seeded + self.ledger.funded).checked_sub(self.ledger.withdrawn).expect("withdrew more than entered")
    }

    pub fn run(&mut self, n_ticks: u64) {
        self.run_with_progress(n_ticks, |_, _| {});
    }

    pub fn run_with_progress(&mut self, n_ticks: u64, mut progress: impl FnMut(Tick, &Counters)) {
        for _ in 0..n_ticks {
            self.run_tick();
            progress(self.now, &self.counters);
        }
    }

    pub fn run_tick(&mut self) {
        let now = self.now;
        self.settle_pending();
        self.launch_due();
        self.apply_scripted();
        self.history.record_open(now, self.pools.values());
        let rounds = self.rounds_this_tick();
        for round in 0..rounds.values().copied().max().unwrap_or(0) {
            let due: Vec<VaultId> = rounds.iter().filter(|(_, &n)| n > round).map(|(&v, _)| v).collect();
            self.run_round(&due, round);
        }
        self.reap_if_due();
        if self.config.check_invariants {
            self.check_invariants();
        }
        self.counters.ticks += 1;
        self.now += 1;
    }

    fn holders(&self) -> BTreeMap<TokenId, u32> {
        let mut h = BTreeMap::new();
        for v in self.vaults.values() {
            for t in v.positions.keys() {
                *h.entry(t.clone()).or_insert(0) += 1;
            }
        }
        h
    }

    pub fn snapshot(&self) -> MarketSnapshot {
        self.history.snapshot(self.now, &self.tokens, &self.pools, &self.holders())
    }

    /// Invocations per active vault this tick: one, plus jitter extras.
    fn rounds_this_tick(&self) -> BTreeMap<VaultId, u32> {
        let now = self.now;
        self.vaults
            .values()
            .filter(|v| v.is_active(now))
            .map(|v| {
                let mut n = 1;
                if self.config.invocation_jitter {
                    let hour = now / TICKS_PER_HOUR;
                    let mut rng = stream(self.config.seed, v.id, hour, Purpose::Jitter);
                    let extra = rng.random_range(0..=MAX_JITTER);
                    let slots = rand::seq::index::sample(&mut rng, TICKS_PER_HOUR as usize, extra);
                    n += slots.iter().filter(|&s| s as u64 == now % TICKS_PER_HOUR).count() as u32;
                }
                (v.id, n)
            })
            .collect()
    }

    fn next_launch_info(&self) -> Option<LaunchInfo> {
        self.launches.iter().find(|l| l.at > self.now && l.at - self.now <= TICKS_PER_DAY).map(|l| LaunchInfo { symbol: l.symbol.clone(), launches_at: l.at })
    }

    fn shared(&self) -> Shared {
        let snapshot = self.snapshot();
        Shared {
            limits: ImpactLimits::compute(self.pools.values(), self.guard.max_price_impact_bps),
            reap: self.reap.and_then(|r| ReapInfo::from_snapshot(&snapshot, r.next_at, self.now)),
            launch: self.next_launch_info(),
            snapshot,
        }
    }

    fn with_inputs<R>(&self, vault: VaultId, shared: &Shared, f: impl FnOnce(&BriefInputs<'_>) -> R) -> R {
        let agent = &self.agents[&vault];
        let v = &self.vaults[&vault];
        let commit = agent.mandate.read_latest(self.now).expect("vaults commit at creation");
        let portfolio = portfolio_view(v, &shared.snapshot, self.now);
        let memory: Vec<MemoryEntry> = agent.memory.iter().cloned().collect();
        let inputs = BriefInputs {
            commit,
            snapshot: &shared.snapshot,
            portfolio: &portfolio,
            guard: &self.guard,
            fees: self.fees,
            limits: &shared.limits,
            reap: shared.reap.as_ref(),
            launch: shared.launch.as_ref(),
            memory: &memory,
            directives: &agent.directives,
            now: self.now,
        };
        f(&inputs)
    }

    /// Calls `f` with the brief inputs `vault` would see if polled now.
    pub fn brief_inputs<R>(&self, vault: VaultId, f: impl FnOnce(&BriefInputs<'_>) -> R) -> Option<R> {
        self.agents.contains_key(&vault).then(|| self.with_inputs(vault, &self.shared(), f))
    }

    fn decide(&self, vault: VaultId, round: u32, shared: &Shared) -> Decision {
        let agent = &self.agents[&vault];
        let compiled = self.with_inputs(vault, shared, |inputs| compile(&self.template, inputs)).expect("built-in sections always have payloads");
        let mut rng = stream_n(self.config.seed, vault, self.now, Purpose::Decide, round as u64);
        let raw = agent.policy.respond(DecisionContext { brief: &compiled.structured, rendered: &compiled.rendered }, &mut rng);
        let parsed = parse_tool_call(&raw).map_err(|e| ParseFailure::from(&e));
        Decision { vault, compiled, raw, parsed }
    }

    fn run_round(&mut self, due: &[VaultId], round: u32) {
        let shared = self.shared();
        let mut decisions: Vec<Decision> = if self.config.parallel {
            due.par_iter().map(|&v| self.decide(v, round, &shared)).collect()
        } else {
            due.iter().map(|&v| self.decide(v, round, &shared)).collect()
        };
        if self.config.shuffle {
            let mut rng = stream_n(self.config.seed, VaultId(0), self.now, Purpose::Shuffle, round as u64);
            decisions.shuffle(&mut rng);
        }
        for d in decisions {
            self.apply_decision(d, round);
        }
    }

    fn apply_decision(&mut self, d: Decision, round: u32) {
        let now = self.now;
        self.counters.invocations += 1;
        self.trace.archive(&d.compiled.rendered);
        let before = CompactPortfolio::capture(&self.vaults[&d.vault], &self.pools);
        let structured = &d.compiled.structured;
        let mut record = TraceRecord {
            invocation_id: 0,
            tick: now,
            round,
            vault_id: d.vault,
            policy: self.agents[&d.vault].policy_name.clone(),
            config_version: structured.config_version,
            sliders: structured.sliders,
            brief_hash: d.compiled.rendered.brief_hash.clone(),
            structure_hash: structured.content_hash(),
            template_variant_id: d.compiled.rendered.template_variant_id.clone(),
            raw_response: d.raw,
            parsed: Parsed::Error(ParseFailure { position: 0, cause: String::new(), message: String::new() }),
            verdict: None,
            settlement: Settlement::NotApplicable,
            portfolio_before: before.clone(),
            portfolio_after: before,
            reason_tags: Vec::new(),
            high_exception: false,
        };
        let call = match d.parsed {
            Err(failure) => {
                self.counters.parse_errors += 1;
                record.parsed = Parsed::Error(failure);
                self.agents.get_mut(&d.vault).expect("agent").remember(MemoryEntry {
                    tick: now,
                    tool: crate::policy::ActionType::Observe,
                    token: None,
                    fraction: None,
                    strategy: None,
                    reasons: Vec::new(),
                    outcome: MemoryOutcome::ParseError,
                });
                self.append(record);
                return;
            }
            Ok(call) => call,
        };
        let directive_text =
            call.strategy().and_then(|label| structured.strategies.iter().find(|s| s.label == label).map(|s| (s.text.clone(), s.priority == Priority::High)));
        record.high_exception = directive_text.as_ref().is_some_and(|(_, high)| *high);
        record.reason_tags = call.reasons().to_vec();
        record.parsed = Parsed::Call(call.clone());
        let verdict = validate(&call, &self.vaults[&d.vault], &self.tokens, &self.pools, &self.guard, now);
        record.verdict = Some(verdict.clone());
        match verdict {
            Verdict::Rejected(rej) => {
                self.counters.rejections += 1;
                let agent = self.agents.get_mut(&d.vault).expect("agent");
                if let (Some(label), Some((text, _))) = (call.strategy(), &directive_text) {
                    agent.directives.note_rejected(label, text);
                }
                agent.remember(memory_entry(now, &call, MemoryOutcome::Rejected(rej.code.as_str().into())));
                self.append(record);
            }
            Verdict::Accepted(acceptance) if acceptance.quote.is_none() => {
                self.agents.get_mut(&d.vault).expect("agent").remember(memory_entry(now, &call, MemoryOutcome::Observed));
                self.append(record);
            }
            Verdict::Accepted(acceptance) => match self.config.settlement_mode {
                SettlementMode::Immediate => self.settle(record, &acceptance, &call),
                SettlementMode::Delayed => self.pending.push(Pending { record, acceptance, call }),
            },
        }
    }

    fn append(&mut self, mut record: TraceRecord) {
        record.invocation_id = self.trace.next_invocation_id();
        self.trace.append(record).expect("engine archives briefs and numbers records");
    }

    fn settle_pending(&mut self) {
        let mut pending = std::mem::take(&mut self.pending);
        pending.sort_by_key(|p| (p.record.vault_id, p.record.round));
        for p in pending {
            let v = &self.vaults[&p.record.vault_id];
            let mut record = p.record;
            let before = CompactPortfolio::capture(v, &self.pools);
            record.portfolio_before = before.clone();
            record.portfolio_after = before;
            self.settle(record, &p.acceptance, &p.call);
        }
    }

    /// Settles an accepted trade against current pools and appends its record.
    fn settle(&mut self, mut record: TraceRecord, acceptance: &Acceptance, call: &ToolCall) {
        let now = self.now;
        let id = record.vault_id;
        let directive = call.strategy().and_then(|label| {
            let commit = self.agents[&id].mandate.read_latest(record.tick).ok()?;
            commit.strategies.iter().find(|s| s.label == label).map(|s| (s.label.clone(), s.text.clone()))
        });
        let outcome = self.try_settle(id, record.tick, record.round, acceptance);
        let agent = self.agents.get_mut(&id).expect("agent");
        match outcome {
            Ok((result, pnl)) => {
                self.counters.settled += 1;
                record.settlement = Settlement::from_result(&result, pnl);
                if let Some((label, text)) = &directive {
                    agent.directives.note_settled(label, text, now);
                }
                agent.remember(memory_entry(record.tick, call, MemoryOutcome::Settled));
            }
            Err(why) => {
                self.counters.settlement_failures += 1;
                record.settlement = Settlement::Failed { reason: why.to_string() };
                agent.remember(memory_entry(record.tick, call, MemoryOutcome::Failed(why.to_string())));
            }
        }
        record.portfolio_after = CompactPortfolio::capture(&self.vaults[&id], &self.pools);
        self.append(record);
    }

    /// Either applies the swap to pool and vault or changes nothing.
    fn try_settle(&mut self, id: VaultId, tick: Tick, round: u32, acceptance: &Acceptance) -> Result<(SwapResult, Option<EthDelta>), SettlementAbort> {
        let token = acceptance.quote.as_ref().expect("trade acceptance carries a quote").token.clone();
        let quote = settlement_check(acceptance, self.pools.get(&token))?;
        let vault = &self.vaults[&id];
        let affordable = match quote.amount_in() {
            Leg::Eth(e) => e <= vault.eth_balance,
            Leg::Tokens(t) => vault.position(&token).is_some_and(|p| t <= p.balance),
        };
        if !affordable || vault.paused || vault.closed {
            return Err(SettlementAbort::BalanceChanged);
        }
        if self.config.settlement_failure_rate > 0.0 {
            let mut rng = stream_n(self.config.seed, id, tick, Purpose::Failure, round as u64);
            if rng.random_bool(self.config.settlement_failure_rate.min(1.0)) {
                return Err(SettlementAbort::Injected);
            }
        }
        let pool = self.pools.get_mut(&token).expect("checked by settlement_check");
        let k_before = pool.k();
        let result = execute_swap(pool, &quote).expect("fresh quote executes");
        if self.config.check_invariants && !result.fee.total().is_zero() && pool.k() <= k_before {
            self.violations.push(format!("tick {}: k did not grow on {} {:?}", self.now, token, result.side));
        }
        let pnl = self.vaults.get_mut(&id).expect("vault").apply_settlement(&result, self.now);
        self.history.record_trade(TradeRecord { tick: self.now, token, vault: id, side: result.side, eth: result.eth_amount });
        Ok((result, pnl))
    }

    fn launch_due(&mut self) {
        while self.launches.first().is_some_and(|l| l.at <= self.now) {
            let l = self.launches.remove(0);
            let id = TokenId::new(&l.symbol);
            let at = l.at.max(self.now);
            let pool = Pool::new(id.clone(), l.eth_reserve, l.token_reserve, self.fees);
            let price = pool.spot_price().unwrap_or(Price::ZERO);
            let mut meta = TokenMeta::new(&l.symbol, at);
            meta.total_supply = l.token_reserve;
            self.tokens.insert(id.clone(), meta);
            self.pools.insert(id.clone(), pool);
            self.history.register_token(id.clone(), at, price);
            self.ledger.seeded += l.eth_reserve;
            self.counters.launches += 1;
            self.trace.push_event(TraceEvent::Launch { tick: self.now, token: id, eth_reserve: l.eth_reserve, token_reserve: l.token_reserve });
        }
    }

    fn apply_scripted(&mut self) {
        let now = self.now;
        let due = self.scripted.partition_point(|a| a.at <= now);
        let actions: Vec<ScriptedAction> = self.scripted.drain(..due).collect();
        for a in actions {
            let vault = self.vaults.get_mut(&a.vault).expect("checked when scheduled");
            let agent = self.agents.get_mut(&a.vault).expect("agent");
            let actor = Actor::Owner(vault.owner.clone());
            let result = apply_owner_action(vault, &actor, &a.action, &mut agent.mandate, &mut self.pools, now);
            let (ok, detail, liquidations) = match result {
                Ok(outcome) => {
                    match &a.action {
                        OwnerAction::Fund { eth } => self.ledger.funded += *eth,
                        OwnerAction::WithdrawUnallocated { eth } => self.ledger.withdrawn += *eth,
                        _ => {}
                    }
                    for r in &outcome.liquidations {
                        self.history.record_trade(TradeRecord { tick: now, token: r.token.clone(), vault: a.vault, side: r.side, eth: r.eth_amount });
                    }
                    let detail = match outcome.committed_version {
                        Some(v) => format!("committed version {v}"),
                        None if !outcome.written_off.is_empty() => format!("wrote off {} positions", outcome.written_off.len()),
                        None => String::new(),
                    };
                    (true, detail, outcome.liquidations)
                }
                Err(e) => (false, owner_error(&e), Vec::new()),
            };
            self.trace.push_event(TraceEvent::Owner { tick: now, vault_id: a.vault, action: a.action, ok, detail, liquidations });
        }
    }

    fn reap_if_due(&mut self) {
        let Some(schedule) = self.reap else { return };
        if !schedule.is_due(self.now) {
            return;
        }
        let snapshot = self.snapshot();
        if let Ok((source, target)) = select_reap_pair(&snapshot) {
            let result = execute_reap(&mut self.tokens, &mut self.pools, self.vaults.values_mut(), &mut self.protocol, (&source, &target), self.now);
            if let Ok(event) = result {
                self.history.forget_token(&source);
                self.counters.reaps += 1;
                self.trace.push_event(TraceEvent::Reap(event));
            }
        }
        if let Some(r) = self.reap.as_mut() {
            r.advance();
        }
    }

    /// Conservation of ETH and zero accounting residual in every vault.
    pub fn check_invariants(&mut self) {
        let (total, expected) = (self.total_eth(), self.expected_eth());
        if total != expected {
            self.violations.push(format!("tick {}: ETH total {total} != expected {expected}", self.now));
        }
        for v in self.vaults.values() {
            let r = v.accounting_residual();
            if r != 0 {
                self.violations.push(format!("tick {}: vault {} accounting residual {r}", self.now, v.id));
            }
        }
    }
}

fn owner_error(e: &VaultError) -> String {
    e.to_string()
}

struct Shared {
    snapshot: MarketSnapshot,
    limits: ImpactLimits,
    reap: Option<ReapInfo>,
    launch: Option<LaunchInfo>,
}

fn memory_entry(tick: Tick, call: &ToolCall, outcome: MemoryOutcome) -> MemoryEntry {
    MemoryEntry {
        tick,
        tool: call.action(),
        token: call.token().cloned(),
        fraction: call.fraction(),
        strategy: call.strategy().map(str::to_string),
        reasons: call.reasons().iter().map(|r| r.as_str().to_string()).collect(),
        outcome,
    }
}
