//! Append-only instruction-to-settlement store.
//!
//! Export format, one JSON object per line:
//!
//! ```text
//! {"type":"manifest","format":"vaultsim-trace/1","seed":"7",...}
//! {"type":"record","invocation_id":"0","tick":0,...}
//! {"type":"event","event":"reap",...}
//! ```
//!
//! Rendered briefs live in a side archive (`briefs.ndjson` next to the
//! trace), one `{"hash":..,"text":..}` per line, deduplicated by hash.
//! 128-bit amounts are decimal strings.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::brief::RenderedBrief;
use crate::guard::{RejectCode, Verdict};
use crate::mandate::SliderConfig;
use crate::market::{EthDelta, FeeSplit, Pool, SwapResult, TokenId, TradeSide};
use crate::policy::{ActionType, ParseError, ReasonTag, ToolCall};
use crate::reap::ReapEvent;
use crate::units::{Eth, Price, Tokens};
use crate::vault::{OwnerAction, Vault, VaultId};
use crate::Tick;

pub const TRACE_FORMAT: &str = "vaultsim-trace/1";
pub const TRACE_FILE: &str = "trace.ndjson";
pub const BRIEFS_FILE: &str = "briefs.ndjson";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactPosition {
    pub balance: Tokens,
    pub avg_entry_price: Price,
}

/// Enough of a vault to recompute PnL, plus its mark at pool spot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompactPortfolio {
    pub eth_balance: Eth,
    pub positions: BTreeMap<TokenId, CompactPosition>,
    /// Positions marked at the pools' spot prices when captured.
    pub token_value: Eth,
}

impl CompactPortfolio {
    pub fn capture(vault: &Vault, pools: &BTreeMap<TokenId, Pool>) -> Self {
        let mut token_value = Eth::ZERO;
        let positions = vault
            .positions
            .iter()
            .map(|(t, p)| {
                if let Some(price) = pools.get(t).and_then(Pool::spot_price) {
                    token_value += price.value_of(p.balance);
                }
                (t.clone(), CompactPosition { balance: p.balance, avg_entry_price: p.avg_entry_price })
            })
            .collect();
        CompactPortfolio { eth_balance: vault.eth_balance, positions, token_value }
    }

    pub fn balance(&self, token: &TokenId) -> Tokens {
        self.positions.get(token).map_or(Tokens::ZERO, |p| p.balance)
    }

    /// Marked token value over total value; zero for an empty vault.
    pub fn deployment_fraction(&self) -> f64 {
        let total = self.token_value + self.eth_balance;
        if total.is_zero() {
            0.0
        } else {
            self.token_value.raw() as f64 / total.raw() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub position: usize,
    /// Stable cause name, e.g. `missing_field`.
    pub cause: String,
    pub message: String,
}

impl From<&ParseError> for ParseFailure {
    fn from(e: &ParseError) -> Self {
        ParseFailure { position: e.position, cause: e.cause.kind().to_string(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parsed {
    Call(ToolCall),
    Error(ParseFailure),
}

impl Parsed {
    pub fn call(&self) -> Option<&ToolCall> {
        match self {
            Parsed::Call(c) => Some(c),
            Parsed::Error(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum Settlement {
    Settled { side: TradeSide, token: TokenId, eth_amount: Eth, token_amount: Tokens, fee: FeeSplit, execution_price: Price, realized_pnl: Option<EthDelta> },
    Failed { reason: String },
    NotApplicable,
}

impl Settlement {
    pub fn from_result(r: &SwapResult, realized_pnl: Option<EthDelta>) -> Self {
        Settlement::Settled {
            side: r.side,
            token: r.token.clone(),
            eth_amount: r.eth_amount,
            token_amount: r.token_amount,
            fee: r.fee,
            execution_price: r.execution_price,
            realized_pnl,
        }
    }

    pub fn is_settled(&self) -> bool {
        matches!(self, Settlement::Settled { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(with = "u64_string")]
    pub invocation_id: u64,
    pub tick: Tick,
    /// Invocation index within the tick; nonzero only under jitter.
    pub round: u32,
    pub vault_id: VaultId,
    pub policy: String,
    pub config_version: u64,
    pub sliders: SliderConfig,
    pub brief_hash: String,
    /// Hash of the structured brief, equal across templates.
    pub structure_hash: String,
    pub template_variant_id: String,
    pub raw_response: String,
    pub parsed: Parsed,
    pub verdict: Option<Verdict>,
    pub settlement: Settlement,
    pub portfolio_before: CompactPortfolio,
    pub portfolio_after: CompactPortfolio,
    pub reason_tags: Vec<ReasonTag>,
    /// Set when the action carried out a [HIGH] immediate or triggered directive.
    pub high_exception: bool,
}

impl TraceRecord {
    pub fn action(&self) -> Option<ActionType> {
        self.parsed.call().map(ToolCall::action)
    }

    pub fn is_trade_request(&self) -> bool {
        matches!(self.action(), Some(ActionType::Buy | ActionType::Sell))
    }

    pub fn dominant_reason(&self) -> Option<ReasonTag> {
        self.reason_tags.first().copied()
    }
}

mod u64_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
pub enum TraceEvent {
    Launch { tick: Tick, token: TokenId, eth_reserve: Eth, token_reserve: Tokens },
    Owner { tick: Tick, vault_id: VaultId, action: OwnerAction, ok: bool, detail: String, liquidations: Vec<SwapResult> },
    Reap(ReapEvent),
}

impl TraceEvent {
    pub fn tick(&self) -> Tick {
        match self {
            TraceEvent::Launch { tick, .. } | TraceEvent::Owner { tick, .. } => *tick,
            TraceEvent::Reap(r) => r.tick,
        }
    }
}

/// Run identity written as the first export line.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMeta {
    #[serde(with = "u64_string")]
    pub seed: u64,
    pub scenario_hash: String,
    pub template_variant: String,
    /// Full scenario text, so a trace alone is enough to replay it.
    pub scenario: Option<String>,
    /// Template override used for this run, if any.
    pub template: Option<String>,
    pub ticks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    #[serde(flatten)]
    pub meta: RunMeta,
    pub record_count: u64,
    pub event_count: u64,
    pub brief_count: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
enum Line {
    Manifest(Manifest),
    Record(Box<TraceRecord>),
    Event(TraceEvent),
}

#[derive(Serialize, Deserialize)]
struct BriefLine {
    hash: String,
    text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("record {invocation_id} references brief {hash} which is not archived")]
    DanglingBriefHash { invocation_id: u64, hash: String },
    #[error("invocation id {got} does not follow {last}")]
    NonMonotoneId { last: u64, got: u64 },
    #[error("line {line}: {cause}")]
    CorruptLine { line: usize, cause: String },
    #[error("export has no manifest line")]
    MissingManifest,
    #[error("manifest says {expected} records, found {found}")]
    CountMismatch { expected: u64, found: u64 },
    #[error("{0}")]
    Io(String),
}

fn io_err(e: std::io::Error) -> TraceError {
    TraceError::Io(e.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStore {
    pub meta: RunMeta,
    records: Vec<TraceRecord>,
    events: Vec<TraceEvent>,
    /// hash to text; text is `None` when not retained.
    briefs: BTreeMap<String, Option<String>>,
    retain_brief_text: bool,
    by_vault: BTreeMap<VaultId, Vec<usize>>,
    by_tick: BTreeMap<Tick, Vec<usize>>,
}

impl Default for TraceStore {
    fn default() -> Self {
        TraceStore::new(true)
    }
}

impl TraceStore {
    /// `retain_brief_text = false` keeps only hashes, for large runs.
    pub fn new(retain_brief_text: bool) -> Self {
        TraceStore {
            meta: RunMeta::default(),
            records: Vec::new(),
            events: Vec::new(),
            briefs: BTreeMap::new(),
            retain_brief_text,
            by_vault: BTreeMap::new(),
            by_tick: BTreeMap::new(),
        }
    }

    pub fn archive(&mut self, brief: &RenderedBrief) {
        let keep = self.retain_brief_text;
        self.briefs.entry(brief.brief_hash.clone()).or_insert_with(|| keep.then(|| brief.text.clone()));
    }

    pub fn has_brief(&self, hash: &str) -> bool {
        self.briefs.contains_key(hash)
    }

    pub fn brief_text(&self, hash: &str) -> Option<&str> {
        self.briefs.get(hash).and_then(|t| t.as_deref())
    }

    pub fn brief_count(&self) -> usize {
        self.briefs.len()
    }

    pub fn next_invocation_id(&self) -> u64 {
        self.records.last().map_or(0, |r| r.invocation_id + 1)
    }

    pub fn append(&mut self, record: TraceRecord) -> Result<(), TraceError> {
        if let Some(last) = self.records.last() {
            if record.invocation_id <= last.invocation_id {
                return Err(TraceError::NonMonotoneId { last: last.invocation_id, got: record.invocation_id });
            }
        }
        if !self.briefs.contains_key(&record.brief_hash) {
            return Err(TraceError::DanglingBriefHash { invocation_id: record.invocation_id, hash: record.brief_hash });
        }
        let idx = self.records.len();
        self.by_vault.entry(record.vault_id).or_default().push(idx);
        self.by_tick.entry(record.tick).or_default().push(idx);
        self.records.push(record);
        Ok(())
    }

    pub fn push_event(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn vaults(&self) -> impl Iterator<Item = VaultId> + '_ {
        self.by_vault.keys().copied()
    }

    pub fn by_vault(&self, vault: VaultId) -> impl Iterator<Item = &TraceRecord> + '_ {
        self.by_vault.get(&vault).into_iter().flatten().map(|&i| &self.records[i])
    }

    pub fn at_tick(&self, tick: Tick) -> impl Iterator<Item = &TraceRecord> + '_ {
        self.by_tick.get(&tick).into_iter().flatten().map(|&i| &self.records[i])
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: TRACE_FORMAT.into(),
            meta: self.meta.clone(),
            record_count: self.records.len() as u64,
            event_count: self.events.len() as u64,
            brief_count: self.briefs.len() as u64,
        }
    }

    /// Writes the manifest, records and events.
    pub fn export(&self, mut w: impl Write) -> Result<(), TraceError> {
        let mut line = |l: &Line| -> Result<(), TraceError> {
            serde_json::to_writer(&mut w, l).map_err(|e| TraceError::Io(e.to_string()))?;
            w.write_all(b"\n").map_err(io_err)
        };
        line(&Line::Manifest(self.manifest()))?;
        for r in &self.records {
            line(&Line::Record(Box::new(r.clone())))?;
        }
        for e in &self.events {
            line(&Line::Event(e.clone()))?;
        }
        w.flush().map_err(io_err)
    }

    pub fn export_string(&self) -> String {
        let mut buf = Vec::new();
        self.export(&mut buf).expect("in-memory export");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    /// Writes retained brief texts; hash-only entries are skipped.
    pub fn export_briefs(&self, mut w: impl Write) -> Result<(), TraceError> {
        for (hash, text) in &self.briefs {
            if let Some(text) = text {
                serde_json::to_writer(&mut w, &BriefLine { hash: hash.clone(), text: text.clone() }).map_err(|e| TraceError::Io(e.to_string()))?;
                w.write_all(b"\n").map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    /// Writes `trace.ndjson` and `briefs.ndjson` into `dir`.
    pub fn export_dir(&self, dir: &Path) -> Result<PathBuf, TraceError> {
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let trace_path = dir.join(TRACE_FILE);
        self.export(BufWriter::new(File::create(&trace_path).map_err(io_err)?))?;
        self.export_briefs(BufWriter::new(File::create(dir.join(BRIEFS_FILE)).map_err(io_err)?))?;
        Ok(trace_path)
    }

    /// Reads an export. Brief hashes referenced by records are registered
    /// as archived; texts are attached by [`TraceStore::load_briefs`].
    pub fn import(r: impl BufRead) -> Result<TraceStore, TraceError> {
        let mut store = TraceStore::new(true);
        let mut manifest: Option<Manifest> = None;
        for (i, line) in r.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| TraceError::CorruptLine { line: n, cause: e.to_string() })?;
            let parsed: Line = serde_json::from_str(&line).map_err(|e| TraceError::CorruptLine { line: n, cause: e.to_string() })?;
            match parsed {
                Line::Manifest(m) if n == 1 => manifest = Some(m),
                Line::Manifest(_) => return Err(TraceError::CorruptLine { line: n, cause: "second manifest".into() }),
                _ if manifest.is_none() => return Err(TraceError::MissingManifest),
                Line::Record(rec) => {
                    store.briefs.entry(rec.brief_hash.clone()).or_insert(None);
                    store.append(*rec).map_err(|e| TraceError::CorruptLine { line: n, cause: e.to_string() })?;
                }
                Line::Event(e) => store.events.push(e),
            }
        }
        let m = manifest.ok_or(TraceError::MissingManifest)?;
        if m.record_count != store.records.len() as u64 {
            return Err(TraceError::CountMismatch { expected: m.record_count, found: store.records.len() as u64 });
        }
        store.meta = m.meta;
        Ok(store)
    }

    /// Attaches brief texts from an archive, checking each hash.
    pub fn load_briefs(&mut self, r: impl BufRead) -> Result<(), TraceError> {
        for (i, line) in r.lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| TraceError::CorruptLine { line: n, cause: e.to_string() })?;
            let b: BriefLine = serde_json::from_str(&line).map_err(|e| TraceError::CorruptLine { line: n, cause: e.to_string() })?;
            if crate::brief::hash_text(&b.text) != b.hash {
                return Err(TraceError::CorruptLine { line: n, cause: "brief text does not match its hash".into() });
            }
            self.briefs.insert(b.hash, Some(b.text));
        }
        Ok(())
    }

    /// Imports a trace file and, when present, its sibling brief archive.
    pub fn import_path(path: &Path) -> Result<TraceStore, TraceError> {
        let path = if path.is_dir() { path.join(TRACE_FILE) } else { path.to_path_buf() };
        let f = File::open(&path).map_err(|e| TraceError::Io(format!("{}: {e}", path.display())))?;
        let mut store = TraceStore::import(BufReader::new(f))?;
        let briefs = path.with_file_name(BRIEFS_FILE);
        if briefs.exists() {
            store.load_briefs(BufReader::new(File::open(briefs).map_err(io_err)?))?;
        }
        Ok(store)
    }

    /// Hashes that records reference but whose text is not archived.
    pub fn missing_brief_texts(&self) -> BTreeSet<&str> {
        self.records.iter().filter(|r| self.brief_text(&r.brief_hash).is_none()).map(|r| r.brief_hash.as_str()).collect()
    }
}

/// Partition of records by outcome.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FailureTaxonomy {
    pub total: u64,
    pub parse_errors: u64,
    pub guard_rejections: BTreeMap<RejectCode, u64>,
    pub settlement_failures: u64,
    pub settled: u64,
    /// Accepted observations: nothing to settle.
    pub not_applicable: u64,
}

impl FailureTaxonomy {
    pub fn rejections(&self) -> u64 {
        self.guard_rejections.values().sum()
    }

    /// Settled over policy-valid submissions; parse errors and rejections
    /// never enter the denominator.
    pub fn settlement_success_rate(&self) -> Option<f64> {
        let denom = self.settled + self.settlement_failures;
        (denom > 0).then(|| self.settled as f64 / denom as f64)
    }

    pub fn bucket_sum(&self) -> u64 {
        self.parse_errors + self.rejections() + self.settlement_failures + self.settled + self.not_applicable
    }
}

pub fn failure_taxonomy<'a>(records: impl IntoIterator<Item = &'a TraceRecord>) -> FailureTaxonomy {
    let mut t = FailureTaxonomy::default();
    for r in records {
        t.total += 1;
        match (&r.parsed, &r.verdict, &r.settlement) {
            (Parsed::Error(_), _, _) => t.parse_errors += 1,
            (_, Some(Verdict::Rejected(rej)), _) => *t.guard_rejections.entry(rej.code).or_insert(0) += 1,
            (_, _, Settlement::Settled { .. }) => t.settled += 1,
            (_, _, Settlement::Failed { .. }) => t.settlement_failures += 1,
            _ => t.not_applicable += 1,
        }
    }
    t
}

/// Checks the record-level invariants: settlement present iff accepted
/// trade, unchanged portfolio unless settled, and settled deltas equal to
/// the recorded swap amounts.
pub fn check_record(r: &TraceRecord) -> Result<(), String> {
    let accepted_trade = matches!(r.verdict, Some(Verdict::Accepted(_))) && r.is_trade_request();
    match &r.settlement {
        Settlement::NotApplicable => {
            if accepted_trade {
                return Err("accepted trade without settlement".into());
            }
            if r.portfolio_before.eth_balance != r.portfolio_after.eth_balance || r.portfolio_before.positions != r.portfolio_after.positions {
                return Err("portfolio changed without settlement".into());
            }
        }
        Settlement::Failed { .. } => {
            if !accepted_trade {
                return Err("failed settlement of a non-accepted call".into());
            }
            if r.portfolio_before.eth_balance != r.portfolio_after.eth_balance || r.portfolio_before.positions != r.portfolio_after.positions {
                return Err("failed settlement changed the portfolio".into());
            }
        }
        Settlement::Settled { side, token, eth_amount, token_amount, .. } => {
            if !accepted_trade {
                return Err("settled a non-accepted call".into());
            }
            let (b, a) = (&r.portfolio_before, &r.portfolio_after);
            let ok = match side {
                TradeSide::Buy => b.eth_balance.checked_sub(*eth_amount) == Some(a.eth_balance) && b.balance(token) + *token_amount == a.balance(token),
                TradeSide::Sell => b.eth_balance + *eth_amount == a.eth_balance && b.balance(token).checked_sub(*token_amount) == Some(a.balance(token)),
            };
            if !ok {
                return Err("portfolio delta differs from the settled amounts".into());
            }
        }
    }
    Ok(())
}
