//! Brief templates: static prose per section, a section order, and
//! slider-conditional insertions, loaded from text files.
//!
//! ```text
//! @variant default
//! @order SystemRules OperatingRules ...
//! @optional ReapContext UpcomingLaunch
//! @section ActiveSettings
//! ## ACTIVE SETTINGS
//! {{data}}
//! @when TA >= 4 && HS >= 4 -> ActiveSettings
//! - inserted line
//! ```
//!
//! A file may start from another with `@extends <name>`; later directives
//! override or extend the base.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::mandate::{Slider, SliderConfig};

const DEFAULT_TPL: &str = include_str!("../../templates/default.tpl");
const FLOORS_TPL: &str = include_str!("../../templates/floors.tpl");
const FEE_LATE_TPL: &str = include_str!("../../templates/fee-late.tpl");

pub const BUILTIN_TEMPLATES: [&str; 3] = ["default", "floors", "fee-late"];

/// Placeholders a template may use besides `{{data}}` and `{{conditionals}}`.
pub const PLACEHOLDERS: [&str; 11] = [
    "fee_pct",
    "lp_fee_pct",
    "protocol_fee_pct",
    "round_trip_pct",
    "max_trade_pct",
    "slippage_pct",
    "max_impact_bps",
    "new_coin_base",
    "new_coin_step",
    "new_coin_step_minutes",
    "new_coin_uncap_minutes",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SectionId {
    SystemRules,
    OperatingRules,
    DirectiveRouter,
    MarketSnapshot,
    ActiveStrategies,
    ActiveSettings,
    PortfolioContext,
    ExecutionConstraints,
    ReapContext,
    UpcomingLaunch,
    PreviousDecisions,
    CurrentState,
}

impl SectionId {
    /// Canonical order of the production anatomy.
    pub const ALL: [SectionId; 12] = [
        SectionId::SystemRules,
        SectionId::OperatingRules,
        SectionId::DirectiveRouter,
        SectionId::MarketSnapshot,
        SectionId::ActiveStrategies,
        SectionId::ActiveSettings,
        SectionId::PortfolioContext,
        SectionId::ExecutionConstraints,
        SectionId::ReapContext,
        SectionId::UpcomingLaunch,
        SectionId::PreviousDecisions,
        SectionId::CurrentState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SectionId::SystemRules => "SystemRules",
            SectionId::OperatingRules => "OperatingRules",
            SectionId::DirectiveRouter => "DirectiveRouter",
            SectionId::MarketSnapshot => "MarketSnapshot",
            SectionId::ActiveStrategies => "ActiveStrategies",
            SectionId::ActiveSettings => "ActiveSettings",
            SectionId::PortfolioContext => "PortfolioContext",
            SectionId::ExecutionConstraints => "ExecutionConstraints",
            SectionId::ReapContext => "ReapContext",
            SectionId::UpcomingLaunch => "UpcomingLaunch",
            SectionId::PreviousDecisions => "PreviousDecisions",
            SectionId::CurrentState => "CurrentState",
        }
    }

    pub fn parse(s: &str) -> Option<SectionId> {
        SectionId::ALL.into_iter().find(|id| id.name() == s)
    }

    fn index(self) -> usize {
        SectionId::ALL.iter().position(|s| *s == self).expect("listed")
    }
}

impl fmt::Display for SectionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How ACTIVE SETTINGS states pacing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingsStyle {
    /// Relative language ("more active than the middle setting").
    Comparative,
    /// Explicit percentage observation floors.
    Floors,
}

impl SettingsStyle {
    pub fn name(self) -> &'static str {
        match self {
            SettingsStyle::Comparative => "comparative",
            SettingsStyle::Floors => "floors",
        }
    }

    pub fn parse(s: &str) -> Option<SettingsStyle> {
        match s {
            "comparative" => Some(SettingsStyle::Comparative),
            "floors" => Some(SettingsStyle::Floors),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Ge,
    Le,
    Gt,
    Lt,
    Eq,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
            CmpOp::Eq => "==",
        }
    }

    fn holds(self, lhs: u8, rhs: u8) -> bool {
        match self {
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Eq => lhs == rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Clause {
    pub slider: Slider,
    pub op: CmpOp,
    pub value: u8,
}

/// Conjunction of slider comparisons.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Predicate(pub Vec<Clause>);

impl Predicate {
    pub fn holds(&self, sliders: &SliderConfig) -> bool {
        self.0.iter().all(|c| c.op.holds(sliders.get(c.slider), c.value))
    }

    pub fn parse(s: &str) -> Result<Predicate, String> {
        let normalized = s.replace('∧', "&&").replace(" and ", " && ").replace('≥', ">=").replace('≤', "<=");
        let mut clauses = Vec::new();
        for part in normalized.split("&&") {
            let part = part.trim();
            let ops = [(">=", CmpOp::Ge), ("<=", CmpOp::Le), ("==", CmpOp::Eq), (">", CmpOp::Gt), ("<", CmpOp::Lt), ("=", CmpOp::Eq)];
            let (idx, sym, op) = ops.iter().find_map(|(sym, op)| part.find(sym).map(|i| (i, *sym, *op))).ok_or_else(|| format!("no comparison in `{part}`"))?;
            let name = part[..idx].trim();
            let slider = Slider::parse(name).ok_or_else(|| format!("unknown slider `{name}`"))?;
            let value: u8 = part[idx + sym.len()..].trim().parse().map_err(|_| format!("bad value in `{part}`"))?;
            clauses.push(Clause { slider, op, value });
        }
        if clauses.is_empty() {
            return Err("empty predicate".into());
        }
        Ok(Predicate(clauses))
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" && ")?;
            }
            write!(f, "{} {} {}", c.slider.short(), c.op.symbol(), c.value)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionalRule {
    pub predicate: Predicate,
    pub section: SectionId,
    pub text: String,
    /// Only rendered under this settings style; `None` means always.
    pub style: Option<SettingsStyle>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BriefTemplate {
    pub variant_id: String,
    pub section_order: Vec<SectionId>,
    /// Sections rendered only when their payload is present.
    pub optional: BTreeSet<SectionId>,
    pub static_texts: BTreeMap<SectionId, String>,
    pub conditionals: Vec<ConditionalRule>,
    pub settings_style: SettingsStyle,
    pub memory_window: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template has no @variant")]
    MissingVariant,
    #[error("section {0} is in the order but has no text")]
    MissingSectionText(SectionId),
    #[error("invalid section order: {0}")]
    InvalidPermutation(String),
    #[error("unknown placeholder {{{{{0}}}}} in section {1}")]
    UnknownPlaceholder(String, String),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

fn syntax(line: usize, message: impl Into<String>) -> TemplateError {
    TemplateError::Syntax { line, message: message.into() }
}

enum Block {
    None,
    Section(SectionId),
    When(usize),
}

fn finish_text(lines: &[&str]) -> String {
    let mut end = lines.len();
    while end > 0 && lines[end - 1].trim().is_empty() {
        end -= 1;
    }
    let mut start = 0;
    while start < end && lines[start].trim().is_empty() {
        start += 1;
    }
    lines[start..end].join("\n")
}

impl BriefTemplate {
    /// A shipped template by name.
    pub fn builtin(name: &str) -> Result<BriefTemplate, TemplateError> {
        let text = builtin_text(name).ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))?;
        BriefTemplate::parse(text, &|base| builtin_text(base).map(str::to_string))
    }

    pub fn default_template() -> BriefTemplate {
        BriefTemplate::builtin("default").expect("shipped template parses")
    }

    /// A builtin name, or a path to a template file whose `@extends`
    /// names resolve to sibling files first and builtins second.
    pub fn resolve(name_or_path: &str) -> Result<BriefTemplate, TemplateError> {
        if builtin_text(name_or_path).is_some() {
            return BriefTemplate::builtin(name_or_path);
        }
        BriefTemplate::load(Path::new(name_or_path))
    }

    pub fn load(path: &Path) -> Result<BriefTemplate, TemplateError> {
        let io = |e: std::io::Error| TemplateError::Io { path: path.display().to_string(), message: e.to_string() };
        let text = std::fs::read_to_string(path).map_err(io)?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        BriefTemplate::parse(&text, &|base| std::fs::read_to_string(dir.join(format!("{base}.tpl"))).ok().or_else(|| builtin_text(base).map(str::to_string)))
    }

    /// Parses template text; `resolve` supplies the text of `@extends` bases.
    pub fn parse(text: &str, resolve: &dyn Fn(&str) -> Option<String>) -> Result<BriefTemplate, TemplateError> {
        Self::parse_depth(text, resolve, 0)
    }

    fn parse_depth(text: &str, resolve: &dyn Fn(&str) -> Option<String>, depth: usize) -> Result<BriefTemplate, TemplateError> {
        let mut t = BriefTemplate {
            variant_id: String::new(),
            section_order: SectionId::ALL.to_vec(),
            optional: BTreeSet::new(),
            static_texts: BTreeMap::new(),
            conditionals: Vec::new(),
            settings_style: SettingsStyle::Comparative,
            memory_window: 20,
        };
        let mut block = Block::None;
        let mut buf: Vec<&str> = Vec::new();
        let flush = |t: &mut BriefTemplate, block: &Block, buf: &mut Vec<&str>| {
            let body = finish_text(buf);
            match block {
                Block::None => {}
                Block::Section(id) => {
                    t.static_texts.insert(*id, body);
                }
                Block::When(i) => t.conditionals[*i].text = body,
            }
            buf.clear();
        };
        for (n, line) in text.lines().enumerate() {
            let lineno = n + 1;
            let Some(directive) = line.strip_prefix('@') else {
                match block {
                    Block::None if !line.trim().is_empty() => return Err(syntax(lineno, "text outside a block")),
                    _ => buf.push(line),
                }
                continue;
            };
            if directive.starts_with("--") {
                continue;
            }
            flush(&mut t, &block, &mut buf);
            block = Block::None;
            let (word, rest) = directive.split_once(char::is_whitespace).unwrap_or((directive, ""));
            let rest = rest.trim();
            match word {
                "extends" => {
                    if depth > 8 {
                        return Err(syntax(lineno, "@extends nests too deeply"));
                    }
                    let base = resolve(rest).ok_or_else(|| TemplateError::UnknownTemplate(rest.to_string()))?;
                    t = Self::parse_depth(&base, resolve, depth + 1)?;
                }
                "variant" => {
                    if rest.is_empty() {
                        return Err(syntax(lineno, "@variant needs a name"));
                    }
                    t.variant_id = rest.to_string();
                }
                "order" => {
                    let order = rest
                        .split_whitespace()
                        .map(|s| SectionId::parse(s).ok_or_else(|| syntax(lineno, format!("unknown section `{s}`"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    check_order(&order)?;
                    t.section_order = order;
                }
                "optional" => {
                    for s in rest.split_whitespace() {
                        let id = SectionId::parse(s).ok_or_else(|| syntax(lineno, format!("unknown section `{s}`")))?;
                        t.optional.insert(id);
                    }
                }
                "memory" => {
                    t.memory_window = rest.parse().map_err(|_| syntax(lineno, "@memory needs a count"))?;
                }
                "settings" => {
                    t.settings_style = SettingsStyle::parse(rest).ok_or_else(|| syntax(lineno, format!("unknown settings style `{rest}`")))?;
                }
                "section" => {
                    let id = SectionId::parse(rest).ok_or_else(|| syntax(lineno, format!("unknown section `{rest}`")))?;
                    block = Block::Section(id);
                }
                "when" => {
                    let (pred, target) = rest.split_once("->").ok_or_else(|| syntax(lineno, "@when needs `-> Section`"))?;
                    let target = target.trim();
                    let (target, style) = match target.split_once('[') {
                        Some((sec, tag)) => {
                            let tag = tag.trim_end_matches(']').trim();
                            let style = SettingsStyle::parse(tag).ok_or_else(|| syntax(lineno, format!("unknown style `{tag}`")))?;
                            (sec.trim(), Some(style))
                        }
                        None => (target, None),
                    };
                    let section = SectionId::parse(target).ok_or_else(|| syntax(lineno, format!("unknown section `{target}`")))?;
                    let predicate = Predicate::parse(pred).map_err(|m| syntax(lineno, m))?;
                    t.conditionals.push(ConditionalRule { predicate, section, text: String::new(), style });
                    block = Block::When(t.conditionals.len() - 1);
                }
                other => return Err(syntax(lineno, format!("unknown directive @{other}"))),
            }
        }
        flush(&mut t, &block, &mut buf);
        if t.variant_id.is_empty() {
            return Err(TemplateError::MissingVariant);
        }
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<(), TemplateError> {
        check_order(&self.section_order)?;
        for id in &self.section_order {
            let text = self.static_texts.get(id).ok_or(TemplateError::MissingSectionText(*id))?;
            check_placeholders(text, id.name())?;
        }
        for c in &self.conditionals {
            check_placeholders(&c.text, c.section.name())?;
        }
        Ok(())
    }

    /// Sections that exist but are left out of the order.
    pub fn disabled(&self) -> Vec<SectionId> {
        SectionId::ALL.into_iter().filter(|s| !self.section_order.contains(s)).collect()
    }

    /// Conditional lines active for these sliders under this template's style.
    pub fn active_conditionals<'a>(&'a self, sliders: &'a SliderConfig) -> impl Iterator<Item = &'a ConditionalRule> + 'a {
        self.conditionals.iter().filter(move |c| c.style.is_none_or(|s| s == self.settings_style) && c.predicate.holds(sliders))
    }

    pub fn with_settings_style(&self, style: SettingsStyle) -> BriefTemplate {
        let mut t = self.clone();
        if style != self.settings_style {
            t.settings_style = style;
            t.variant_id = format!("{}+{}", self.variant_id, style.name());
        }
        t
    }

    pub fn with_variant_id(mut self, id: impl Into<String>) -> BriefTemplate {
        self.variant_id = id.into();
        self
    }

    /// SHA-256 over the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("template serializes")))
    }
}

fn builtin_text(name: &str) -> Option<&'static str> {
    match name {
        "default" => Some(DEFAULT_TPL),
        "floors" => Some(FLOORS_TPL),
        "fee-late" => Some(FEE_LATE_TPL),
        _ => None,
    }
}

fn check_order(order: &[SectionId]) -> Result<(), TemplateError> {
    let mut seen = BTreeSet::new();
    for id in order {
        if !seen.insert(*id) {
            return Err(TemplateError::InvalidPermutation(format!("{id} appears twice")));
        }
    }
    if order.is_empty() {
        return Err(TemplateError::InvalidPermutation("no sections".into()));
    }
    Ok(())
}

fn check_placeholders(text: &str, section: &str) -> Result<(), TemplateError> {
    let mut rest = text;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let Some(close) = after.find("}}") else { break };
        let name = after[..close].trim();
        if name != "data" && name != "conditionals" && !PLACEHOLDERS.contains(&name) {
            return Err(TemplateError::UnknownPlaceholder(name.to_string(), section.to_string()));
        }
        rest = &after[close + 2..];
    }
    Ok(())
}

/// Reorders sections, keeping prose and conditionals. The new order must
/// contain exactly the sections of the current one.
pub fn permute_sections(template: &BriefTemplate, new_order: &[SectionId]) -> Result<BriefTemplate, TemplateError> {
    check_order(new_order)?;
    let old: BTreeSet<_> = template.section_order.iter().collect();
    let new: BTreeSet<_> = new_order.iter().collect();
    if old != new {
        return Err(TemplateError::InvalidPermutation("order must contain exactly the template's sections".into()));
    }
    let mut t = template.clone();
    if new_order != template.section_order.as_slice() {
        let code: String = new_order.iter().map(|s| char::from_digit(s.index() as u32, 16).expect("< 16")).collect();
        t.variant_id = format!("{}~{}", template.variant_id, code);
        t.section_order = new_order.to_vec();
    }
    Ok(t)
}

/// Moves one section to a 1-based position.
pub fn move_section(template: &BriefTemplate, section: SectionId, position: usize) -> Result<BriefTemplate, TemplateError> {
    let mut order: Vec<SectionId> = template.section_order.iter().copied().filter(|s| *s != section).collect();
    if order.len() == template.section_order.len() {
        return Err(TemplateError::InvalidPermutation(format!("{section} is not in the order")));
    }
    if position == 0 || position > template.section_order.len() {
        return Err(TemplateError::InvalidPermutation(format!("position {position} out of range")));
    }
    order.insert(position - 1, section);
    permute_sections(template, &order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        let d = BriefTemplate::default_template();
        assert_eq!(d.variant_id, "default");
        assert_eq!(d.section_order, SectionId::ALL.to_vec());
        assert_eq!(d.memory_window, 20);
        assert!(d.optional.contains(&SectionId::ReapContext));
        let f = BriefTemplate::builtin("floors").unwrap();
        assert_eq!(f.settings_style, SettingsStyle::Floors);
        assert_eq!(f.static_texts, d.static_texts);
        let late = BriefTemplate::builtin("fee-late").unwrap();
        assert_eq!(late.section_order.iter().position(|s| *s == SectionId::OperatingRules), Some(7));
    }

    #[test]
    fn predicate_language() {
        let p = Predicate::parse("TA >= 4 ∧ HS ≥ 4").unwrap();
        assert_eq!(p.to_string(), "TA >= 4 && HS >= 4");
        let s = SliderConfig { trading_activity: 4, holding_style: 4, ..Default::default() };
        assert!(p.holds(&s));
        assert!(!p.holds(&SliderConfig { holding_style: 3, ..s }));
        assert!(Predicate::parse("XYZ >= 1").is_err());
        assert!(Predicate::parse("TA 4").is_err());
        assert!(Predicate::parse("asset_risk_preference <= 2").unwrap().holds(&SliderConfig { asset_risk_preference: 1, ..s }));
    }

    #[test]
    fn permutations() {
        let d = BriefTemplate::default_template();
        let same = permute_sections(&d, &d.section_order).unwrap();
        assert_eq!(same, d);
        let mut dup = d.section_order.clone();
        dup[1] = dup[0];
        assert!(matches!(permute_sections(&d, &dup), Err(TemplateError::InvalidPermutation(_))));
        let moved = move_section(&d, SectionId::OperatingRules, 8).unwrap();
        assert_eq!(moved.section_order[7], SectionId::OperatingRules);
        assert_ne!(moved.variant_id, d.variant_id);
        assert_eq!(moved.static_texts, d.static_texts);
        assert_eq!(moved.conditionals, d.conditionals);
    }

    #[test]
    fn syntax_errors() {
        let none = |_: &str| None;
        assert!(matches!(BriefTemplate::parse("hello", &none), Err(TemplateError::Syntax { line: 1, .. })));
        assert!(matches!(BriefTemplate::parse("@bogus", &none), Err(TemplateError::Syntax { .. })));
        assert_eq!(BriefTemplate::parse("@order SystemRules\n@section SystemRules\nx", &none), Err(TemplateError::MissingVariant));
        let missing = "@variant v\n@order SystemRules CurrentState\n@section SystemRules\nx";
        assert_eq!(BriefTemplate::parse(missing, &none), Err(TemplateError::MissingSectionText(SectionId::CurrentState)));
        let bad_ph = "@variant v\n@order SystemRules\n@section SystemRules\n{{nope}}";
        assert!(matches!(BriefTemplate::parse(bad_ph, &none), Err(TemplateError::UnknownPlaceholder(..))));
        let ok = "@variant v\n@order SystemRules\n@section SystemRules\nhi {{fee_pct}}\n@when TA >= 2 -> SystemRules [floors]\nx";
        let t = BriefTemplate::parse(ok, &none).unwrap();
        assert_eq!(t.conditionals[0].style, Some(SettingsStyle::Floors));
        assert_eq!(t.disabled().len(), 11);
    }

    #[test]
    fn load_from_disk_with_extends() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("mine.tpl"), "@extends default\n@variant mine\n@memory 5\n").unwrap();
        let t = BriefTemplate::resolve(dir.path().join("mine.tpl").to_str().unwrap()).unwrap();
        assert_eq!(t.variant_id, "mine");
        assert_eq!(t.memory_window, 5);
        assert!(matches!(BriefTemplate::resolve("/nonexistent/x.tpl"), Err(TemplateError::Io { .. })));
    }
}
