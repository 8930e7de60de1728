//! The one-line action format shared by every agent.
//!
//! `{"action":"buy","token":"FEET","fraction":0.25,"strategy":"strategy1","reason":["momentum"]}`
//!
//! Unquoted keys are tolerated. Anything but exactly one object is an
//! error: parse errors are harness failures and are counted apart from
//! guard rejections.

use serde::Serialize;
use serde_json::Value;

use super::{ReasonTag, ToolCall};
use crate::market::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseCause {
    #[error("empty response")]
    Empty,
    #[error("malformed: {0}")]
    Malformed(String),
    #[error("multiple actions in one response")]
    MultipleActions,
    #[error("action is not an object")]
    NotAnObject,
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("field `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("unknown reason tag `{0}`")]
    UnknownReasonTag(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at byte {position}: {cause}")]
pub struct ParseError {
    /// Byte offset into the raw response.
    pub position: usize,
    pub cause: ParseCause,
}

impl ParseCause {
    /// Stable snake_case name of the cause, for exports.
    pub fn kind(&self) -> &'static str {
        match self {
            ParseCause::Empty => "empty",
            ParseCause::Malformed(_) => "malformed",
            ParseCause::MultipleActions => "multiple_actions",
            ParseCause::NotAnObject => "not_an_object",
            ParseCause::MissingField(_) => "missing_field",
            ParseCause::UnknownAction(_) => "unknown_action",
            ParseCause::InvalidField { .. } => "invalid_field",
            ParseCause::UnknownReasonTag(_) => "unknown_reason_tag",
        }
    }
}

impl ParseError {
    fn at(position: usize, cause: ParseCause) -> Self {
        ParseError { position, cause }
    }
}

/// Quotes bare object keys; returns the rewritten text and, for every
/// output byte, the input byte it came from.
fn quote_bare_keys(raw: &str) -> (String, Vec<usize>) {
    let bytes = raw.as_bytes();
    let mut out = String::with_capacity(raw.len() + 16);
    let mut map = Vec::with_capacity(raw.len() + 16);
    let mut in_string = false;
    let mut escaped = false;
    let mut last_sig = b' ';
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if in_string {
            if escaped {
                escaped = false;
            } else if c == b'\\' {
                escaped = true;
            } else if c == b'"' {
                in_string = false;
            }
        } else if c == b'"' {
            in_string = true;
        } else if (c.is_ascii_alphabetic() || c == b'_') && (last_sig == b'{' || last_sig == b',') {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let mut j = i;
            while j < bytes.len() && bytes[j].is_ascii_whitespace() {
                j += 1;
            }
            let ident = &raw[start..i];
            if j < bytes.len() && bytes[j] == b':' {
                out.push('"');
                map.push(start);
                out.push_str(ident);
                map.extend(start..i);
                out.push('"');
                map.push(i);
            } else {
                out.push_str(ident);
                map.extend(start..i);
            }
            last_sig = b'a';
            continue;
        }
        if !c.is_ascii_whitespace() {
            last_sig = c;
        }
        // copy one UTF-8 scalar
        let len = raw[i..].chars().next().map_or(1, char::len_utf8);
        out.push_str(&raw[i..i + len]);
        map.extend(std::iter::repeat_n(i, len));
        i += len;
    }
    (out, map)
}

/// Byte offset for a serde_json (line, column) pair.
fn offset_of(text: &str, line: usize, column: usize) -> usize {
    let mut off = 0;
    for (n, l) in text.split_inclusive('\n').enumerate() {
        if n + 1 == line {
            return off + column.saturating_sub(1).min(l.len());
        }
        off += l.len();
    }
    text.len()
}

fn field_f64(obj: &serde_json::Map<String, Value>, field: &'static str, pos: usize) -> Result<f64, ParseError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(ParseError::at(pos, ParseCause::MissingField(field))),
        Some(Value::Number(n)) => {
            n.as_f64().filter(|v| v.is_finite()).ok_or_else(|| ParseError::at(pos, ParseCause::InvalidField { field, reason: "not a finite number".into() }))
        }
        // some agents quote numbers
        Some(Value::String(s)) => s
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| ParseError::at(pos, ParseCause::InvalidField { field, reason: format!("`{s}` is not a number") })),
        Some(other) => Err(ParseError::at(pos, ParseCause::InvalidField { field, reason: format!("expected number, got {other}") })),
    }
}

fn field_str<'a>(obj: &'a serde_json::Map<String, Value>, field: &'static str, pos: usize) -> Result<Option<&'a str>, ParseError> {
    match obj.get(field) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.as_str())),
        Some(other) => Err(ParseError::at(pos, ParseCause::InvalidField { field, reason: format!("expected string, got {other}") })),
    }
}

fn reasons(obj: &serde_json::Map<String, Value>, pos: usize) -> Result<Vec<ReasonTag>, ParseError> {
    let names: Vec<&str> = match obj.get("reason").or_else(|| obj.get("reasons")) {
        None | Some(Value::Null) => return Ok(Vec::new()),
        Some(Value::String(s)) => vec![s.as_str()],
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| v.as_str().ok_or_else(|| ParseError::at(pos, ParseCause::InvalidField { field: "reason", reason: "tags must be strings".into() })))
            .collect::<Result<_, _>>()?,
        Some(other) => return Err(ParseError::at(pos, ParseCause::InvalidField { field: "reason", reason: format!("expected tag or list, got {other}") })),
    };
    names.into_iter().map(|n| ReasonTag::parse(n.trim()).ok_or_else(|| ParseError::at(pos, ParseCause::UnknownReasonTag(n.to_string())))).collect()
}

pub fn parse_tool_call(raw: &str) -> Result<ToolCall, ParseError> {
    let start = raw.len() - raw.trim_start().len();
    if raw.trim().is_empty() {
        return Err(ParseError::at(0, ParseCause::Empty));
    }
    let (text, map) = quote_bare_keys(raw);
    let orig = |i: usize| map.get(i).copied().unwrap_or(raw.len());
    let mut stream = serde_json::Deserializer::from_str(&text).into_iter::<Value>();
    let first = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => return Err(ParseError::at(orig(offset_of(&text, e.line(), e.column())), ParseCause::Malformed(e.to_string()))),
        None => return Err(ParseError::at(0, ParseCause::Empty)),
    };
    let after_first = stream.byte_offset();
    match stream.next() {
        None => {}
        Some(Ok(_)) => return Err(ParseError::at(orig(after_first), ParseCause::MultipleActions)),
        Some(Err(e)) => return Err(ParseError::at(orig(offset_of(&text, e.line(), e.column())), ParseCause::Malformed(e.to_string()))),
    }
    let Value::Object(obj) = first else {
        return Err(ParseError::at(start, ParseCause::NotAnObject));
    };
    let action = field_str(&obj, "action", start)?.ok_or(ParseError::at(start, ParseCause::MissingField("action")))?;
    let note = field_str(&obj, "note", start)?.map(str::to_string);
    let reasons = reasons(&obj, start)?;
    match action.trim().to_ascii_lowercase().as_str() {
        "observe" | "record_observation" => Ok(ToolCall::Observe { reasons, note }),
        kind @ ("buy" | "sell" | "buy_token" | "sell_token") => {
            let token = field_str(&obj, "token", start)?
                .map(|t| t.trim().trim_start_matches('$'))
                .filter(|t| !t.is_empty())
                .ok_or(ParseError::at(start, ParseCause::MissingField("token")))?;
            let fraction = field_f64(&obj, "fraction", start)?;
            let strategy = field_str(&obj, "strategy", start)?.map(str::to_string);
            let token = TokenId::new(token);
            Ok(if kind.starts_with("buy") {
                ToolCall::Buy { token, fraction, strategy, reasons, note }
            } else {
                ToolCall::Sell { token, fraction, strategy, reasons, note }
            })
        }
        other => Err(ParseError::at(start, ParseCause::UnknownAction(other.to_string()))),
    }
}

#[derive(Serialize)]
struct WireCall<'a> {
    action: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    token: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<&'a str>,
    reason: Vec<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<&'a str>,
}

/// Canonical one-line encoding; `parse_tool_call` inverts it exactly.
pub fn format_tool_call(call: &ToolCall) -> String {
    let (action, note) = match call {
        ToolCall::Buy { note, .. } => ("buy", note),
        ToolCall::Sell { note, .. } => ("sell", note),
        ToolCall::Observe { note, .. } => ("observe", note),
    };
    let wire = WireCall {
        action,
        token: call.token().map(TokenId::as_str),
        fraction: call.fraction(),
        strategy: call.strategy(),
        reason: call.reasons().iter().map(|r| r.as_str()).collect(),
        note: note.as_deref(),
    };
    serde_json::to_string(&wire).expect("wire call serializes")
}
