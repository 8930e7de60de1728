//! Adapter for external text agents running as a child process.
//!
//! Request, on the child's stdin:
//!
//! ```text
//! BRIEF <text_bytes> <sidecar_bytes>\n
//! <rendered brief text><sidecar JSON>
//! ```
//!
//! The sidecar is the structured brief as JSON. The response is one line on
//! stdout. A child that does not answer within the timeout is killed and
//! respawned, and the invocation records an observation tagged `timeout`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{format_tool_call, DecisionContext, Policy, ReasonTag, ToolCall};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalConfig {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    5_000
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Session {
    fn spawn(cfg: &ExternalConfig) -> std::io::Result<Session> {
        let mut child = Command::new(&cfg.command).args(&cfg.args).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::null()).spawn()?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = child.stdout.take().expect("piped");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Session { child, stdin, lines })
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub struct ExternalAgent {
    cfg: ExternalConfig,
    session: Mutex<Option<Session>>,
}

impl ExternalAgent {
    pub fn new(cfg: ExternalConfig) -> Self {
        ExternalAgent { cfg, session: Mutex::new(None) }
    }

    pub fn config(&self) -> &ExternalConfig {
        &self.cfg
    }

    fn unavailable(why: &str) -> String {
        format_tool_call(&ToolCall::observe(ReasonTag::Timeout).with_note(why))
    }
}

/// The request bytes for one brief.
pub fn encode_request(text: &str, sidecar: &str) -> Vec<u8> {
    let mut out = format!("BRIEF {} {}\n", text.len(), sidecar.len()).into_bytes();
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(sidecar.as_bytes());
    out
}

/// Reads one request from an agent's input; `None` at end of input.
pub fn read_request(input: &mut impl BufRead) -> std::io::Result<Option<(String, String)>> {
    let mut header = String::new();
    if input.read_line(&mut header)? == 0 {
        return Ok(None);
    }
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    let mut parts = header.split_whitespace();
    if parts.next() != Some("BRIEF") {
        return Err(bad("expected BRIEF header"));
    }
    let mut len = || -> std::io::Result<usize> { parts.next().and_then(|p| p.parse().ok()).ok_or_else(|| bad("bad length")) };
    let (text_len, side_len) = (len()?, len()?);
    let mut text = vec![0; text_len];
    input.read_exact(&mut text)?;
    let mut side = vec![0; side_len];
    input.read_exact(&mut side)?;
    let text = String::from_utf8(text).map_err(|_| bad("brief is not UTF-8"))?;
    let side = String::from_utf8(side).map_err(|_| bad("sidecar is not UTF-8"))?;
    Ok(Some((text, side)))
}

impl Policy for ExternalAgent {
    fn name(&self) -> String {
        format!("external({})", self.cfg.command)
    }

    fn respond(&self, ctx: DecisionContext<'_>, _rng: &mut ChaCha8Rng) -> String {
        let sidecar = serde_json::to_string(ctx.brief).expect("brief serializes");
        let request = encode_request(&ctx.rendered.text, &sidecar);
        let mut guard = self.session.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            match Session::spawn(&self.cfg) {
                Ok(s) => *guard = Some(s),
                Err(e) => return Self::unavailable(&format!("agent failed to start: {e}")),
            }
        }
        let session = guard.as_mut().expect("spawned");
        if session.stdin.write_all(&request).and_then(|_| session.stdin.flush()).is_err() {
            guard.take().map(Session::kill);
            return Self::unavailable("agent closed its input");
        }
        match session.lines.recv_timeout(Duration::from_millis(self.cfg.timeout_ms)) {
            Ok(line) => line,
            Err(RecvTimeoutError::Timeout) => {
                guard.take().map(Session::kill);
                Self::unavailable(&format!("no answer within {} ms", self.cfg.timeout_ms))
            }
            Err(RecvTimeoutError::Disconnected) => {
                guard.take().map(Session::kill);
                Self::unavailable("agent exited")
            }
        }
    }
}

impl Drop for ExternalAgent {
    fn drop(&mut self) {
        if let Some(s) = self.session.get_mut().ok().and_then(Option::take) {
            s.kill();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_round_trip() {
        let req = encode_request("héllo\nbrief", "{\"a\":1}");
        let mut input = std::io::Cursor::new(req);
        let (text, side) = read_request(&mut input).unwrap().unwrap();
        assert_eq!(text, "héllo\nbrief");
        assert_eq!(side, "{\"a\":1}");
        assert!(read_request(&mut input).unwrap().is_none());
        assert!(read_request(&mut std::io::Cursor::new(b"NOPE 1 2\n".to_vec())).is_err());
    }
}
