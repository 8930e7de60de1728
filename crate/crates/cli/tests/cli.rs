use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_vaultsim");

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn vaultsim(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&o.stderr)))
}

/// Cadence traders buying at tick 0 and selling everything at tick 1.
fn cadence_scenario(dir: &Path, ticks: u64) -> PathBuf {
    let text = format!(
        r#"
format = "vaultsim-scenario/1"
ticks = {ticks}
seed = 3

[[tokens]]
symbol = "AAA"
eth_reserve = "50"

[[vaults]]
count = 12
funding = "1"
policy = {{ kind = "cadence_trader", k = 1 }}
"#
    );
    let path = dir.join(format!("cadence_{ticks}.toml"));
    fs::write(&path, text).unwrap();
    path
}

fn run_to(scenario: &Path, out: &Path) -> Value {
    stdout_json(&vaultsim(&["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]))
}

#[test]
fn run_writes_trace_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let minimal = scenarios().join("minimal.toml");
    let a = run_to(&minimal, &dir.path().join("a"));
    let b = run_to(&minimal, &dir.path().join("b"));
    assert_eq!(a["records"], 10);
    assert_eq!(a["sha256"], b["sha256"]);
    let ta = fs::read(dir.path().join("a/trace.ndjson")).unwrap();
    assert_eq!(ta, fs::read(dir.path().join("b/trace.ndjson")).unwrap());
    for f in ["briefs.ndjson", "manifest.json", "summary.csv"] {
        assert!(dir.path().join("a").join(f).exists(), "{f} missing");
    }
}

#[test]
fn missing_scenario_is_an_input_error() {
    let o = vaultsim(&["run", "--scenario", "/nonexistent/x.toml", "--out", "/tmp/never"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "ScenarioUnreadable");
}

#[test]
fn unknown_metric_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    run_to(&scenarios().join("minimal.toml"), dir.path());
    let o = vaultsim(&["report", "--trace", dir.path().to_str().unwrap(), "--metrics", "taxonomy,vibes"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "UnknownMetric");
    assert!(err["valid"].as_array().unwrap().iter().any(|v| v == "two_sided"));
}

#[test]
fn replay_verify_passes_and_reports_an_edited_record() {
    let dir = tempfile::tempdir().unwrap();
    run_to(&scenarios().join("minimal.toml"), dir.path());
    let trace = dir.path().join("trace.ndjson");
    let ok = stdout_json(&vaultsim(&["replay", "--trace", trace.to_str().unwrap(), "--verify"]));
    assert_eq!(ok["verify"]["ok"], true);

    let text = fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    lines[4] = lines[4].replacen(r#""round":0"#, r#""round":9"#, 1);
    let edited = dir.path().join("edited.ndjson");
    fs::write(&edited, lines.join("\n") + "\n").unwrap();
    let o = vaultsim(&["replay", "--trace", edited.to_str().unwrap(), "--verify"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr_json(&o);
    assert_eq!(err["error"], "VerificationMismatch");
    assert_eq!(err["line"], 5);
    assert_eq!(err["invocation_id"], "3");
}

#[test]
fn replay_without_a_mode_does_nothing() {
    let o = vaultsim(&["replay", "--trace", "/tmp"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "NothingToDo");
}

#[test]
fn single_level_sweep_has_insufficient_cohorts() {
    let o = vaultsim(&["sweep", "--scenario", scenarios().join("minimal.toml").to_str().unwrap(), "--slider", "TA", "--levels", "3", "--samples", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "InsufficientCohorts");
}

#[test]
fn sweep_prints_a_gradient_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = vaultsim(&[
        "sweep",
        "--scenario",
        scenarios().join("minimal.toml").to_str().unwrap(),
        "--slider",
        "TS",
        "--samples",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.lines().count() >= 6, "{table}");
    for f in ["gradient.csv", "gradient.svg", "samples.csv"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

fn metric(dir: &Path, name: &str) -> Vec<Vec<String>> {
    let o = vaultsim(&["report", "--trace", dir.to_str().unwrap(), "--metrics", name]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap().lines().skip(1).map(fields).collect()
}

/// Splits one CSV line, honouring double-quoted fields.
fn fields(line: &str) -> Vec<String> {
    let (mut out, mut cur, mut quoted) = (Vec::new(), String::new(), false);
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' if quoted && chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            '"' => quoted = !quoted,
            ',' if !quoted => out.push(std::mem::take(&mut cur)),
            c => cur.push(c),
        }
    }
    out.push(cur);
    out
}

#[test]
fn buys_only_trace_is_never_two_sided() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_to(&cadence_scenario(dir.path(), 1), &out);
    let rows = metric(&out, "two_sided");
    assert_eq!(rows[0][4], "0.000000");
    assert_eq!(rows[0][5], "12");
}

#[test]
fn twelve_simultaneous_sellers_are_one_cascade() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    run_to(&cadence_scenario(dir.path(), 2), &out);
    let rows = metric(&out, "cascades");
    assert_eq!(rows[0][2], "events");
    assert_eq!(rows[0][4], "1");
    assert!(rows[1][4].starts_with("vaults=12"), "{rows:?}");
    let plots = dir.path().join("plots");
    let o = vaultsim(&["report", "--trace", out.to_str().unwrap(), "--metrics", "taxonomy", "--plots", plots.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(plots.join("cascades_AAA.svg").exists());
}

#[test]
fn external_agent_answers_through_the_adapter() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("external.toml");
    let text = format!(
        r#"
format = "vaultsim-scenario/1"
ticks = 3

[[tokens]]
symbol = "AAA"
eth_reserve = "10"

[[vaults]]
funding = "1"
policy = {{ kind = "external", command = {BIN:?}, args = ["stub-agent"], timeout_ms = 10000 }}
"#
    );
    fs::write(&scenario, text).unwrap();
    let out = dir.path().join("run");
    let summary = run_to(&scenario, &out);
    assert_eq!(summary["records"], 3);
    assert_eq!(summary["counters"]["parse_errors"], 0);
    let trace = fs::read_to_string(out.join("trace.ndjson")).unwrap();
    assert_eq!(trace.matches(r#"\"note\":\"stub\""#).count(), 3, "{trace}");
}
