//! `vaultsim` command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid input. Failures
//! print one JSON error object on stderr. `VAULTSIM_VERBOSE=1` adds
//! progress lines on stderr; nothing else is read from the environment.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use vaultsim::analytics::{
    detect_sell_cascades, report, slider_gradient_report, trades_from_trace, AnalyticsError, MetricReport, MetricRow, CASCADE_MIN_VAULTS, CASCADE_WINDOW_MS,
    METRICS,
};
use vaultsim::mandate::Slider;
use vaultsim::market::TradeSide;
use vaultsim::plot;
use vaultsim::policy::adapter::read_request;
use vaultsim::replay::{self, ReplayError, SweepSpec};
use vaultsim::scenario::{RunOptions, Scenario, ScenarioError};
use vaultsim::trace::{TraceError, TraceStore};
use vaultsim::{SECONDS_PER_TICK, TICKS_PER_DAY};

#[derive(Parser)]
#[command(name = "vaultsim", version, about = "Deterministic agent vault simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and write its trace export.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ticks: Option<u64>,
        /// Builtin template name or template file; overrides the scenario.
        #[arg(long)]
        template: Option<String>,
        /// Store brief hashes only, no brief texts.
        #[arg(long)]
        hashes_only: bool,
    },
    /// Run a scenario at several levels of one slider and report the gradient.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        slider: String,
        /// `1..5` or a comma list.
        #[arg(long, default_value = "1..5")]
        levels: String,
        #[arg(long, default_value_t = 60)]
        samples: u32,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        ticks: Option<u64>,
        #[arg(long)]
        template: Option<String>,
        /// Directory for gradient.csv, samples.csv and gradient.svg.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the world a trace describes.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        /// Require a byte-identical regenerated export.
        #[arg(long)]
        verify: bool,
        /// Re-run under another template and print metric deltas.
        #[arg(long)]
        template: Option<String>,
    },
    /// Compute metric tables from a trace export.
    Report {
        #[arg(long)]
        trace: PathBuf,
        /// Comma-separated metric names.
        #[arg(long, default_value = "taxonomy")]
        metrics: String,
        /// Directory for SVG charts.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
    /// Minimal external agent for adapter tests: always observes.
    #[command(hide = true)]
    StubAgent {
        /// Never answer, to exercise timeouts.
        #[arg(long)]
        silent: bool,
    },
}

struct Failure {
    code: u8,
    body: Value,
}

impl Failure {
    fn input(kind: &str, message: impl ToString) -> Failure {
        Failure { code: 2, body: json!({ "error": kind, "message": message.to_string() }) }
    }

    fn runtime(kind: &str, message: impl ToString) -> Failure {
        Failure { code: 1, body: json!({ "error": kind, "message": message.to_string() }) }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Failure {
        let kind = match e {
            ScenarioError::Io { .. } => "ScenarioUnreadable",
            ScenarioError::Parse(_) => "ScenarioParse",
            ScenarioError::Format { .. } => "ScenarioFormat",
            ScenarioError::Invalid(_) => "InvalidScenario",
            ScenarioError::Template(_) => "Template",
        };
        Failure::input(kind, e)
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Failure {
        let mut body = json!({ "error": "Trace", "message": e.to_string() });
        if let TraceError::CorruptLine { line, .. } = &e {
            body["error"] = "CorruptLine".into();
            body["line"] = (*line).into();
        }
        Failure { code: 2, body }
    }
}

impl From<AnalyticsError> for Failure {
    fn from(e: AnalyticsError) -> Failure {
        match &e {
            AnalyticsError::UnknownMetric { name } => {
                Failure { code: 2, body: json!({ "error": "UnknownMetric", "message": e.to_string(), "metric": name, "valid": METRICS }) }
            }
            AnalyticsError::InsufficientCohorts { slider, found } => {
                Failure { code: 2, body: json!({ "error": "InsufficientCohorts", "message": e.to_string(), "slider": slider, "levels": found }) }
            }
        }
    }
}

impl From<ReplayError> for Failure {
    fn from(e: ReplayError) -> Failure {
        match e {
            ReplayError::Scenario(s) => s.into(),
            ReplayError::Trace(t) => t.into(),
            ReplayError::MissingScenario => Failure::input("MissingScenario", &e),
            ReplayError::VerificationMismatch { line, invocation_id, ref detail } => Failure {
                code: 1,
                body: json!({
                    "error": "VerificationMismatch",
                    "message": e.to_string(),
                    "line": line,
                    "invocation_id": invocation_id.map(|i| i.to_string()),
                    "detail": detail,
                }),
            },
        }
    }
}

fn verbose() -> bool {
    std::env::var("VAULTSIM_VERBOSE").is_ok_and(|v| !v.is_empty() && v != "0")
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::runtime("Io", format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::runtime("Io", format!("{}: {e}", dir.display())))
}

// a closed stdout (e.g. piped into `head`) is not a failure
fn emit(text: &str) {
    let mut o = std::io::stdout().lock();
    let _ = o.write_all(text.as_bytes()).and_then(|_| o.flush());
}

fn print_json(v: &Value) {
    emit(&(serde_json::to_string_pretty(v).expect("JSON value") + "\n"));
}

fn parse_levels(s: &str) -> Result<Vec<u8>, Failure> {
    let bad = || Failure::input("InvalidLevels", format!("levels {s:?} must be `a..b` or a comma list within 1..5"));
    let levels: Vec<u8> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u8, u8) = (a.trim().parse().map_err(|_| bad())?, b.trim().trim_start_matches('=').parse().map_err(|_| bad())?);
        (a..=b).collect()
    } else {
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    };
    let unique: BTreeSet<u8> = levels.iter().copied().collect();
    if levels.is_empty() || unique.len() != levels.len() || levels.iter().any(|l| !(1..=5).contains(l)) {
        return Err(bad());
    }
    Ok(levels)
}

fn run(scenario: &Path, seed: Option<u64>, out: &Path, ticks: Option<u64>, template: Option<String>, hashes_only: bool) -> Result<(), Failure> {
    let s = Scenario::load(scenario)?;
    let opts = RunOptions { seed, ticks, template, sequential: false, hashes_only };
    let mut world = s.build(&opts)?;
    let n = world.trace.meta.ticks;
    let loud = verbose();
    world.run_with_progress(n, |t, c| {
        if loud && (t % TICKS_PER_DAY == 0 || t == n) {
            eprintln!("tick {t}/{n}: {} invocations, {} settled, {} rejected", c.invocations, c.settled, c.rejections);
        }
    });
    if !world.violations.is_empty() {
        return Err(Failure { code: 1, body: json!({ "error": "InvariantViolation", "message": world.violations[0], "count": world.violations.len() }) });
    }
    create_dir(out)?;
    let trace_path = world.trace.export_dir(out).map_err(|e| Failure::runtime("Io", e))?;
    let manifest = serde_json::to_string_pretty(&world.trace.manifest()).expect("manifest serializes");
    write_file(&out.join("manifest.json"), &(manifest + "\n"))?;
    let taxonomy = report(&world.trace, "taxonomy")?;
    write_file(&out.join("summary.csv"), &taxonomy.to_csv())?;
    print_json(&json!({
        "trace": trace_path.display().to_string(),
        "seed": world.trace.meta.seed.to_string(),
        "ticks": n,
        "records": world.trace.len(),
        "events": world.trace.events().len(),
        "counters": world.counters,
        "sha256": replay::export_digest(&world.trace),
    }));
    Ok(())
}

fn sweep(
    scenario: &Path,
    slider: &str,
    levels: &str,
    samples: u32,
    seed: Option<u64>,
    ticks: Option<u64>,
    template: Option<String>,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let slider = Slider::parse(slider).ok_or_else(|| Failure::input("UnknownSlider", format!("unknown slider {slider:?}; valid: TA, ARP, TS, HS, DIV")))?;
    let levels = parse_levels(levels)?;
    if samples == 0 {
        return Err(Failure::input("InvalidSamples", "samples must be at least 1"));
    }
    let s = Scenario::load(scenario)?;
    s.validate()?;
    let spec = SweepSpec { slider, levels, samples, seed: seed.unwrap_or(s.seed) };
    let opts = RunOptions { ticks, template, ..RunOptions::default() };
    let result = replay::sweep(&s, &spec, &opts)?;
    let g = result.report?;
    let mut rep = MetricReport { metric: "gradient".into(), rows: Vec::new() };
    for l in &g.levels {
        rep.rows.push(MetricRow {
            scope: format!("{}={}", slider.short(), l.level),
            key: g.metric.into(),
            window: "sweep".into(),
            value: format!("{:.6}", l.mean),
            samples: l.samples as u64,
        });
    }
    rep.rows.push(MetricRow {
        scope: slider.short().into(),
        key: "verdict".into(),
        window: "adjacent levels".into(),
        value: g.verdict.as_str().into(),
        samples: g.levels.len() as u64,
    });
    emit(&rep.to_csv());
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("gradient.csv"), &rep.to_csv())?;
        write_file(&dir.join("gradient.svg"), &plot::gradient_svg(&g))?;
        let mut csv = String::from("level,sample,seed,value\n");
        for x in &result.samples {
            let v = x.value(slider).map_or_else(|| "undefined".into(), |v| format!("{v:.6}"));
            csv.push_str(&format!("{},{},{},{v}\n", x.level, x.sample, x.seed));
        }
        write_file(&dir.join("samples.csv"), &csv)?;
    }
    Ok(())
}

fn replay_cmd(trace: &Path, verify: bool, template: Option<String>) -> Result<(), Failure> {
    let path = if trace.is_dir() { trace.join(vaultsim::trace::TRACE_FILE) } else { trace.to_path_buf() };
    let open = || File::open(&path).map_err(|e| Failure::input("TraceUnreadable", format!("{}: {e}", path.display())));
    if !verify && template.is_none() {
        return Err(Failure::input("NothingToDo", "pass --verify, --template or both"));
    }
    let opts = RunOptions::default();
    let mut out = json!({});
    if verify {
        let r = replay::verify(BufReader::new(open()?), &opts)?;
        out["verify"] = json!({ "ok": true, "records": r.records, "events": r.events, "sha256": r.sha256 });
    }
    if let Some(t) = template {
        let base = TraceStore::import(BufReader::new(open()?))?;
        let cmp = replay::replay_with_template(&base, &t, &opts)?;
        out["template"] = json!({
            "base_variant": cmp.base_variant,
            "variant": cmp.variant,
            "records": cmp.records,
            "brief_hash_divergence": cmp.divergence_rate(),
            "structure_equality": cmp.structure_equality_rate(),
            "deltas": cmp.deltas,
        });
    }
    print_json(&out);
    Ok(())
}

fn report_cmd(trace: &Path, metrics: &str, plots: Option<&Path>) -> Result<(), Failure> {
    let names: Vec<&str> = metrics.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if let Some(bad) = names.iter().find(|n| !METRICS.contains(n)) {
        return Err(AnalyticsError::UnknownMetric { name: bad.to_string() }.into());
    }
    let store = TraceStore::import_path(trace)?;
    let mut first = true;
    for name in &names {
        let csv = report(&store, name)?.to_csv();
        // one header for the whole table
        emit(if first { &csv[..] } else { csv.split_once('\n').map_or("", |x| x.1) });
        first = false;
    }
    if let Some(dir) = plots {
        create_dir(dir)?;
        for slider in Slider::ALL {
            if let Ok(g) = slider_gradient_report(&store, slider) {
                write_file(&dir.join(format!("gradient_{}.svg", slider.short())), &plot::gradient_svg(&g))?;
            }
        }
        let trades = trades_from_trace(&store);
        let cascades = detect_sell_cascades(&trades, CASCADE_MIN_VAULTS, CASCADE_WINDOW_MS);
        let mut tokens: BTreeSet<&str> = cascades.iter().map(|c| c.token.as_str()).collect();
        if tokens.is_empty() {
            // chart the most-sold token so a run without cascades still has a picture
            let mut counts = std::collections::BTreeMap::<&str, usize>::new();
            for t in trades.iter().filter(|t| t.side == TradeSide::Sell) {
                *counts.entry(t.token.as_str()).or_default() += 1;
            }
            if let Some((tok, _)) = counts.into_iter().max_by_key(|(tok, n)| (*n, std::cmp::Reverse(*tok))) {
                tokens.insert(tok);
            }
        }
        for tok in tokens {
            let svg = plot::cascade_svg(tok, &trades, &cascades, SECONDS_PER_TICK * 1000);
            write_file(&dir.join(format!("cascades_{tok}.svg")), &svg)?;
        }
    }
    Ok(())
}

fn stub_agent(silent: bool) -> Result<(), Failure> {
    let stdin = std::io::stdin();
    let mut input = stdin.lock();
    let mut stdout = std::io::stdout();
    while let Some((_text, _sidecar)) = read_request(&mut input).map_err(|e| Failure::input("BadRequest", e))? {
        if silent {
            continue;
        }
        writeln!(stdout, r#"{{"action":"observe","reason":["hold_rule"],"note":"stub"}}"#)
            .and_then(|_| stdout.flush())
            .map_err(|e| Failure::runtime("Io", e))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { scenario, seed, out, ticks, template, hashes_only } => run(&scenario, seed, &out, ticks, template, hashes_only),
        Cmd::Sweep { scenario, slider, levels, samples, seed, ticks, template, out } => {
            sweep(&scenario, &slider, &levels, samples, seed, ticks, template, out.as_deref())
        }
        Cmd::Replay { trace, verify, template } => replay_cmd(&trace, verify, template),
        Cmd::Report { trace, metrics, plots } => report_cmd(&trace, &metrics, plots.as_deref()),
        Cmd::StubAgent { silent } => stub_agent(silent),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.body);
            ExitCode::from(f.code)
        }
    }
}
