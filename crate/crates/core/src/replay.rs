//! Re-running a world from a trace manifest: byte-level verification,
//! template comparisons and slider sweeps.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analytics::{
    fee_salience_rate, gradient_from_samples, trades_from_trace, two_sided_fraction, vault_metrics, AnalyticsError, GradientReport, VaultMetrics, Windowing,
    TWO_SIDED_WINDOW_MS,
};
use crate::engine::World;
use crate::mandate::Slider;
use crate::rng::sweep_seed;
use crate::scenario::{RunOptions, Scenario, ScenarioError};
use crate::trace::{failure_taxonomy, Manifest, RunMeta, TraceError, TraceStore};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReplayError {
    #[error("trace manifest carries no scenario text")]
    MissingScenario,
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Trace(#[from] TraceError),
    #[error("verification mismatch at line {line}{}: {detail}", invocation_id.map(|i| format!(" (invocation {i})")).unwrap_or_default())]
    VerificationMismatch { line: usize, invocation_id: Option<u64>, detail: String },
}

/// Reads only the manifest line of an export.
pub fn read_manifest(r: &mut impl BufRead) -> Result<Manifest, TraceError> {
    let mut first = String::new();
    r.read_line(&mut first).map_err(|e| TraceError::Io(e.to_string()))?;
    let v: serde_json::Value = serde_json::from_str(first.trim_end()).map_err(|e| TraceError::CorruptLine { line: 1, cause: e.to_string() })?;
    if v.get("type").and_then(|t| t.as_str()) != Some("manifest") {
        return Err(TraceError::MissingManifest);
    }
    serde_json::from_value(v).map_err(|e| TraceError::CorruptLine { line: 1, cause: e.to_string() })
}

/// Rebuilds and runs the world a manifest describes, optionally under
/// another template.
pub fn rerun(meta: &RunMeta, template: Option<&str>, opts: &RunOptions) -> Result<World, ReplayError> {
    let text = meta.scenario.as_deref().ok_or(ReplayError::MissingScenario)?;
    let scenario = Scenario::parse(text)?;
    let opts =
        RunOptions { seed: Some(meta.seed), ticks: Some(meta.ticks), template: template.map(str::to_string).or_else(|| meta.template.clone()), ..opts.clone() };
    Ok(scenario.run(&opts)?)
}

/// Compares written bytes line by line against an existing export whose
/// first line was already consumed, hashing everything written.
struct LineCheck<R> {
    expected: R,
    buf: Vec<u8>,
    line: usize,
    hasher: Sha256,
    mismatch: Option<(usize, String, String)>,
}

impl<R: BufRead> LineCheck<R> {
    fn compare(&mut self, got: &[u8]) {
        self.line += 1;
        if self.line == 1 {
            return;
        }
        let mut want = Vec::new();
        let _ = self.expected.read_until(b'\n', &mut want);
        if want.last() == Some(&b'\n') {
            want.pop();
        }
        if self.mismatch.is_none() && want != got {
            self.mismatch = Some((self.line, String::from_utf8_lossy(&want).into_owned(), String::from_utf8_lossy(got).into_owned()));
        }
    }

    fn finish(mut self) -> (Option<(usize, String, String)>, String) {
        if self.mismatch.is_none() {
            let mut extra = Vec::new();
            if self.expected.read_until(b'\n', &mut extra).unwrap_or(0) > 0 {
                self.mismatch = Some((self.line + 1, String::from_utf8_lossy(&extra).trim_end().to_string(), String::new()));
            }
        }
        (self.mismatch, hex::encode(self.hasher.finalize()))
    }
}

impl<R: BufRead> Write for LineCheck<R> {
    fn write(&mut self, data: &[u8]) -> std::io::Result<usize> {
        self.hasher.update(data);
        for &b in data {
            if b == b'\n' {
                let got = std::mem::take(&mut self.buf);
                self.compare(&got);
            } else {
                self.buf.push(b);
            }
        }
        Ok(data.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn invocation_id_of(line: &str) -> Option<u64> {
    let v: serde_json::Value = serde_json::from_str(line).ok()?;
    (v.get("type")?.as_str()? == "record").then_some(())?;
    v.get("invocation_id")?.as_str()?.parse().ok()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub records: u64,
    pub events: u64,
    pub sha256: String,
}

/// Re-runs from the export's manifest and checks every byte of the
/// regenerated export against it.
pub fn verify(mut export: impl BufRead, opts: &RunOptions) -> Result<VerifyReport, ReplayError> {
    let manifest = read_manifest(&mut export)?;
    let world = rerun(&manifest.meta, None, opts)?;
    if world.trace.manifest() != manifest {
        return Err(ReplayError::VerificationMismatch { line: 1, invocation_id: None, detail: "manifest differs from the replay".into() });
    }
    let mut check = LineCheck { expected: export, buf: Vec::new(), line: 0, hasher: Sha256::new(), mismatch: None };
    world.trace.export(&mut check)?;
    let (mismatch, sha256) = check.finish();
    if let Some((line, want, got)) = mismatch {
        // the regenerated line is authoritative; fall back to the file's
        let invocation_id = invocation_id_of(&got).or_else(|| invocation_id_of(&want));
        let detail = if got.is_empty() { "export has lines the replay did not produce".to_string() } else { "line differs from the replay".to_string() };
        return Err(ReplayError::VerificationMismatch { line, invocation_id, detail });
    }
    Ok(VerifyReport { records: world.trace.len() as u64, events: world.trace.events().len() as u64, sha256 })
}

/// SHA-256 of a store's export, computed without materializing it.
pub fn export_digest(store: &TraceStore) -> String {
    let mut h = HashWriter(Sha256::new());
    store.export(&mut h).expect("hashing cannot fail");
    hex::encode(h.0.finalize())
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, data: &[u8]) -> std::io::Result<usize> {
        self.0.update(data);
        Ok(data.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricDelta {
    pub metric: String,
    pub base: Option<f64>,
    pub variant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemplateComparison {
    pub base_variant: String,
    pub variant: String,
    pub records: u64,
    /// Paired records whose rendered brief hashes differ.
    pub brief_hash_diverged: u64,
    /// Paired records whose structured briefs are equal.
    pub structure_equal: u64,
    pub deltas: Vec<MetricDelta>,
}

impl TemplateComparison {
    pub fn divergence_rate(&self) -> f64 {
        self.brief_hash_diverged as f64 / self.records.max(1) as f64
    }

    pub fn structure_equality_rate(&self) -> f64 {
        self.structure_equal as f64 / self.records.max(1) as f64
    }
}

fn summary_metrics(t: &TraceStore) -> Vec<(&'static str, Option<f64>)> {
    let trades = trades_from_trace(t);
    let tax = failure_taxonomy(t.records());
    let n = t.len().max(1) as f64;
    vec![
        ("trade_rate", Some(t.records().iter().filter(|r| r.is_trade_request()).count() as f64 / n)),
        ("fee_salience", fee_salience_rate(t.records())),
        ("two_sided", two_sided_fraction(&trades, TWO_SIDED_WINDOW_MS, Windowing::Tiled)),
        ("settled", Some(tax.settled as f64)),
        ("rejections", Some(tax.rejections() as f64)),
    ]
}

/// Pairs two runs of one world record by record.
pub fn compare_traces(base: &TraceStore, variant: &TraceStore) -> TemplateComparison {
    let pairs = base.records().iter().zip(variant.records());
    let (mut diverged, mut equal, mut n) = (0, 0, 0);
    for (a, b) in pairs {
        n += 1;
        diverged += (a.brief_hash != b.brief_hash) as u64;
        equal += (a.structure_hash == b.structure_hash) as u64;
    }
    let deltas = summary_metrics(base)
        .into_iter()
        .zip(summary_metrics(variant))
        .map(|((name, x), (_, y))| MetricDelta { metric: name.into(), base: x, variant: y })
        .collect();
    TemplateComparison {
        base_variant: base.meta.template_variant.clone(),
        variant: variant.meta.template_variant.clone(),
        records: n,
        brief_hash_diverged: diverged,
        structure_equal: equal,
        deltas,
    }
}

/// Runs the manifest's world under `template` and pairs it with `base`.
pub fn replay_with_template(base: &TraceStore, template: &str, opts: &RunOptions) -> Result<TemplateComparison, ReplayError> {
    let variant = rerun(&base.meta, Some(template), opts)?;
    Ok(compare_traces(base, &variant.trace))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSample {
    pub level: u8,
    pub sample: u32,
    pub seed: u64,
    pub vaults: Vec<VaultMetrics>,
}

impl SweepSample {
    /// Mean of the slider's metric over vaults where it is defined.
    pub fn value(&self, slider: Slider) -> Option<f64> {
        let xs: Vec<f64> = self.vaults.iter().filter_map(|m| m.value(slider)).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepSpec {
    pub slider: Slider,
    pub levels: Vec<u8>,
    pub samples: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub samples: Vec<SweepSample>,
    pub report: Result<GradientReport, AnalyticsError>,
}

/// Runs every `(level, sample)` with its derived seed, in parallel, and
/// merges in `(level, sample)` order.
pub fn sweep(scenario: &Scenario, spec: &SweepSpec, opts: &RunOptions) -> Result<SweepResult, ReplayError> {
    let jobs: Vec<(u8, u32)> = spec.levels.iter().flat_map(|&l| (0..spec.samples).map(move |s| (l, s))).collect();
    let run = |&(level, sample): &(u8, u32)| -> Result<SweepSample, ReplayError> {
        let seed = sweep_seed(spec.seed, level, sample);
        let opts = RunOptions { seed: Some(seed), hashes_only: true, sequential: true, ..opts.clone() };
        let world = scenario.with_slider(spec.slider, level).run(&opts)?;
        Ok(SweepSample { level, sample, seed, vaults: vault_metrics(&world.trace) })
    };
    let samples: Vec<SweepSample> =
        if opts.sequential { jobs.iter().map(run).collect::<Result<_, _>>()? } else { jobs.par_iter().map(run).collect::<Result<_, _>>()? };
    let points: Vec<(u8, f64)> = samples.iter().filter_map(|s| s.value(spec.slider).map(|v| (s.level, v))).collect();
    let report = gradient_from_samples(spec.slider, &points);
    Ok(SweepResult { samples, report })
}
