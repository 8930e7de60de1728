use std::io::Cursor;

use vaultsim::mandate::Slider;
use vaultsim::replay::{replay_with_template, sweep, verify, ReplayError, SweepSpec};
use vaultsim::scenario::{RunOptions, Scenario};
use vaultsim::trace::TraceStore;

const SMALL: &str = r#"
format = "vaultsim-scenario/1"
name = "replay-small"
ticks = 72
seed = 11

[reap]
period = 36

[[tokens]]
symbol = "AAA"
eth_reserve = "20"

[[tokens]]
symbol = "BBB"
eth_reserve = "12"

[[tokens]]
symbol = "CCC"
eth_reserve = "5"
launch_at = 20

[[vaults]]
count = 6
funding = "1"
policy = { kind = "reference" }
sliders = { trading_activity = 5, trade_size = 4 }
"#;

fn export() -> (Vec<u8>, TraceStore) {
    let world = Scenario::parse(SMALL).unwrap().run(&RunOptions::default()).unwrap();
    let text = world.trace.export_string();
    (text.into_bytes(), world.trace)
}

#[test]
fn unmodified_export_verifies() {
    let (bytes, store) = export();
    let report = verify(Cursor::new(&bytes), &RunOptions::default()).unwrap();
    assert_eq!(report.records, store.len() as u64);
    assert!(report.records > 0);
}

#[test]
fn edited_record_is_reported_at_its_invocation() {
    let (bytes, store) = export();
    let text = String::from_utf8(bytes).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    // the 40th record line
    let idx = lines.iter().enumerate().filter(|(_, l)| l.contains(r#""type":"record""#)).nth(39).unwrap().0;
    let target = store.records()[39].invocation_id;
    lines[idx] = lines[idx].replacen(r#""tick":"#, r#""tick": "#, 1);
    let edited = lines.join("\n") + "\n";
    match verify(Cursor::new(edited.as_bytes()), &RunOptions::default()) {
        Err(ReplayError::VerificationMismatch { line, invocation_id, .. }) => {
            assert_eq!(line, idx + 1);
            assert_eq!(invocation_id, Some(target));
        }
        other => panic!("expected mismatch, got {other:?}"),
    }
}

#[test]
fn truncated_export_is_a_mismatch() {
    let (bytes, _) = export();
    let text = String::from_utf8(bytes).unwrap();
    let cut: Vec<&str> = text.lines().collect();
    let shorter = cut[..cut.len() - 1].join("\n") + "\n";
    assert!(matches!(verify(Cursor::new(shorter.as_bytes()), &RunOptions::default()), Err(ReplayError::VerificationMismatch { .. })));
}

#[test]
fn fee_section_move_changes_every_hash_but_no_structure() {
    let (_, store) = export();
    let cmp = replay_with_template(&store, "fee-late", &RunOptions::default()).unwrap();
    assert_eq!(cmp.records, store.len() as u64);
    assert_eq!(cmp.divergence_rate(), 1.0);
    assert_eq!(cmp.structure_equality_rate(), 1.0);
    assert_eq!(cmp.variant, "fee-late");
}

#[test]
fn sweep_is_reproducible_and_ordered() {
    let s = Scenario::parse(SMALL).unwrap();
    let spec = SweepSpec { slider: Slider::TradingActivity, levels: vec![1, 5], samples: 2, seed: 3 };
    let opts = RunOptions { ticks: Some(24), ..RunOptions::default() };
    let a = sweep(&s, &spec, &opts).unwrap();
    let b = sweep(&s, &spec, &RunOptions { sequential: true, ..opts }).unwrap();
    assert_eq!(a, b);
    let order: Vec<(u8, u32)> = a.samples.iter().map(|x| (x.level, x.sample)).collect();
    assert_eq!(order, vec![(1, 0), (1, 1), (5, 0), (5, 1)]);
}

#[test]
fn one_level_sweep_has_insufficient_cohorts() {
    let s = Scenario::parse(SMALL).unwrap();
    let spec = SweepSpec { slider: Slider::TradeSize, levels: vec![3], samples: 1, seed: 3 };
    let r = sweep(&s, &spec, &RunOptions { ticks: Some(12), ..RunOptions::default() }).unwrap();
    assert!(r.report.is_err());
}
