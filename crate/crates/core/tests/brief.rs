use std::path::PathBuf;

use vaultsim::brief::BriefInputs;
use vaultsim::brief::{brief_diff, compile, move_section, permute_sections, BriefTemplate, CompiledBrief, SectionId, TemplateError};
use vaultsim::engine::World;
use vaultsim::guard::{validate, RejectCode, Verdict};
use vaultsim::mandate::{ConfigCommit, SliderConfig};
use vaultsim::market::{new_coin_buy_cap, quote_buy, quote_sell, CapResult};
use vaultsim::policy::ToolCall;
use vaultsim::scenario::{RunOptions, Scenario};
use vaultsim::units::{Eth, Tokens};
use vaultsim::vault::VaultId;

const FIXTURE: &str = r#"
format = "vaultsim-scenario/1"
name = "brief-fixture"
ticks = 40
seed = 9

[reap]
period = 60

[[tokens]]
symbol = "ALPHA"
eth_reserve = "20"

[[tokens]]
symbol = "BRAVO"
eth_reserve = "6"

[[tokens]]
symbol = "CHARLIE"
eth_reserve = "3"
launch_at = 35

[[tokens]]
symbol = "DELTA"
eth_reserve = "4"
launch_at = 100

[[vaults]]
count = 4
funding = "1"
policy = { kind = "reference" }
sliders = { trading_activity = 5, trade_size = 4, diversification = 5 }

[[vaults.strategies]]
label = "dip"
text = "when price drops 10% buy BRAVO"
priority = "HIGH"

[[vaults.strategies]]
label = "calm"
text = "avoid DELTA"
priority = "MEDIUM"
"#;

fn world() -> World {
    Scenario::parse(FIXTURE).unwrap().run(&RunOptions::default()).unwrap()
}

fn compile_with(w: &World, vault: u32, template: &BriefTemplate, sliders: Option<SliderConfig>) -> CompiledBrief {
    w.brief_inputs(VaultId(vault), |inputs| match sliders {
        None => compile(template, inputs).unwrap(),
        Some(s) => {
            let commit = ConfigCommit { sliders: s, ..inputs.commit.clone() };
            let inputs = BriefInputs { commit: &commit, ..*inputs };
            compile(template, &inputs).unwrap()
        }
    })
    .unwrap()
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares against a stored golden; `UPDATE_GOLDENS=1` rewrites it.
fn golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("UPDATE_GOLDENS").is_some() {
        std::fs::create_dir_all(golden_dir()).unwrap();
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} drifted:\n{}", similar::TextDiff::from_lines(&expected, actual).unified_diff());
}

#[test]
fn rendered_briefs_match_goldens() {
    let w = world();
    for name in ["default", "floors", "fee-late"] {
        let b = compile_with(&w, 1, &BriefTemplate::builtin(name).unwrap(), None);
        golden(&format!("brief_{name}.txt"), &b.rendered.text);
    }
}

#[test]
fn compile_is_deterministic() {
    let (a, b) = (world(), world());
    let t = BriefTemplate::default_template();
    assert_eq!(compile_with(&a, 2, &t, None), compile_with(&b, 2, &t, None));
}

#[test]
fn risk_conditionals_follow_arp() {
    let w = world();
    let t = BriefTemplate::default_template();
    let text = |arp| compile_with(&w, 1, &t, Some(SliderConfig { asset_risk_preference: arp, ..SliderConfig::default() })).rendered.text;
    assert!(text(5).contains("New launches are valid buying candidates"));
    let mid = text(3);
    assert!(!mid.contains("New launches are valid buying candidates"));
    assert!(!mid.contains("trading history behind them"));
    assert!(text(1).contains("trading history behind them"));
}

/// Expected insertions for one slider setting, written out by hand.
fn expected_lines(s: &SliderConfig, floors: bool) -> Vec<&'static str> {
    let mut out = Vec::new();
    if s.asset_risk_preference >= 4 {
        out.push("- New launches are valid buying candidates at your risk level, as are thinly traded tokens.");
    }
    if s.asset_risk_preference <= 2 {
        out.push("- Favour tokens with some trading history behind them; that is not the same as favouring quiet ones.");
    }
    if s.trading_activity >= 4 && s.holding_style >= 4 {
        out.push("- Active and patient: look for entries often, then hold what you enter. Activity is for finding setups, not for churning.");
    }
    if s.trading_activity >= 4 {
        out.push("- Fresh-signal gate: when a planned trade repeats a recent action on the same token and nothing new has happened since, observe instead.");
    }
    if s.asset_risk_preference >= 2 {
        out.push("- This launch is a reasonable buying candidate at your risk level once it lists.");
    }
    let pace = if floors {
        [
            "- Pace: observe on at least 97.0% of polls.",
            "- Pace: observe on at least 94.0% of polls.",
            "- Pace: observe on at least 89.3% of polls.",
            "- Pace: observe on at least 87.1% of polls.",
            "- Pace: observe on at least 83.4% of polls.",
        ]
    } else {
        [
            "- Pace: the least active setting. Trade only on clear, fresh edges.",
            "- Pace: somewhat more active than the lowest setting, still selective.",
            "- Pace: a middle setting. Trade when a real edge shows up, observe otherwise.",
            "- Pace: more active than the middle setting. Act on fresh edges promptly.",
            "- Pace: the most active setting. Act on every fresh edge you can justify.",
        ]
    };
    out.push(pace[s.trading_activity as usize - 1]);
    out
}

#[test]
fn conditionals_are_sound_over_the_full_slider_grid() {
    let w = world();
    let templates = [(BriefTemplate::default_template(), false), (BriefTemplate::builtin("floors").unwrap(), true)];
    let all_conditional: Vec<String> = templates.iter().flat_map(|(t, _)| t.conditionals.iter().map(|c| c.text.clone())).collect();
    let mut checked = 0;
    w.brief_inputs(VaultId(1), |inputs| {
        for code in 0..5u32.pow(5) {
            let d = |i: u32| (code / 5u32.pow(i) % 5 + 1) as u8;
            let s = SliderConfig { trading_activity: d(0), asset_risk_preference: d(1), trade_size: d(2), holding_style: d(3), diversification: d(4) };
            let commit = ConfigCommit { sliders: s, ..inputs.commit.clone() };
            let inputs = BriefInputs { commit: &commit, ..*inputs };
            for (t, floors) in &templates {
                let text = compile(t, &inputs).unwrap().rendered.text;
                let want = expected_lines(&s, *floors);
                for line in &all_conditional {
                    let present = text.lines().any(|l| l == line);
                    assert_eq!(present, want.contains(&line.as_str()), "{s:?} floors={floors}: {line}");
                }
                checked += 1;
            }
        }
    });
    assert_eq!(checked, 2 * 3125);
}

#[test]
fn moving_the_fee_section_changes_hash_not_structure() {
    let w = world();
    let base = BriefTemplate::default_template();
    let pos = base.section_order.iter().position(|&s| s == SectionId::OperatingRules).unwrap();
    for to in [1, 8, base.section_order.len()] {
        if to == pos + 1 {
            continue;
        }
        let moved = move_section(&base, SectionId::OperatingRules, to).unwrap();
        assert_ne!(moved.variant_id, base.variant_id);
        let (a, b) = (compile_with(&w, 1, &base, None), compile_with(&w, 1, &moved, None));
        assert_ne!(a.rendered.brief_hash, b.rendered.brief_hash);
        assert_eq!(a.structured, b.structured);
        let d = brief_diff(&a, &b);
        assert!(d.structurally_equal && d.changed_lines > 0);
    }
}

#[test]
fn identity_permutation_renders_the_same_text() {
    let w = world();
    let base = BriefTemplate::default_template();
    let same = permute_sections(&base, &base.section_order.clone()).unwrap();
    assert_eq!(compile_with(&w, 1, &base, None).rendered.text, compile_with(&w, 1, &same, None).rendered.text);
}

#[test]
fn duplicated_section_is_an_invalid_permutation() {
    let base = BriefTemplate::default_template();
    let mut order = base.section_order.clone();
    order[1] = order[0];
    assert!(matches!(permute_sections(&base, &order), Err(TemplateError::InvalidPermutation(_))));
}

#[test]
fn diff_flags_track_structure_only() {
    let w = world();
    let base = BriefTemplate::default_template();
    let a = compile_with(&w, 1, &base, None);
    let other_sliders = compile_with(&w, 1, &base, Some(SliderConfig { trade_size: 1, ..SliderConfig::default() }));
    assert!(!brief_diff(&a, &other_sliders).structurally_equal);

    let reworded =
        BriefTemplate::parse("@extends default\n@variant reworded\n@section SystemRules\n## SYSTEM RULES\nOne vault, one action per poll.\n", &|name| {
            (name == "default").then(|| include_str!("../templates/default.tpl").to_string())
        })
        .unwrap();
    let b = compile_with(&w, 1, &reworded, None);
    let d = brief_diff(&a, &b);
    assert!(d.structurally_equal);
    assert_ne!(a.rendered.brief_hash, b.rendered.brief_hash);
    assert!(d.diff.contains("+One vault, one action per poll."));
}

#[test]
fn displayed_constraints_are_the_enforced_ones() {
    let w = world();
    let b = compile_with(&w, 1, &BriefTemplate::default_template(), None);
    let c = &b.structured.constraints;
    let vault = &w.vaults[&VaultId(1)];
    assert_eq!(c.max_trade_eth, w.guard.max_trade_eth(vault.eth_balance));
    assert_eq!(c.max_price_impact_bps, w.guard.max_price_impact_bps);
    assert_eq!(c.slippage_bps, w.guard.slippage_bps);
    assert!(b.rendered.text.contains(&format!("Price impact limit: max {} bps.", c.max_price_impact_bps)));
    assert!(!c.token_limits.is_empty());
    for l in &c.token_limits {
        let pool = &w.pools[&l.token];
        let line = format!("- {}: BUY max {} ETH", l.symbol, l.buy_max_eth);
        assert!(b.rendered.text.contains(&line), "missing {line}");
        // the displayed bounds pass the impact check and are tight to a part per million
        let at = quote_buy(pool, l.buy_max_eth).unwrap();
        assert!(!at.impact_exceeds(c.max_price_impact_bps));
        let over = quote_buy(pool, l.buy_max_eth + Eth::from_raw(l.buy_max_eth.raw() / 1_000_000)).unwrap();
        assert!(over.impact_exceeds(c.max_price_impact_bps));
        if let Some(s) = l.sell_max {
            assert!(!quote_sell(pool, s).unwrap().impact_exceeds(c.max_price_impact_bps));
            let over = quote_sell(pool, s + Tokens::from_raw(s.raw() / 1_000_000)).unwrap();
            assert!(over.impact_exceeds(c.max_price_impact_bps));
        }
        assert_eq!(l.new_coin_cap, new_coin_buy_cap(w.tokens[&l.token].launched_at, w.now));
        if let CapResult::Capped(cap) = l.new_coin_cap {
            assert!(b.rendered.text.contains(&format!("new-coin cap {cap} ETH")));
            // a buy one wei over the displayed cap is what the guard refuses
            let mut rich = vault.clone();
            rich.eth_balance = Eth::from_whole(1000);
            let f = (cap + Eth::from_raw(1_000_000_000)).to_f64() / rich.eth_balance.to_f64();
            let v = validate(&ToolCall::buy(&l.token, f, vec![]), &rich, &w.tokens, &w.pools, &w.guard, w.now);
            assert!(matches!(v, Verdict::Rejected(ref r) if r.code == RejectCode::ExceedsNewCoinCap), "{v:?}");
        }
    }
}
