mod common;

use std::io::Cursor;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vaultsim::analytics::{detect_sell_cascades, two_sided_fraction, Trade, Windowing};
use vaultsim::guard::{buy_spend, validate, GuardConfig};
use vaultsim::market::{execute_swap, quote_buy, quote_sell, FeeSchedule, Pool, TokenId, TradeSide};
use vaultsim::policy::probes::chaos_response;
use vaultsim::policy::{parse_tool_call, ActionType, ToolCall};
use vaultsim::scenario::{RunOptions, Scenario};
use vaultsim::trace::{check_record, failure_taxonomy, TraceError, TraceStore};
use vaultsim::units::{Eth, Fraction, Tokens};
use vaultsim::vault::{Vault, VaultId};

use common::{brute_cascades, brute_two_sided, check_verdict, fraction_raw, guard_oracle};

const WORLD: &str = r#"
format = "vaultsim-scenario/1"
ticks = 30
seed = 4

[guard]
max_trade_bps = 2500
slippage_bps = 300
max_price_impact_bps = 500

[[tokens]]
symbol = "AAA"
eth_reserve = "10"

[[tokens]]
symbol = "BBB"
eth_reserve = "1"

[[tokens]]
symbol = "NEW"
eth_reserve = "2"
launch_at = 25

[[vaults]]
count = 6
funding = "1"
policy = { kind = "chaos" }

[[vaults]]
count = 2
funding = "3"
policy = { kind = "reference" }
sliders = { trading_activity = 5, trade_size = 5 }

[[vaults]]
count = 2
funding = "1"
policy = { kind = "schema_breaker" }

[[events]]
at = 10
vault = 3
action = { kind = "pause" }
"#;

fn world() -> vaultsim::engine::World {
    Scenario::parse(WORLD).unwrap().run(&RunOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(5000))]

    #[test]
    fn fraction_is_the_nearest_fixed_point(f in 0.0f64..1.0) {
        prop_assume!(f > 0.0);
        prop_assert_eq!(Fraction::from_f64_clamped(f).raw(), fraction_raw(f));
    }

    #[test]
    fn buy_spend_is_floor_of_exact_product(balance in 0u128..u128::MAX / 4, f in 0.0f64..=1.0) {
        prop_assume!(f > 0.0);
        let want = common::floor(&(common::ratio(balance, 1) * common::ratio(fraction_raw(f), 1_000_000_000_000_000_000)));
        prop_assert_eq!(buy_spend(Eth::from_raw(balance), f).raw(), want);
    }
}

#[test]
fn guard_agrees_with_exact_reevaluation() {
    let w = world();
    let market: Vec<TokenId> = w.tokens.keys().cloned().chain([TokenId::new("GHOST")]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut n = 0;
    for vault in w.vaults.values() {
        let held: Vec<TokenId> = vault.positions.keys().cloned().collect();
        for _ in 0..2_000 {
            let Ok(call) = parse_tool_call(&chaos_response(&market, &held, &mut rng)) else { continue };
            let verdict = validate(&call, vault, &w.tokens, &w.pools, &w.guard, w.now);
            let oracle = guard_oracle(&call, vault, &w.tokens, &w.pools, &w.guard, w.now);
            if let Err(e) = check_verdict(&verdict, &oracle, call.action() != ActionType::Observe) {
                panic!("{} {call:?}: {e}", vault.id);
            }
            n += 1;
        }
    }
    assert!(n > 15_000);
}

#[test]
fn paused_vault_with_unknown_token_reports_the_pause() {
    let w = world();
    let vault = &w.vaults[&VaultId(3)];
    assert!(vault.paused);
    let call = ToolCall::buy(&TokenId::new("GHOST"), 7.0, vec![]);
    let v = validate(&call, vault, &w.tokens, &w.pools, &w.guard, w.now);
    assert_eq!(v.code().map(|c| c.check_index()), Some(1));
    assert_eq!(guard_oracle(&call, vault, &w.tokens, &w.pools, &w.guard, w.now).failing.len(), 3);
}

#[test]
fn records_hold_their_invariants_and_partition() {
    let w = world();
    assert!(w.violations.is_empty(), "{:?}", w.violations);
    for r in w.trace.records() {
        check_record(r).unwrap_or_else(|e| panic!("invocation {}: {e}", r.invocation_id));
    }
    let t = failure_taxonomy(w.trace.records());
    assert_eq!(t.bucket_sum(), t.total);
    assert!(t.parse_errors > 0 && t.rejections() > 0 && t.settled > 0);
    assert_eq!(t.total, w.counters.invocations);
}

#[test]
fn export_round_trips_and_truncation_is_located() {
    let w = world();
    let text = w.trace.export_string();
    let back = TraceStore::import(Cursor::new(text.as_bytes())).unwrap();
    assert_eq!(back.records(), w.trace.records());
    assert_eq!(back.export_string(), text);
    let mut lines: Vec<&str> = text.lines().collect();
    let half = &lines[5][..lines[5].len() / 2];
    lines[5] = half;
    match TraceStore::import(Cursor::new(lines.join("\n").as_bytes())) {
        Err(TraceError::CorruptLine { line, .. }) => assert_eq!(line, 6),
        other => panic!("{:?}", other.map(|s| s.len())),
    }
}

fn trades() -> impl Strategy<Value = Vec<Trade>> {
    prop::collection::vec((0u64..3_600_000, 0u8..3, 0u32..14, any::<bool>()), 0..400).prop_map(|v| {
        let mut out: Vec<Trade> = v
            .into_iter()
            .map(|(t, k, vault, sell)| Trade {
                time_ms: t,
                token: TokenId::new(format!("T{k}")),
                vault: VaultId(vault),
                side: if sell { TradeSide::Sell } else { TradeSide::Buy },
            })
            .collect();
        out.sort_by_key(|t| t.time_ms);
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn cascades_match_brute_force(ts in trades(), k in 2usize..12, window in 10_000u64..900_000) {
        let got = detect_sell_cascades(&ts, k, window);
        let want = brute_cascades(&ts, k, window);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!((&g.token, g.start_ms, g.end_ms, g.sells, g.vaults), (&w.token, w.start_ms, w.end_ms, w.sells, w.vaults));
            prop_assert_eq!(g.median_gap_ms, w.median_gap_ms);
        }
    }

    #[test]
    fn two_sided_matches_brute_force(ts in trades(), window in 1_000u64..900_000) {
        prop_assert_eq!(two_sided_fraction(&ts, window, Windowing::Tiled), brute_two_sided(&ts, window, true));
        prop_assert_eq!(two_sided_fraction(&ts, window, Windowing::Rolling), brute_two_sided(&ts, window, false));
    }

    #[test]
    fn vault_accounting_residual_stays_zero(legs in prop::collection::vec((any::<bool>(), 1u32..=10_000), 1..60)) {
        let id = TokenId::new("T");
        let mut pool = Pool::new(id.clone(), Eth::from_whole(10), Tokens::from_whole(1_000_000_000), FeeSchedule::default());
        let mut v = Vault::new(VaultId(1), "o", 0);
        v.eth_balance = Eth::from_whole(2);
        v.net_funded = vaultsim::market::EthDelta::of(Eth::from_whole(2));
        for (i, (buy, bps)) in legs.into_iter().enumerate() {
            let q = if buy {
                quote_buy(&pool, Eth::from_raw(v.eth_balance.raw() / 10_000 * bps as u128))
            } else {
                let bal = v.position(&id).map_or(0, |p| p.balance.raw());
                quote_sell(&pool, Tokens::from_raw(bal / 10_000 * bps as u128))
            };
            let Ok(q) = q else { continue };
            let r = execute_swap(&mut pool, &q).unwrap();
            v.apply_settlement(&r, i as u64);
            prop_assert_eq!(v.accounting_residual(), 0);
        }
    }
}

#[test]
fn guard_defaults_are_the_documented_ones() {
    let g = GuardConfig::default();
    assert_eq!((g.max_trade_bps, g.slippage_bps, g.max_price_impact_bps), (10_000, 100, 1_000));
}
