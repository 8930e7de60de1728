//! Deterministic simulator of an autonomous-agent vault operating layer.
//!
//! The pipeline per invocation is: read the latest mandate commit, snapshot
//! the market, compile a brief, let a policy answer with one tool call,
//! parse it, validate it against hard constraints, settle it through a
//! constant-product pool and append a trace record. Everything downstream
//! of a `(seed, scenario)` pair is reproducible byte for byte.

pub mod analytics;
pub mod brief;
pub mod directive;
pub mod engine;
pub mod guard;
pub mod mandate;
pub mod market;
pub mod plot;
pub mod policy;
pub mod reap;
pub mod replay;
pub mod rng;
pub mod scenario;
pub mod trace;
pub mod units;
pub mod vault;

/// Simulation time in five-minute ticks since genesis.
pub type Tick = u64;

pub const MINUTES_PER_TICK: u64 = 5;
pub const SECONDS_PER_TICK: u64 = MINUTES_PER_TICK * 60;
pub const TICKS_PER_HOUR: u64 = 12;
pub const TICKS_PER_DAY: u64 = 24 * TICKS_PER_HOUR;

/// Human-readable clock for a tick, e.g. `day 2 07:35`.
pub fn format_clock(tick: Tick) -> String {
    let minutes = tick * MINUTES_PER_TICK;
    let day = minutes / (24 * 60) + 1;
    let hh = (minutes / 60) % 24;
    let mm = minutes % 60;
    format!("day {day} {hh:02}:{mm:02}")
}

#[cfg(test)]
mod tests {
    #[test]
    fn clock_format() {
        assert_eq!(super::format_clock(0), "day 1 00:00");
        assert_eq!(super::format_clock(289), "day 2 00:05");
    }
}
