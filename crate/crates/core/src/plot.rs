//! Static SVG charts for gradients and sell cascades.
//!
//! Output is plain text so it diffs and hashes like any other artifact.

use std::fmt::Write;

use crate::analytics::{CascadeEvent, GradientReport, Trade};
use crate::market::TradeSide;

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{PAD}" y="24" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(s, r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#, H - PAD, W - PAD / 2.0);
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn y_of(v: f64, max: f64) -> f64 {
    H - PAD - (v / max) * (H - 2.0 * PAD)
}

fn nice_max(v: f64) -> f64 {
    if v <= 0.0 || !v.is_finite() {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    [1.0, 2.0, 2.5, 5.0, 10.0].iter().map(|m| m * mag).find(|&m| m >= v).unwrap_or(10.0 * mag)
}

fn y_axis(s: &mut String, max: f64) {
    for i in 0..=4 {
        let v = max * i as f64 / 4.0;
        let y = y_of(v, max);
        let _ = writeln!(s, r##"<line x1="{}" y1="{y:.1}" x2="{PAD}" y2="{y:.1}" stroke="black"/>"##, PAD - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#, PAD - 6.0, y + 4.0, trim(v));
    }
}

fn trim(v: f64) -> String {
    let t = format!("{v:.4}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t.is_empty() {
        "0".into()
    } else {
        t.to_string()
    }
}

/// Per-level means with one standard-error whiskers, joined by a line.
pub fn gradient_svg(g: &GradientReport) -> String {
    let title = format!("{} by {} ({})", g.metric, g.slider.short(), g.verdict.as_str());
    let mut s = open(&title);
    let max = nice_max(g.levels.iter().map(|l| l.mean + l.std_error).fold(0.0, f64::max));
    y_axis(&mut s, max);
    let n = g.levels.len().max(1) as f64;
    let x_of = |i: usize| PAD + (i as f64 + 0.5) * (W - 1.5 * PAD) / n;
    let mut path = String::new();
    for (i, l) in g.levels.iter().enumerate() {
        let (x, y) = (x_of(i), y_of(l.mean, max));
        let _ = write!(path, "{}{x:.1} {y:.1} ", if i == 0 { "M" } else { "L" });
        let lo = y_of((l.mean - l.std_error).max(0.0), max);
        let hi = y_of(l.mean + l.std_error, max);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{lo:.1}" x2="{x:.1}" y2="{hi:.1}" stroke="gray"/>"#);
        let _ = writeln!(s, r#"<circle cx="{x:.1}" cy="{y:.1}" r="4" fill="steelblue"/>"#);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{}={}</text>"#, H - PAD + 16.0, g.slider.short(), l.level);
    }
    let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, path.trim_end());
    s.push_str("</svg>\n");
    s
}

/// Sells per bucket over time for one token, with cascade spans shaded.
pub fn cascade_svg(token: &str, trades: &[Trade], cascades: &[CascadeEvent], bucket_ms: u64) -> String {
    let bucket_ms = bucket_ms.max(1);
    let sells: Vec<&Trade> = trades.iter().filter(|t| t.token.as_str() == token && t.side == TradeSide::Sell).collect();
    let mut s = open(&format!("sells of {token} ({} cascades)", cascades.iter().filter(|c| c.token.as_str() == token).count()));
    let (Some(first), Some(last)) = (sells.first(), sells.last()) else {
        s.push_str("</svg>\n");
        return s;
    };
    let t0 = first.time_ms / bucket_ms * bucket_ms;
    let buckets = ((last.time_ms - t0) / bucket_ms + 1) as usize;
    let mut counts = vec![0u64; buckets];
    for t in &sells {
        counts[((t.time_ms - t0) / bucket_ms) as usize] += 1;
    }
    let max = nice_max(*counts.iter().max().unwrap_or(&1) as f64);
    let span = (buckets as u64 * bucket_ms) as f64;
    let x_of = |ms: u64| PAD + (ms.saturating_sub(t0)) as f64 / span * (W - 1.5 * PAD);
    for c in cascades.iter().filter(|c| c.token.as_str() == token) {
        let (a, b) = (x_of(c.start_ms), x_of(c.end_ms + bucket_ms));
        let _ = writeln!(s, r#"<rect x="{a:.1}" y="{PAD}" width="{:.1}" height="{}" fill="orange" fill-opacity="0.3"/>"#, (b - a).max(1.0), H - 2.0 * PAD);
    }
    y_axis(&mut s, max);
    let bw = (W - 1.5 * PAD) / buckets as f64;
    for (i, &n) in counts.iter().enumerate().filter(|(_, n)| **n > 0) {
        let y = y_of(n as f64, max);
        let _ = writeln!(s, r#"<rect x="{:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="firebrick"/>"#, PAD + i as f64 * bw, bw.max(0.5), H - PAD - y);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::gradient_from_samples;
    use crate::mandate::Slider;
    use crate::market::TokenId;
    use crate::vault::VaultId;

    #[test]
    fn gradient_chart_has_one_marker_per_level() {
        let g = gradient_from_samples(Slider::TradingActivity, &[(1, 0.03), (2, 0.06), (3, 0.1)]).unwrap();
        let svg = gradient_svg(&g);
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("strictly-monotone"));
    }

    #[test]
    fn cascade_chart_shades_events() {
        let trades: Vec<Trade> =
            (0..12).map(|i| Trade { time_ms: i * 1000, token: TokenId::new("X"), vault: VaultId(i as u32), side: TradeSide::Sell }).collect();
        let ev = crate::analytics::detect_sell_cascades(&trades, 10, 600_000);
        let svg = cascade_svg("X", &trades, &ev, 1000);
        assert_eq!(svg.matches("fill=\"orange\"").count(), 1);
        assert!(cascade_svg("Y", &trades, &ev, 1000).ends_with("</svg>\n"));
    }
}
