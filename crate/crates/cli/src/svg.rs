//! Minimal deterministic SVG scatter plots.
//!
//! Elements are emitted in a fixed order (frame, ticks, identity line,
//! points in input order, labels) with fixed-precision coordinates, so the
//! same inputs always give the same bytes.

use std::fmt::Write as _;

const SIZE: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 450.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 410.0;
const TICKS: usize = 5;

pub struct Scatter<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub points: &'a [(f64, f64)],
    /// Draws `y = x` and puts both axes on one shared range.
    pub identity_line: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn decimals(span: f64) -> usize {
    (2.0 - span.log10().floor()).clamp(0.0, 4.0) as usize
}

struct Axis {
    lo: f64,
    hi: f64,
    from: f64,
    to: f64,
}

impl Axis {
    fn map(&self, v: f64) -> f64 {
        self.from + (v - self.lo) / (self.hi - self.lo) * (self.to - self.from)
    }
}

pub fn scatter_svg(s: &Scatter) -> String {
    let finite: Vec<(f64, f64)> = s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
    let (xr, yr) = if s.identity_line {
        let r = range(finite.iter().flat_map(|&(x, y)| [x, y]));
        (r, r)
    } else {
        (range(finite.iter().map(|p| p.0)), range(finite.iter().map(|p| p.1)))
    };
    let xa = Axis {
        lo: xr.0,
        hi: xr.1,
        from: LEFT,
        to: RIGHT,
    };
    let ya = Axis {
        lo: yr.0,
        hi: yr.1,
        from: BOTTOM,
        to: TOP,
    };
    let mut o = String::new();
    let _ = writeln!(
        o,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(o, r#"<rect x="0" y="0" width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let _ = writeln!(
        o,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        RIGHT - LEFT,
        BOTTOM - TOP
    );
    let (xd, yd) = (decimals(xa.hi - xa.lo), decimals(ya.hi - ya.lo));
    for k in 0..TICKS {
        let f = k as f64 / (TICKS - 1) as f64;
        let xv = xa.lo + f * (xa.hi - xa.lo);
        let px = xa.map(xv);
        let _ = writeln!(o, r#"<line x1="{px:.2}" y1="{BOTTOM}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, BOTTOM + 5.0);
        let _ = writeln!(o, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{xv:.xd$}</text>"#, BOTTOM + 18.0);
        let yv = ya.lo + f * (ya.hi - ya.lo);
        let py = ya.map(yv);
        let _ = writeln!(o, r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(o, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.yd$}</text>"#, LEFT - 8.0, py + 4.0);
    }
    if s.identity_line {
        let _ = writeln!(
            o,
            r##"<line class="identity" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888888" stroke-dasharray="4 3"/>"##,
            xa.map(xa.lo),
            ya.map(xa.lo),
            xa.map(xa.hi),
            ya.map(xa.hi)
        );
    }
    for &(x, y) in &finite {
        let _ = writeln!(
            o,
            r##"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="#1f77b4" fill-opacity="0.6"/>"##,
            xa.map(x),
            ya.map(y)
        );
    }
    let _ = writeln!(
        o,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (LEFT + RIGHT) / 2.0,
        escape(s.title)
    );
    let _ = writeln!(
        o,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 40.0,
        escape(s.x_label)
    );
    let cy = (TOP + BOTTOM) / 2.0;
    let _ = writeln!(
        o,
        r#"<text x="18" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 18 {cy:.2})">{}</text>"#,
        escape(s.y_label)
    );
    o.push_str("</svg>\n");
    o
}
