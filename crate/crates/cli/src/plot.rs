//! Minimal SVG box plots.

use std::fmt::Write;

#[derive(Clone, Debug, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Whisker ends: the most extreme points within 1.5 IQR of the box.
    pub lo: f64,
    pub hi: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    match sorted.get(i + 1) {
        Some(next) => sorted[i] + frac * (next - sorted[i]),
        None => sorted[i],
    }
}

impl BoxStats {
    pub fn of(values: &[f64]) -> Option<BoxStats> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let fence = 1.5 * (q3 - q1);
        let inside: Vec<f64> = v
            .iter()
            .copied()
            .filter(|x| *x >= q1 - fence && *x <= q3 + fence)
            .collect();
        Some(BoxStats {
            min: v[0],
            q1,
            median,
            q3,
            max: v[v.len() - 1],
            lo: inside.first().copied().unwrap_or(q1),
            hi: inside.last().copied().unwrap_or(q3),
            outliers: v
                .iter()
                .copied()
                .filter(|x| *x < q1 - fence || *x > q3 + fence)
                .collect(),
        })
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One panel: a box per group, groups in the given order.
pub fn boxplot_svg(title: &str, groups: &[(String, Vec<f64>)]) -> String {
    const W: f64 = 120.0;
    const H: f64 = 300.0;
    const LEFT: f64 = 60.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 50.0;
    let width = LEFT + W * groups.len().max(1) as f64 + 20.0;
    let height = TOP + H + BOTTOM;
    let all: Vec<f64> = groups.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let (mut lo, mut hi) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let y = |v: f64| TOP + H * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        esc(title)
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let (x2, yv, xt, label) = (width - 20.0, y(v), LEFT - 6.0, tick(v));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" x2="{x2:.1}" y1="{yv:.1}" y2="{yv:.1}" stroke="#ddd"/><text x="{xt:.1}" y="{ty:.1}" text-anchor="end">{label}</text>"##,
            ty = yv + 4.0,
        );
    }
    for (i, (name, values)) in groups.iter().enumerate() {
        let cx = LEFT + W * (i as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + H + 20.0,
            esc(name)
        );
        let Some(b) = BoxStats::of(values) else { continue };
        let half = W * 0.3;
        let _ = writeln!(
            s,
            r##"<line x1="{cx:.1}" x2="{cx:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"##,
            y(b.hi),
            y(b.lo)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
            cx - half,
            y(b.q3),
            2.0 * half,
            (y(b.q1) - y(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" x2="{:.1}" y1="{ym:.1}" y2="{ym:.1}" stroke="black" stroke-width="2"/>"##,
            cx - half,
            cx + half,
            ym = y(b.median)
        );
        for w in [b.lo, b.hi] {
            let _ = writeln!(
                s,
                r##"<line x1="{:.1}" x2="{:.1}" y1="{yw:.1}" y2="{yw:.1}" stroke="black"/>"##,
                cx - half / 2.0,
                cx + half / 2.0,
                yw = y(w)
            );
        }
        for o in &b.outliers {
            let _ = writeln!(
                s,
                r#"<circle cx="{cx:.1}" cy="{:.1}" r="3" fill="none" stroke="black"/>"#,
                y(*o)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}
