//! Static SVG line plot of a chart.

use std::fmt::Write;

use survchart::chart::Chart;

const W: f64 = 720.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// Round tick step giving about `n` intervals over `span`.
fn tick_step(span: f64, n: f64) -> f64 {
    let raw = (span / n).max(f64::MIN_POSITIVE);
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let nice = if f < 1.5 {
        1.0
    } else if f < 3.5 {
        2.0
    } else if f < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = tick_step(hi - lo, 6.0);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(t);
        t += step;
    }
    out
}

fn label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Chart values against time since start of monitoring, with a dashed line
/// at `h` when one is given.
pub fn render(chart: &Chart, h: Option<f64>, title: &str) -> String {
    let xs: Vec<f64> = chart.points.iter().map(|p| p.t - chart.start_time).collect();
    let ys: Vec<f64> = chart.points.iter().map(|p| p.value).collect();
    let x_hi = xs.iter().copied().fold(0.0, f64::max).max(1.0);
    let mut y_lo = ys.iter().copied().fold(0.0, f64::min);
    let mut y_hi = ys.iter().copied().fold(0.0, f64::max);
    if let Some(h) = h {
        y_lo = y_lo.min(h);
        y_hi = y_hi.max(h);
    }
    if y_hi - y_lo < 1e-12 {
        y_hi = y_lo + 1.0;
    }
    let pad = 0.05 * (y_hi - y_lo);
    let (y_lo, y_hi) = (y_lo - if y_lo < 0.0 { pad } else { 0.0 }, y_hi + pad);
    let px = |x: f64| MARGIN + x / x_hi * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (x0, x1, y0, y1) = (px(0.0), px(x_hi), py(y_lo), py(y_hi));
    let _ = writeln!(s, r#"<path d="M{x0:.1},{y1:.1} V{y0:.1} H{x1:.1}" fill="none" stroke="black"/>"#);
    for t in ticks(0.0, x_hi) {
        let x = px(t);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, y0 + 4.0, y0 + 16.0, label(t));
    }
    for v in ticks(y_lo, y_hi) {
        let y = py(v);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, x0 - 4.0, x0 - 6.0, y + 4.0, label(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">time</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">value</text>"#, H / 2.0, H / 2.0);

    // a CUSUM holds its value between evaluation times, so draw steps
    let mut d = String::new();
    for (i, (&x, &y)) in xs.iter().zip(&ys).enumerate() {
        if i == 0 {
            let _ = write!(d, "M{:.2},{:.2}", px(x), py(y));
        } else {
            let _ = write!(d, " H{:.2} V{:.2}", px(x), py(y));
        }
    }
    let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#);
    if let Some(h) = h {
        let y = py(h);
        let _ = writeln!(s, r#"<line x1="{x0:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="firebrick" stroke-dasharray="6,4"/>"#);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" fill="firebrick">h = {}</text>"#, x1 - 60.0, y - 4.0, label(h));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
