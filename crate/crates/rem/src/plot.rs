//! Minimal SVG charts for `--plot`. CSV files remain the source of truth.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (x0, y0, x1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{MARGIN}" stroke="black"/>"#);
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn y_ticks(s: &mut String, lo: f64, hi: f64) {
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = H - MARGIN - (H - 2.0 * MARGIN) * i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, MARGIN - 6.0, y + 4.0);
    }
}

/// One polyline per series over shared axes.
pub fn line_chart(title: &str, x_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut s = header(title);
    let (xlo, xhi) = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (ylo, yhi) = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let px = |x: f64| MARGIN + (W - 1.5 * MARGIN) * (x - xlo) / (xhi - xlo);
    let py = |y: f64| H - MARGIN - (H - 2.0 * MARGIN) * (y - ylo) / (yhi - ylo);
    y_ticks(&mut s, ylo, yhi);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, escape(x_label));
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(x), py(y));
            let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#, px(x), H - MARGIN + 16.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, W - 2.5 * MARGIN, MARGIN + 16.0 * i as f64, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bars, one per `(label, value)`, on a `[0, max]` axis.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let mut s = header(title);
    let (_, hi) = bounds(bars.iter().map(|b| b.1).chain([0.0]));
    y_ticks(&mut s, 0.0, hi);
    let slot = (W - 1.5 * MARGIN) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = (H - 2.0 * MARGIN) * (v / hi).clamp(0.0, 1.0);
        let x = MARGIN + slot * i as f64 + slot * 0.15;
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(s, r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{color}"/>"#, H - MARGIN - h, slot * 0.7);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, x + slot * 0.35, H - MARGIN + 16.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_well_formed() {
        let l = line_chart("a<b", "k", &[("x".into(), vec![(0.0, 1.0), (1.0, 0.5)])]);
        assert!(l.starts_with("<svg") && l.trim_end().ends_with("</svg>") && l.contains("a&lt;b"));
        let b = bar_chart("t", &[("full".into(), 0.1), ("-cdc".into(), 0.3)]);
        assert_eq!(b.matches("<rect").count(), 3);
        assert!(bar_chart("empty", &[]).contains("</svg>"));
    }
}
