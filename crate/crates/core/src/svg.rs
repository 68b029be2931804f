//! Minimal SVG figures: point-cloud overlays and labelled bar charts.

use std::fmt::Write;

use crate::tensor::Tensor;

const W: f64 = 480.0;
const H: f64 = 480.0;
const PAD: f64 = 30.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Overlays labelled 2-D point clouds on shared axes.
pub fn scatter(title: &str, layers: &[(&str, &Tensor)]) -> String {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, t) in layers {
        for &v in t.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(lo < hi) {
        lo -= 1.0;
        hi += 1.0;
    }
    let span = hi - lo;
    let sx = |v: f64| PAD + (v - lo) / span * (W - 2.0 * PAD);
    let sy = |v: f64| H - PAD - (v - lo) / span * (H - 2.0 * PAD);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="18" font-family="sans-serif" font-size="13">{}</text>"#,
        escape(title)
    );
    for (k, (label, t)) in layers.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(out, r#"<g fill="{color}" fill-opacity="0.45">"#);
        for r in 0..t.rows() {
            let p = t.row(r);
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="1.4"/>"#, sx(p[0]), sy(p[1]));
        }
        let _ = writeln!(out, "</g>");
        let ly = 36.0 + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            W - 150.0,
            ly - 9.0,
            W - 135.0,
            ly,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars with value labels.
pub fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let max = bars.iter().map(|(_, v)| *v).fold(0.0f64, f64::max).max(1e-12);
    let n = bars.len().max(1) as f64;
    let slot = (W - 2.0 * PAD) / n;
    let base = H - 90.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="18" font-family="sans-serif" font-size="13">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<line x1="{PAD}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        W - PAD
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = v / max * (base - 40.0);
        let x = PAD + slot * i as f64 + slot * 0.15;
        let w = slot * 0.7;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="{w:.2}" height="{h:.2}" fill="{color}"/>"#,
            base - h
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="middle">{v:.4}</text>"#,
            x + w / 2.0,
            base - h - 4.0
        );
        let _ = writeln!(
            out,
            r#"<text transform="translate({:.2},{:.2}) rotate(40)" font-family="sans-serif" font-size="10">{}</text>"#,
            x + w / 2.0,
            base + 12.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
