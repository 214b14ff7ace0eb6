//! Plot data as CSV plus minimal self-contained SVG renderings.

use std::fmt::Write;

use super::metrics::{FitLine, NUM_CLASSES};

pub fn scatter_csv(truths: &[f64], preds: &[f64]) -> String {
    let mut out = String::from("measured,predicted\n");
    for (t, p) in truths.iter().zip(preds) {
        let _ = writeln!(out, "{t},{p}");
    }
    out
}

pub fn confusion_csv(confusion: &[[u64; NUM_CLASSES]; NUM_CLASSES]) -> String {
    let mut out = String::from("true_class");
    for p in 1..=NUM_CLASSES {
        let _ = write!(out, ",pred_{p}");
    }
    out.push('\n');
    for (t, row) in confusion.iter().enumerate() {
        let _ = write!(out, "{}", t + 1);
        for c in row {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

const SIZE: f64 = 400.0;
const MARGIN: f64 = 40.0;

/// Measured (x) against predicted (y) with the 1:1 line and an optional fit line.
pub fn scatter_svg(truths: &[f64], preds: &[f64], fit: Option<&FitLine>) -> String {
    let hi = truths.iter().chain(preds).copied().fold(1e-9, f64::max);
    let span = SIZE - 2.0 * MARGIN;
    let sx = |v: f64| MARGIN + v / hi * span;
    let sy = |v: f64| SIZE - MARGIN - v / hi * span;
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    s.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        s,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="grey"/>"#,
        sx(0.0),
        sy(0.0),
        sx(hi),
        sy(hi)
    );
    if let Some(f) = fit {
        let _ = write!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-dasharray="6 4"/>"#,
            sx(0.0),
            sy(f.intercept),
            sx(hi),
            sy(f.intercept + f.slope * hi)
        );
    }
    for (t, p) in truths.iter().zip(preds) {
        let _ = write!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="steelblue" fill-opacity="0.6"/>"#, sx(*t), sy(*p));
    }
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">measured</text><text x="12" y="{}" font-size="12" transform="rotate(-90 12 {})" text-anchor="middle">predicted</text></svg>"#,
        SIZE / 2.0,
        SIZE - 10.0,
        SIZE / 2.0,
        SIZE / 2.0
    );
    s
}

/// Row-normalised shading; counts printed in each cell.
pub fn confusion_svg(confusion: &[[u64; NUM_CLASSES]; NUM_CLASSES]) -> String {
    let cell = (SIZE - 2.0 * MARGIN) / NUM_CLASSES as f64;
    let mut s = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    for (t, row) in confusion.iter().enumerate() {
        let total = row.iter().sum::<u64>().max(1) as f64;
        for (p, &c) in row.iter().enumerate() {
            let shade = 255.0 - 200.0 * c as f64 / total;
            let (x, y) = (MARGIN + p as f64 * cell, MARGIN + t as f64 * cell);
            let _ = write!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell:.1}" height="{cell:.1}" fill="rgb({shade:.0},{shade:.0},255)" stroke="white"/><text x="{tx:.1}" y="{ty:.1}" font-size="10" text-anchor="middle">{c}</text>"#,
                tx = x + cell / 2.0,
                ty = y + cell / 2.0 + 3.0
            );
        }
    }
    s.push_str("</svg>");
    s
}
