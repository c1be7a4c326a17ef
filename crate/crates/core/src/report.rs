//! Report serialization: per-image CSV, aligned comparison tables and SVG bar
//! charts.

use std::fmt::Write as _;

use crate::metrics::QualityReport;

/// Column order of the quality CSV.
pub const QUALITY_COLUMNS: [&str; 10] = [
    "id",
    "backend",
    "psnr",
    "ssim",
    "l1",
    "perc",
    "adv",
    "composite",
    "payload_bytes",
    "ratio",
];

/// Column order of the bandwidth CSV.
pub const BENCH_COLUMNS: [&str; 6] = [
    "id",
    "raw_bytes",
    "payload_bytes",
    "ratio",
    "raw_seconds",
    "compressed_seconds",
];

/// PSNR as text; infinite PSNR serializes as `inf`.
pub fn fmt_psnr(db: f64) -> String {
    if db.is_infinite() {
        "inf".to_owned()
    } else {
        format!("{db:.4}")
    }
}

pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityRow {
    pub id: String,
    pub backend: String,
    pub report: QualityReport,
}

pub fn quality_csv(rows: &[QualityRow]) -> String {
    let mut out = QUALITY_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let q = &r.report;
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{:.4}",
            csv_field(&r.id),
            csv_field(&r.backend),
            fmt_psnr(q.psnr_db),
            q.ssim,
            q.l1,
            q.perceptual,
            q.adversarial,
            q.composite,
            q.payload_bytes,
            q.compression_ratio
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub id: String,
    pub raw_bytes: f64,
    pub payload_bytes: f64,
    pub ratio: f64,
    pub raw_seconds: f64,
    pub compressed_seconds: f64,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = BENCH_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.4},{:.6},{:.6}",
            csv_field(&r.id),
            r.raw_bytes,
            r.payload_bytes,
            r.ratio,
            r.raw_seconds,
            r.compressed_seconds
        );
    }
    out
}

/// Two-column comparison table: method name and PSNR with two decimals.
///
/// ```text
/// +--------+-----------+
/// | Method | PSNR (dB) |
/// +--------+-----------+
/// | a      |     30.00 |
/// +--------+-----------+
/// ```
pub fn psnr_table(rows: &[(String, f64)]) -> String {
    let header = ("Method", "PSNR (dB)");
    let values: Vec<String> = rows.iter().map(|(_, v)| if v.is_infinite() { "inf".into() } else { format!("{v:.2}") }).collect();
    let w0 = rows.iter().map(|(m, _)| m.chars().count()).chain([header.0.len()]).max().unwrap();
    let w1 = values.iter().map(String::len).chain([header.1.len()]).max().unwrap();
    let rule = format!("+{}+{}+\n", "-".repeat(w0 + 2), "-".repeat(w1 + 2));
    let mut out = rule.clone();
    let _ = writeln!(out, "| {:<w0$} | {:<w1$} |", header.0, header.1);
    out.push_str(&rule);
    for ((m, _), v) in rows.iter().zip(&values) {
        let _ = writeln!(out, "| {m:<w0$} | {v:>w1$} |");
    }
    out.push_str(&rule);
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Vertical bar chart as a standalone SVG document.
pub fn bar_chart_svg(title: &str, unit: &str, bars: &[(String, f64)]) -> String {
    let (w, h) = (120.0 + 110.0 * bars.len().max(1) as f64, 320.0);
    let (left, top, bottom) = (60.0, 40.0, 50.0);
    let plot_h = h - top - bottom;
    let max = bars.iter().map(|b| b.1).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let scale = if max > 0.0 { plot_h / max } else { 0.0 };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(
        svg,
        r#"  <text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        w / 2.0,
        xml_escape(title)
    );
    let axis_y = top + plot_h;
    let _ = writeln!(
        svg,
        r#"  <line x1="{left}" y1="{top}" x2="{left}" y2="{axis_y}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"  <line x1="{left}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="black"/>"#,
        w - 20.0
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let bh = if v.is_finite() { v.max(0.0) * scale } else { 0.0 };
        let x = left + 30.0 + 110.0 * i as f64;
        let _ = writeln!(
            svg,
            r##"  <rect x="{x}" y="{:.3}" width="70" height="{bh:.3}" fill="#4a78a8"/>"##,
            axis_y - bh
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{}" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="12">{v:.4} {}</text>"#,
            x + 35.0,
            axis_y - bh - 6.0,
            xml_escape(unit)
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            x + 35.0,
            axis_y + 18.0,
            xml_escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}
