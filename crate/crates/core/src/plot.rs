//! Self-contained SVG line plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const WIDTH: f64 = 960.0;
pub const HEIGHT: f64 = 480.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 30.0, 50.0); // left, right, top, bottom
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#17becf"];
const BAND_COLOR: &str = "#ff7f0e";

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self { label: label.into(), values }
    }
}

/// Shaded region between `lower` and `upper`.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub label: String,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Band {
    /// `mean ± z·sqrt(var)`.
    pub fn from_moments(label: impl Into<String>, mean: &[f64], var: &[f64], z: f64) -> Self {
        let sd = var.iter().map(|v| v.max(0.0).sqrt());
        let (lower, upper) = mean.iter().zip(sd).map(|(m, s)| (m - z * s, m + z * s)).unzip();
        Self { label: label.into(), lower, upper }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Y range with 5% padding; a flat range is widened to ±0.5 (or ±5%).
pub fn y_range(series: &[Series], band: Option<&Band>) -> (f64, f64) {
    let all = series
        .iter()
        .flat_map(|s| s.values.iter())
        .chain(band.into_iter().flat_map(|b| b.lower.iter().chain(&b.upper)))
        .copied()
        .filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if hi - lo <= f64::EPSILON * lo.abs().max(1.0) {
        let pad = if lo == 0.0 { 0.5 } else { 0.05 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn render_svg(title: &str, series: &[Series], band: Option<&Band>) -> Result<String> {
    let n = series.first().map(|s| s.values.len()).unwrap_or(0);
    let lens_match = series.iter().all(|s| s.values.len() == n)
        && band.is_none_or(|b| b.lower.len() == n && b.upper.len() == n);
    if !lens_match {
        return Err(Error::Dimension("plot series and band must have equal lengths".into()));
    }
    let (left, right, top, bottom) = MARGIN;
    let (pw, ph) = (WIDTH - left - right, HEIGHT - top - bottom);
    let (ymin, ymax) = y_range(series, band);
    let x = |i: usize| left + if n > 1 { pw * i as f64 / (n - 1) as f64 } else { pw / 2.0 };
    let y = |v: f64| top + ph * (ymax - v) / (ymax - ymin);
    let path = |vals: &mut dyn Iterator<Item = (usize, f64)>| {
        let mut d = String::new();
        for (i, v) in vals {
            let _ = write!(d, "{}{:.2},{:.2} ", if d.is_empty() { "M" } else { "L" }, x(i), y(v));
        }
        d
    };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, WIDTH / 2.0, escape(title));

    if let Some(b) = band.filter(|_| n > 0) {
        let mut d = path(&mut b.upper.iter().copied().enumerate());
        for i in (0..n).rev() {
            let _ = write!(d, "L{:.2},{:.2} ", x(i), y(b.lower[i]));
        }
        d.push('Z');
        let _ = writeln!(svg, r#"<path d="{d}" fill="{BAND_COLOR}" fill-opacity="0.3" stroke="none"/>"#);
    }
    for (k, s) in series.iter().enumerate().filter(|_| n > 0) {
        let d = path(&mut s.values.iter().copied().enumerate());
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(svg, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
    }

    // axes with five ticks each
    let _ = writeln!(
        svg,
        r#"<path d="M{left},{top} L{left},{yb} L{xr},{yb}" fill="none" stroke="black"/>"#,
        yb = top + ph,
        xr = left + pw
    );
    for k in 0..=4 {
        let v = ymin + (ymax - ymin) * k as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{v:.3}</text>"#, left - 6.0, y(v) + 4.0);
        let i = (n.saturating_sub(1) * k) / 4;
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="middle">{i}</text>"#, x(i), top + ph + 18.0);
    }

    let mut entries: Vec<(String, &str)> =
        series.iter().enumerate().map(|(k, s)| (s.label.clone(), PALETTE[k % PALETTE.len()])).collect();
    if let Some(b) = band {
        entries.push((b.label.clone(), BAND_COLOR));
    }
    for (k, (label, color)) in entries.iter().enumerate() {
        let ly = top + 12.0 + 16.0 * k as f64;
        let lx = left + pw - 150.0;
        let _ = writeln!(svg, r#"<rect x="{lx}" y="{}" width="14" height="8" fill="{color}"/>"#, ly - 8.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{ly}" font-size="11">{}</text>"#, lx + 20.0, escape(label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn emit_plot(path: &Path, title: &str, series: &[Series], band: Option<&Band>) -> Result<()> {
    crate::io::write_file(path, render_svg(title, series, band)?)
}
