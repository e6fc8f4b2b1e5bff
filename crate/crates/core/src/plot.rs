//! Minimal SVG emitters: a class-colored scatter plot and a labeled
//! heatmap. Output is plain text with fixed numeric precision, so the same
//! input always yields the same bytes.
//!
//! Heatmap color scale: linear in the cell value, clamped to [0, 1], from
//! white (0) to dark blue `#08306b` (1).

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlotError {
    #[error("nothing to plot")]
    Empty,
    #[error("{0}")]
    Shape(String),
    #[error("non-finite value in plot input")]
    NonFinite,
}

impl PlotError {
    pub fn code(&self) -> &'static str {
        match self {
            PlotError::Empty => "EmptyPlot",
            PlotError::Shape(_) => "PlotShapeMismatch",
            PlotError::NonFinite => "NonFinite",
        }
    }
}

/// Ten-color categorical palette; labels beyond ten wrap around.
pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

const LOW: [f64; 3] = [255.0, 255.0, 255.0];
const HIGH: [f64; 3] = [8.0, 48.0, 107.0];

/// Color for a heatmap value.
pub fn heat_color(value: f64) -> String {
    let t = value.clamp(0.0, 1.0);
    let c: [u8; 3] = std::array::from_fn(|k| (LOW[k] + t * (HIGH[k] - LOW[k])).round() as u8);
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn open(width: f64, height: f64, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    s
}

/// Scatter of 2-D points colored by `labels`, with a legend of
/// `class_names`.
pub fn scatter_svg(
    points: &[[f64; 2]],
    labels: &[usize],
    class_names: &[String],
    title: &str,
) -> Result<String, PlotError> {
    if points.is_empty() {
        return Err(PlotError::Empty);
    }
    if labels.len() != points.len() {
        return Err(PlotError::Shape("one label per point required".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
        return Err(PlotError::Shape(format!("label {l} has no class name")));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PlotError::NonFinite);
    }
    let (plot, margin, legend_w) = (480.0, 40.0, 220.0);
    let width = margin * 2.0 + plot + legend_w;
    let height = margin * 2.0 + plot;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span: [f64; 2] = std::array::from_fn(|k| if hi[k] > lo[k] { hi[k] - lo[k] } else { 1.0 });
    let sx = |v: f64| margin + (v - lo[0]) / span[0] * plot;
    let sy = |v: f64| margin + plot - (v - lo[1]) / span[1] * plot;

    let mut s = open(width, height, title);
    let _ = writeln!(
        s,
        r##"<rect x="{margin:.1}" y="{margin:.1}" width="{plot:.1}" height="{plot:.1}" fill="none" stroke="#999999"/>"##
    );
    let _ = writeln!(s, "<g class=\"points\">");
    for (p, &l) in points.iter().zip(labels) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.8" data-class="{}"/>"#,
            sx(p[0]),
            sy(p[1]),
            PALETTE[l % PALETTE.len()],
            l
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "<g class=\"legend\">");
    for (i, name) in class_names.iter().enumerate() {
        let y = margin + 10.0 + 20.0 * i as f64;
        let x = margin * 2.0 + plot;
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{y:.1}" r="5" fill="{}"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#,
            x,
            PALETTE[i % PALETTE.len()],
            x + 12.0,
            y + 4.0,
            escape(name)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    Ok(s)
}

/// Heatmap of a `rows × cols` matrix with row and column labels and the
/// value printed in each cell.
pub fn heatmap_svg(
    matrix: &[Vec<f64>],
    row_labels: &[String],
    col_labels: &[String],
    title: &str,
) -> Result<String, PlotError> {
    if matrix.is_empty() || matrix[0].is_empty() {
        return Err(PlotError::Empty);
    }
    let cols = matrix[0].len();
    if matrix.iter().any(|r| r.len() != cols) {
        return Err(PlotError::Shape("matrix rows differ in length".into()));
    }
    if row_labels.len() != matrix.len() || col_labels.len() != cols {
        return Err(PlotError::Shape("label counts do not match the matrix".into()));
    }
    if matrix.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PlotError::NonFinite);
    }
    let cell = 48.0;
    let label_w = 8.0 * row_labels.iter().map(|l| l.chars().count()).max().unwrap_or(0) as f64 + 16.0;
    let label_h = 7.0 * col_labels.iter().map(|l| l.chars().count()).max().unwrap_or(0) as f64 + 16.0;
    let top = 40.0 + label_h;
    let width = label_w + cell * cols as f64 + 90.0;
    let height = top + cell * matrix.len() as f64 + 20.0;

    let mut s = open(width, height, title);
    let _ = writeln!(s, "<g class=\"cells\">");
    for (i, row) in matrix.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let x = label_w + cell * j as f64;
            let y = top + cell * i as f64;
            let ink = if v > 0.5 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cell:.1}" height="{cell:.1}" fill="{}" data-row="{i}" data-col="{j}" data-value="{v:.6}"/><text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11" fill="{ink}">{v:.2}</text>"#,
                heat_color(v),
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, "<g class=\"labels\">");
    for (i, l) in row_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="12">{}</text>"#,
            label_w - 6.0,
            top + cell * i as f64 + cell / 2.0 + 4.0,
            escape(l)
        );
    }
    for (j, l) in col_labels.iter().enumerate() {
        let x = label_w + cell * j as f64 + cell / 2.0;
        let y = top - 6.0;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{y:.1}" font-size="12" transform="rotate(-60 {x:.1} {y:.1})">{}</text>"#,
            escape(l)
        );
    }
    let _ = writeln!(s, "</g>");
    // Color bar from 0 (bottom) to 1 (top).
    let bar_x = label_w + cell * cols as f64 + 24.0;
    let bar_h = cell * matrix.len() as f64;
    let _ = writeln!(
        s,
        r#"<defs><linearGradient id="scale" x1="0" y1="1" x2="0" y2="0"><stop offset="0" stop-color="{}"/><stop offset="1" stop-color="{}"/></linearGradient></defs>"#,
        heat_color(0.0),
        heat_color(1.0)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{bar_x:.1}" y="{top:.1}" width="16" height="{bar_h:.1}" fill="url(#scale)" stroke="#999999"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="11">1</text><text x="{:.1}" y="{:.1}" font-size="11">0</text>"#,
        bar_x + 20.0,
        top + 10.0,
        bar_x + 20.0,
        top + bar_h
    );
    s.push_str("</svg>\n");
    Ok(s)
}
