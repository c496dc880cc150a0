// SPDX-License-Identifier: MIT OR Apache-2.0

//! SVG figures: lens and trace heatmaps, routing bar charts.
//!
//! Output is a pure function of its inputs. Numbers are printed with fixed
//! precision and elements are emitted in row-major order.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lens::LensGrid;
use crate::routing::{normalize, RoutingReport};
use crate::tracing::TraceGrid;

const CELL_W: usize = 72;
const CELL_H: usize = 24;
const LABEL_W: usize = 56;
const HEADER_H: usize = 32;
const FOOTER_H: usize = 48;
const MAX_LABEL_CHARS: usize = 10;

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c if c.is_control() => out.push('\u{FFFD}'),
            c => out.push(c),
        }
    }
    out
}

fn clip(s: &str) -> String {
    if s.chars().count() <= MAX_LABEL_CHARS {
        s.to_owned()
    } else {
        let head: String = s.chars().take(MAX_LABEL_CHARS - 1).collect();
        format!("{head}…")
    }
}

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    let t = t.clamp(0.0, 1.0);
    (a as f64 + (b as f64 - a as f64) * t).round() as u8
}

fn rgb(c: (u8, u8, u8)) -> String {
    format!("#{:02x}{:02x}{:02x}", c.0, c.1, c.2)
}

fn header(width: usize, height: usize, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">"#
    );
    let _ = writeln!(
        s,
        "<style>.cell text{{text-anchor:middle;dominant-baseline:central}} .english rect{{stroke:#8b0000;stroke-width:2}} .masked rect{{fill:#9e9e9e}}</style>"
    );
    let _ = writeln!(s, r#"<text class="title" x="4" y="18" font-size="13">{}</text>"#, escape(title));
    s
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LensRenderOptions {
    pub title: String,
    /// Normalized English forms; matching cells get the `english` class.
    pub english: HashSet<String>,
    /// Normalized flagged terms.
    pub flagged: HashSet<String>,
    /// Gray out flagged cells and omit their label.
    pub mask_flagged: bool,
    /// First layer drawn.
    pub layer_offset: usize,
}

/// Lens heatmap: one cell per (layer, step), top layer first, shaded by
/// the top-1 probability.
pub fn render_lens_svg(grid: &LensGrid, opts: &LensRenderOptions) -> Result<String> {
    let cols = grid.n_columns();
    if cols == 0 || grid.rows.is_empty() {
        return Err(Error::EmptyInput("lens grid has no cells".into()));
    }
    if opts.layer_offset > grid.n_layers() {
        return Err(Error::OutOfRange(format!(
            "layer offset {} above top layer {}",
            opts.layer_offset,
            grid.n_layers()
        )));
    }
    let layers: Vec<usize> = (opts.layer_offset..=grid.n_layers()).rev().collect();
    let width = LABEL_W + cols * CELL_W + 8;
    let height = HEADER_H + layers.len() * CELL_H + FOOTER_H;
    let mut s = header(width, height, &opts.title);
    for (r, &layer) in layers.iter().enumerate() {
        let y = HEADER_H + r * CELL_H;
        let _ = writeln!(
            s,
            r#"<text class="row-label" x="4" y="{}" dominant-baseline="central">L{layer}</text>"#,
            y + CELL_H / 2
        );
        for c in 0..cols {
            let cell = grid.cell(layer, c);
            let x = LABEL_W + c * CELL_W;
            let top = cell.top1();
            let norm = normalize(top);
            let prob = cell.top.first().map_or(0.0, |t| t.prob);
            let flagged = opts.flagged.contains(&norm);
            let mut class = String::from("cell");
            if opts.english.contains(&norm) {
                class.push_str(" english");
            }
            if flagged {
                class.push_str(" flagged");
                if opts.mask_flagged {
                    class.push_str(" masked");
                }
            }
            let fill = rgb((lerp(255, 66, prob), lerp(255, 133, prob), lerp(255, 244, prob)));
            let _ = write!(
                s,
                r##"<g class="{class}" data-layer="{layer}" data-col="{c}"><rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" stroke="#ffffff"/>"##
            );
            if !(flagged && opts.mask_flagged) {
                let _ = write!(
                    s,
                    r#"<text x="{}" y="{}">{}</text>"#,
                    x + CELL_W / 2,
                    y + CELL_H / 2,
                    escape(&clip(top))
                );
            }
            let _ = writeln!(s, "</g>");
        }
    }
    let y = HEADER_H + layers.len() * CELL_H + 16;
    for (c, tok) in grid.generated_tokens.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="col-label" x="{}" y="{y}" text-anchor="middle">{}</text>"#,
            LABEL_W + c * CELL_W + CELL_W / 2,
            escape(&clip(tok))
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Trace heatmap: AIE per (layer, prompt token) on a diverging scale
/// (blue negative, white zero, red positive).
pub fn render_trace_svg(grid: &TraceGrid, title: &str) -> Result<String> {
    let rows = grid.aie.len();
    let cols = grid.aie.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyInput("trace grid has no cells".into()));
    }
    let scale = grid
        .aie
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let width = LABEL_W + cols * CELL_W + 8;
    let height = HEADER_H + rows * CELL_H + FOOTER_H;
    let mut s = header(width, height, title);
    for (r, layer) in (0..rows).rev().enumerate() {
        let y = HEADER_H + r * CELL_H;
        let _ = writeln!(
            s,
            r#"<text class="row-label" x="4" y="{}" dominant-baseline="central">L{layer}</text>"#,
            y + CELL_H / 2
        );
        for (c, &v) in grid.aie[layer].iter().enumerate() {
            let x = LABEL_W + c * CELL_W;
            let t = v / scale;
            let fill = if t >= 0.0 {
                rgb((lerp(255, 178, t), lerp(255, 24, t), lerp(255, 43, t)))
            } else {
                rgb((lerp(255, 33, -t), lerp(255, 102, -t), lerp(255, 172, -t)))
            };
            let _ = writeln!(
                s,
                r##"<g class="cell" data-layer="{layer}" data-col="{c}"><rect x="{x}" y="{y}" width="{CELL_W}" height="{CELL_H}" fill="{fill}" stroke="#ffffff"/><text x="{}" y="{}">{v:.3}</text></g>"##,
                x + CELL_W / 2,
                y + CELL_H / 2
            );
        }
    }
    let y = HEADER_H + rows * CELL_H + 16;
    for (c, tok) in grid.tokens.iter().enumerate() {
        let subject = if grid.subject_span.contains(&c) { " subject" } else { "" };
        let label = if subject.is_empty() { clip(tok) } else { format!("{}*", clip(tok)) };
        let _ = writeln!(
            s,
            r#"<text class="col-label{subject}" x="{}" y="{y}" text-anchor="middle">{}</text>"#,
            LABEL_W + c * CELL_W + CELL_W / 2,
            escape(&label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Bar per POS tag (plus `overall`) with a standard-error whisker.
pub fn render_routing_bars(report: &RoutingReport, title: &str) -> Result<String> {
    let bars: Vec<(&str, f64, f64, usize)> = report
        .per_pos
        .iter()
        .map(|(k, c)| (k.as_str(), c.proportion, c.std_error, c.n_words))
        .chain(std::iter::once((
            "overall",
            report.overall.proportion,
            report.overall.std_error,
            report.overall.n_words,
        )))
        .collect();
    const BAR_W: usize = 48;
    const GAP: usize = 16;
    const PLOT_H: f64 = 200.0;
    let width = LABEL_W + bars.len() * (BAR_W + GAP) + 8;
    let height = HEADER_H + PLOT_H as usize + FOOTER_H;
    let base = HEADER_H as f64 + PLOT_H;
    let mut s = header(width, height, title);
    let _ = writeln!(
        s,
        r##"<line class="axis" x1="{LABEL_W}" y1="{base:.2}" x2="{}" y2="{base:.2}" stroke="#000000"/>"##,
        width - 8
    );
    for (i, (label, p, se, n)) in bars.iter().enumerate() {
        let x = LABEL_W + GAP / 2 + i * (BAR_W + GAP);
        let h = p * PLOT_H;
        let cx = x + BAR_W / 2;
        let lo = base - (p - se).max(0.0) * PLOT_H;
        let hi = base - (p + se).min(1.0) * PLOT_H;
        let _ = writeln!(
            s,
            r##"<g class="bar" data-pos="{}" data-n="{n}"><rect x="{x}" y="{:.2}" width="{BAR_W}" height="{h:.2}" fill="#4285f4"/><line x1="{cx}" y1="{lo:.2}" x2="{cx}" y2="{hi:.2}" stroke="#000000"/><text x="{cx}" y="{:.2}" text-anchor="middle">{p:.2}</text><text x="{cx}" y="{:.2}" text-anchor="middle">{}</text></g>"##,
            escape(label),
            base - h,
            hi - 4.0,
            base + 16.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn write_svg(path: impl AsRef<Path>, svg: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}
