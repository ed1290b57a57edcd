//! Tabular reports: per-operation analysis and roofline points.

use std::fmt::Write as _;

use crate::arch::{ModelConfig, Phase};
use crate::costmodel::{aggregate, op_costs, OpCost, UpdateLayout};
use crate::error::{Error, Result};
use crate::hardware::{attainable_flops, classify, lower_bound_time, ridge_point, HardwareSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            other => Err(Error::invalid("format", format!("`{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Real(f64),
}

impl Cell {
    /// Two decimals for markdown, shortest round-trip form for CSV.
    pub fn render(&self, format: Format) -> String {
        match (self, format) {
            (Cell::Text(s), _) => s.clone(),
            (Cell::Int(v), _) => v.to_string(),
            (Cell::Real(v), Format::Markdown) => format!("{v:.2}"),
            (Cell::Real(v), Format::Csv) => v.to_string(),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ReportTable {
    pub fn new(title: impl Into<String>, headers: &[&str]) -> Self {
        ReportTable {
            title: title.into(),
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.headers.len() {
            return Err(Error::invalid(
                "report row",
                format!("{} cells for {} columns", row.len(), self.headers.len()),
            ));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Markdown => self.to_markdown(),
            Format::Csv => self.to_csv(),
        }
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        if !self.title.is_empty() {
            let _ = writeln!(out, "### {}\n", self.title);
        }
        let _ = writeln!(out, "| {} |", self.headers.join(" | "));
        let _ = writeln!(
            out,
            "|{}|",
            self.headers
                .iter()
                .map(|_| "---")
                .collect::<Vec<_>>()
                .join("|")
        );
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|c| c.render(Format::Markdown)).collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(|c| c.render(Format::Csv)))
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }
}

pub const ANALYSIS_HEADERS: [&str; 6] = [
    "op",
    "flops",
    "mops_bytes",
    "arithmetic_intensity",
    "bound",
    "lower_bound_ms",
];

/// One row per operation of one decoder layer plus a whole-stack totals row.
pub fn analyze(
    cfg: &ModelConfig,
    hw: &HardwareSpec,
    b: u64,
    s: u64,
    phase: Phase,
    layout: UpdateLayout,
) -> Result<ReportTable> {
    let costs = op_costs(cfg, phase, b, s, layout)?;
    let title = format!(
        "{phase} b={b} s={s} on {} (per layer; ridge {:.2} FLOP/B)",
        hw.name,
        ridge_point(hw)
    );
    let mut table = ReportTable::new(title, &ANALYSIS_HEADERS);
    for c in &costs {
        table.push(vec![
            Cell::Text(c.kind.to_string()),
            Cell::Int(c.flops),
            Cell::Int(c.mops),
            Cell::Real(c.arithmetic_intensity),
            Cell::Text(classify(c, hw)?.to_string()),
            Cell::Real(lower_bound_time(c, hw) * 1e3),
        ])?;
    }

    let total = aggregate(&costs, cfg)?;
    let lower: f64 =
        costs.iter().map(|c| lower_bound_time(c, hw)).sum::<f64>() * cfg.num_layers as f64;
    table.push(vec![
        Cell::Text(format!("total (x{} layers)", cfg.num_layers)),
        Cell::Int(total.total_flops),
        Cell::Int(total.total_mops),
        Cell::Real(total.arithmetic_intensity()),
        Cell::Text(String::new()),
        Cell::Real(lower * 1e3),
    ])?;
    Ok(table)
}

pub const ROOFLINE_HEADERS: [&str; 4] = [
    "op",
    "arithmetic_intensity",
    "attainable_flops_per_s",
    "ridge_point",
];

/// Roofline points; each row repeats the device's ridge point.
pub fn roofline_table(costs: &[OpCost], hw: &HardwareSpec) -> ReportTable {
    let ridge = ridge_point(hw);
    let mut table = ReportTable::new(format!("roofline on {}", hw.name), &ROOFLINE_HEADERS);
    for c in costs {
        table
            .push(vec![
                Cell::Text(c.kind.to_string()),
                Cell::Real(c.arithmetic_intensity),
                Cell::Real(attainable_flops(c.arithmetic_intensity, hw)),
                Cell::Real(ridge),
            ])
            .expect("fixed arity");
    }
    table
}

/// Log-log scatter of attainable performance with the roofline and the
/// ridge as a vertical line.
pub fn roofline_svg(costs: &[OpCost], hw: &HardwareSpec) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 50.0;
    let ridge = ridge_point(hw);
    let peak = hw.peak_flops_per_s as f64;

    let positive: Vec<f64> = costs
        .iter()
        .map(|c| c.arithmetic_intensity)
        .filter(|ai| *ai > 0.0)
        .collect();
    let lo = positive
        .iter()
        .copied()
        .fold(ridge, f64::min)
        .min(ridge / 100.0);
    let hi = positive
        .iter()
        .copied()
        .fold(ridge, f64::max)
        .max(ridge * 100.0);
    let (x_lo, x_hi) = (lo.log10().floor(), hi.log10().ceil());
    let y_hi = peak.log10().ceil();
    let y_lo = (attainable_flops(10f64.powf(x_lo), hw)).log10().floor();

    let x = |ai: f64| PAD + (ai.log10() - x_lo) / (x_hi - x_lo) * (W - 2.0 * PAD);
    let y = |f: f64| H - PAD - (f.log10() - y_lo) / (y_hi - y_lo) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"  <title>roofline {}</title>"#, escape(&hw.name));
    let _ = writeln!(
        svg,
        r##"  <rect x="0" y="0" width="{W}" height="{H}" fill="#ffffff"/>"##
    );
    let left = 10f64.powf(x_lo);
    let right = 10f64.powf(x_hi);
    let _ = writeln!(
        svg,
        r##"  <polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{:.1},{:.1} {:.1},{:.1} {:.1},{:.1}"/>"##,
        x(left),
        y(attainable_flops(left, hw)),
        x(ridge),
        y(peak),
        x(right),
        y(peak)
    );
    let _ = writeln!(
        svg,
        r##"  <line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#7f7f7f" stroke-dasharray="4 4"/>"##,
        x(ridge),
        PAD,
        x(ridge),
        H - PAD
    );
    for c in costs.iter().filter(|c| c.arithmetic_intensity > 0.0) {
        let ai = c.arithmetic_intensity;
        let _ = writeln!(
            svg,
            r##"  <circle cx="{:.1}" cy="{:.1}" r="4" fill="#d62728"><title>{} ai={:.2}</title></circle>"##,
            x(ai),
            y(attainable_flops(ai, hw)),
            c.kind,
            ai
        );
    }
    let _ = writeln!(
        svg,
        r#"  <text x="{:.1}" y="{:.1}" font-size="12">ridge {:.2} FLOP/B</text>"#,
        x(ridge) + 4.0,
        PAD + 12.0,
        ridge
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
