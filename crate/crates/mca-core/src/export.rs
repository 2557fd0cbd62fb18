//! Renderers for grid-shaped artifacts: ASCII PGM heatmaps with a recorded
//! normalization range, a small standalone SVG rendering, and plain CSV.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// The linear range a heatmap was normalized with, written next to the
/// image so values can be recovered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

fn range_of(values: &Array2<f64>) -> ValueRange {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
    }
    ValueRange { min, max }
}

fn normalized(v: f64, range: ValueRange) -> f64 {
    if range.max > range.min {
        (v - range.min) / (range.max - range.min)
    } else {
        0.0 // flat maps render dark rather than divide by zero
    }
}

/// Min-max normalized ASCII PGM (P2), brightest cell = max value.
pub fn grid_to_pgm(values: &Array2<f64>) -> (String, ValueRange) {
    let range = range_of(values);
    let (rows, cols) = values.dim();
    let mut out = format!("P2\n{cols} {rows}\n255\n");
    for row in values.rows() {
        let line: Vec<String> = row
            .iter()
            .map(|&v| ((normalized(v, range) * 255.0).round() as u32).to_string())
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    (out, range)
}

// dark-to-bright ramp sampled at 8 stops
const RAMP: [&str; 8] = [
    "#440154", "#46327e", "#365c8d", "#277f8e", "#1fa187", "#4ac16d", "#a0da39", "#fde725",
];

/// Self-contained SVG heatmap using the same normalization as the PGM.
pub fn grid_to_svg(values: &Array2<f64>) -> String {
    let range = range_of(values);
    let (rows, cols) = values.dim();
    let cell = 16usize;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" shape-rendering=\"crispEdges\">\n",
        cols * cell,
        rows * cell
    );
    for (r, row) in values.rows().into_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let t = normalized(v, range);
            let stop = ((t * 8.0) as usize).min(7);
            let _ = writeln!(
                out,
                "  <rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\"/>",
                c * cell,
                r * cell,
                RAMP[stop]
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// One CSV line per grid row, full-precision values.
pub fn grid_to_csv(values: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
