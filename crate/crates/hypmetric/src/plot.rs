//! SVG rendering of 2-d ball embeddings: the unit-circle boundary, points
//! colored by class, and a radius legend in units of hyperbolic distance to
//! the origin.
//!
//! Coordinates are normalized by `sqrt(c)` so the clipped ball maps onto the
//! unit disk regardless of curvature.

use crate::error::{Error, Result};
use crate::io::EmbeddingFile;

/// Distinguishable per-class palette; classes beyond its length cycle.
const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#aec7e8", "#ffbb78",
];

#[derive(Debug, Clone)]
pub struct PlotOptions {
    /// Canvas edge in pixels.
    pub size: u32,
    /// Point radius in pixels.
    pub point_radius: f64,
}

impl Default for PlotOptions {
    fn default() -> Self {
        PlotOptions {
            size: 800,
            point_radius: 3.0,
        }
    }
}

pub fn render_svg(file: &EmbeddingFile, opts: &PlotOptions) -> Result<String> {
    if file.dim != 2 {
        return Err(Error::DimensionNotPlottable(file.dim));
    }
    let size = opts.size as f64;
    let margin = 0.08 * size;
    let disk_r = size / 2.0 - margin;
    let center = size / 2.0;
    let sqrt_c = file.curvature.sqrt();

    let mut labels: Vec<u32> = file.records.iter().map(|r| r.label).collect();
    labels.sort_unstable();
    labels.dedup();

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{0}\" viewBox=\"0 0 {0} {0}\">\n",
        opts.size
    ));
    svg.push_str(&format!(
        "  <rect width=\"{0}\" height=\"{0}\" fill=\"white\"/>\n",
        opts.size
    ));
    svg.push_str(&format!(
        "  <circle cx=\"{center}\" cy=\"{center}\" r=\"{disk_r}\" fill=\"none\" stroke=\"black\" stroke-width=\"1.5\"/>\n"
    ));

    // Radius legend: dashed circles annotated with the hyperbolic distance
    // to the origin at that normalized radius.
    for frac in [0.25, 0.5, 0.75] {
        let d0 = 2.0 / sqrt_c * f64::atanh(frac);
        svg.push_str(&format!(
            "  <circle cx=\"{center}\" cy=\"{center}\" r=\"{:.2}\" fill=\"none\" stroke=\"#bbbbbb\" stroke-width=\"0.8\" stroke-dasharray=\"4 4\"/>\n",
            disk_r * frac
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" fill=\"#888888\">d0={d0:.2}</text>\n",
            center + disk_r * frac * std::f64::consts::FRAC_1_SQRT_2 + 3.0,
            center - disk_r * frac * std::f64::consts::FRAC_1_SQRT_2 - 3.0
        ));
    }

    for r in &file.records {
        let x = center + r.coords[0] * sqrt_c * disk_r;
        let y = center - r.coords[1] * sqrt_c * disk_r;
        let color_idx = labels.binary_search(&r.label).unwrap() % PALETTE.len();
        svg.push_str(&format!(
            "  <circle class=\"pt\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{}\" fill=\"{}\" fill-opacity=\"0.85\"/>\n",
            opts.point_radius,
            PALETTE[color_idx]
        ));
    }

    // Class legend.
    for (slot, label) in labels.iter().enumerate() {
        let y = 16.0 + 16.0 * slot as f64;
        if y > size - 10.0 {
            break;
        }
        svg.push_str(&format!(
            "  <rect x=\"8\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n",
            y - 9.0,
            PALETTE[slot % PALETTE.len()]
        ));
        svg.push_str(&format!(
            "  <text x=\"22\" y=\"{y:.1}\" font-size=\"12\" fill=\"#333333\">class {label}</text>\n"
        ));
    }

    svg.push_str("</svg>\n");
    Ok(svg)
}
