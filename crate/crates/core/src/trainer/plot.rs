//! Learning-curve SVG rendered from a metrics CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::tensor::Float;

use super::metrics::{read_metrics, EpisodeRecord};

const WIDTH: Float = 720.0;
const HEIGHT: Float = 360.0;
const MARGIN: Float = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Trailing moving average over `window` points.
pub fn smooth(values: &[Float], window: usize) -> Vec<Float> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= w {
            sum -= values[i - w];
        }
        out.push(sum / (i + 1).min(w) as Float);
    }
    out
}

/// One polyline per environment of smoothed episode return against frame.
pub fn render_svg(records: &[EpisodeRecord], window: usize) -> String {
    let mut series: BTreeMap<&str, Vec<(Float, Float)>> = BTreeMap::new();
    for r in records {
        series.entry(&r.env).or_default().push((r.frame as Float, r.episode_return));
    }
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if records.is_empty() {
        let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{MARGIN}">no episodes</text></svg>"#);
        return svg;
    }
    let smoothed: Vec<(&str, Vec<(Float, Float)>)> = series
        .into_iter()
        .map(|(name, pts)| {
            let ys: Vec<Float> = pts.iter().map(|p| p.1).collect();
            let s = smooth(&ys, window);
            (name, pts.iter().zip(s).map(|(p, y)| (p.0, y)).collect())
        })
        .collect();
    let all = smoothed.iter().flat_map(|(_, p)| p.iter());
    let (mut x1, mut y0, mut y1) = (1.0 as Float, Float::INFINITY, Float::NEG_INFINITY);
    for &(x, y) in all {
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if y1 - y0 < 1e-9 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let sx = |x: Float| MARGIN + x / x1 * (WIDTH - 2.0 * MARGIN);
    let sy = |y: Float| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{MARGIN},{top} V{bottom} H{right}" stroke="black" fill="none"/>"#,
        top = MARGIN,
        bottom = HEIGHT - MARGIN,
        right = WIDTH - MARGIN
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}">{y1:.2}</text>"#, 4.0, MARGIN + 4.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}">{y0:.2}</text>"#, 4.0, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end">frame {x1}</text>"#,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 16.0
    );
    for (k, (name, pts)) in smoothed.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            d.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            WIDTH - MARGIN + 4.0,
            MARGIN + 14.0 * k as Float
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn plot_file(metrics: &Path, output: &Path, window: usize) -> Result<()> {
    let records = read_metrics(metrics)?;
    std::fs::write(output, render_svg(&records, window))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average() {
        assert_eq!(smooth(&[1.0, 3.0, 5.0, 7.0], 2), vec![1.0, 2.0, 4.0, 6.0]);
    }

    #[test]
    fn empty_plot_is_valid_svg() {
        let s = render_svg(&[], 5);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
    }
}
