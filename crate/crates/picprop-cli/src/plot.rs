//! Minimal SVG band plots: the interval as a filled polygon with the two
//! bound curves on top, plus the exact solution when the problem has one.
//! Output is plain SVG text with deterministic contents and file names.

use anyhow::{bail, Context, Result};
use std::fmt::Write as _;
use std::path::Path;

pub struct Series {
    pub xs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub truth: Option<Vec<f64>>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 52.0;

fn path(points: impl Iterator<Item = (f64, f64)>) -> String {
    let mut s = String::new();
    for (i, (x, y)) in points.enumerate() {
        let cmd = if i == 0 { 'M' } else { 'L' };
        let _ = write!(s, "{cmd}{x:.2} {y:.2} ");
    }
    s
}

/// Render one band to an SVG string.
pub fn band_svg(title: &str, xlabel: &str, series: &Series) -> Result<String> {
    if series.xs.is_empty() {
        bail!("no data points to plot");
    }
    let xmin = series.xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let xmax = series.xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut ymin = series.lower.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut ymax = series.upper.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if let Some(t) = &series.truth {
        ymin = t.iter().cloned().fold(ymin, f64::min);
        ymax = t.iter().cloned().fold(ymax, f64::max);
    }
    let pad = 0.08 * (ymax - ymin).max(1e-9);
    ymin -= pad;
    ymax += pad;
    let sx = |x: f64| MARGIN + (x - xmin) / (xmax - xmin).max(1e-300) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - ymin) / (ymax - ymin).max(1e-300) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);

    // Band polygon: upper curve forward, lower curve reversed.
    let mut poly = String::new();
    for (x, u) in series.xs.iter().zip(&series.upper) {
        let _ = write!(poly, "{:.2},{:.2} ", sx(*x), sy(*u));
    }
    for (x, l) in series.xs.iter().zip(&series.lower).rev() {
        let _ = write!(poly, "{:.2},{:.2} ", sx(*x), sy(*l));
    }
    let _ = write!(
        svg,
        r##"<polygon points="{poly}" fill="#9ecae1" fill-opacity="0.45" stroke="none"/>"##
    );

    let upper_path = path(series.xs.iter().zip(&series.upper).map(|(x, y)| (sx(*x), sy(*y))));
    let lower_path = path(series.xs.iter().zip(&series.lower).map(|(x, y)| (sx(*x), sy(*y))));
    let _ = write!(
        svg,
        r##"<path d="{upper_path}" fill="none" stroke="#2171b5" stroke-width="1.6"/>"##
    );
    let _ = write!(
        svg,
        r##"<path d="{lower_path}" fill="none" stroke="#2171b5" stroke-width="1.6"/>"##
    );
    if let Some(truth) = &series.truth {
        let tp = path(series.xs.iter().zip(truth).map(|(x, y)| (sx(*x), sy(*y))));
        let _ = write!(
            svg,
            r##"<path d="{tp}" fill="none" stroke="#d94801" stroke-width="1.4" stroke-dasharray="6 3"/>"##
        );
    }

    // Axes with a few ticks.
    let _ = write!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        r = W - MARGIN,
        t = MARGIN,
        b = H - MARGIN
    );
    for i in 0..=4 {
        let fx = xmin + (xmax - xmin) * i as f64 / 4.0;
        let fy = ymin + (ymax - ymin) * i as f64 / 4.0;
        let _ = write!(
            svg,
            r#"<text x="{:.1}" y="{}" font-size="11" text-anchor="middle">{fx:.2}</text>"#,
            sx(fx),
            H - MARGIN + 16.0
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{fy:.2}</text>"#,
            MARGIN - 6.0,
            sy(fy) + 4.0
        );
        let _ = write!(
            svg,
            r#"<line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="black"/>"#,
            sx(fx),
            H - MARGIN,
            H - MARGIN + 4.0
        );
    }
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{xlabel}</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="22" font-size="14" text-anchor="middle">{title}</text>"#,
        W / 2.0
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// (dimension, query points, lower bounds, upper bounds)
pub type BandData = (usize, Vec<Vec<f64>>, Vec<f64>, Vec<f64>);

/// Parse a band CSV produced by the runner: x0..x{d-1}, lower, upper.
pub fn read_band_csv(path: &Path) -> Result<BandData> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty band csv")?;
    let cols: Vec<&str> = header.split(',').collect();
    let dim = cols.iter().filter(|c| c.starts_with('x')).count();
    if dim == 0 || cols.len() != dim + 2 {
        bail!("unexpected band csv header: {header}");
    }
    let mut queries = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|e| anyhow::anyhow!("{e}: {v}")))
            .collect::<Result<_>>()?;
        queries.push(vals[..dim].to_vec());
        lower.push(vals[dim]);
        upper.push(vals[dim + 1]);
    }
    Ok((dim, queries, lower, upper))
}

/// Reference curve for overlaying on plots.
pub type TruthFn<'a> = &'a dyn Fn(&[f64]) -> f64;

/// Rows whose `slice_dim` coordinate is (nearly) `value`, sorted by the other
/// coordinate.
#[allow(clippy::too_many_arguments)]
pub fn slice_series(
    queries: &[Vec<f64>],
    lower: &[f64],
    upper: &[f64],
    truth: Option<TruthFn<'_>>,
    slice_dim: usize,
    value: f64,
    plot_dim: usize,
) -> Series {
    let mut rows: Vec<(f64, f64, f64, Option<f64>)> = queries
        .iter()
        .enumerate()
        .filter(|(_, q)| (q[slice_dim] - value).abs() < 1e-9)
        .map(|(i, q)| {
            (
                q[plot_dim],
                lower[i],
                upper[i],
                truth.map(|t| t(q)),
            )
        })
        .collect();
    rows.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Series {
        xs: rows.iter().map(|r| r.0).collect(),
        lower: rows.iter().map(|r| r.1).collect(),
        upper: rows.iter().map(|r| r.2).collect(),
        truth: if truth.is_some() {
            Some(rows.iter().map(|r| r.3.unwrap()).collect())
        } else {
            None
        },
    }
}
