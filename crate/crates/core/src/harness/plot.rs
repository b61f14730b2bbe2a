//! Learning-curve plots rendered directly to SVG: success rate against
//! cumulative environment steps, with a mean line and a +/- one standard
//! deviation band across seeds.

use super::run::METRICS_HEADER;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 55.0;

struct Series {
    steps: Vec<f64>,
    success: Vec<f64>,
}

fn parse_metrics(path: &Path) -> Result<Series> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::InvalidInput(format!("{}: empty metrics file", path.display())))?;
    if header != METRICS_HEADER {
        return Err(Error::InvalidInput(format!(
            "{}: metrics schema mismatch (header {header:?})",
            path.display()
        )));
    }
    let mut steps = Vec::new();
    let mut success = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != METRICS_HEADER.split(',').count() {
            return Err(Error::InvalidInput(format!(
                "{}: row {} has {} columns",
                path.display(),
                n + 2,
                cols.len()
            )));
        }
        let parse = |i: usize| -> Result<f64> {
            cols[i].parse().map_err(|_| {
                Error::InvalidInput(format!("{}: bad number {:?}", path.display(), cols[i]))
            })
        };
        steps.push(parse(3)?);
        success.push(parse(5)?);
    }
    if steps.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no data rows", path.display())));
    }
    Ok(Series { steps, success })
}

/// Renders a success-rate curve from one or more metrics CSVs (one per seed)
/// into an SVG file. Series are aligned by iteration index and truncated to
/// the shortest run.
pub fn emit_plots(csv_paths: &[impl AsRef<Path>], out_svg: &Path) -> Result<()> {
    if csv_paths.is_empty() {
        return Err(Error::InvalidInput("no metrics files given".into()));
    }
    let series: Vec<Series> = csv_paths
        .iter()
        .map(|p| parse_metrics(p.as_ref()))
        .collect::<Result<_>>()?;
    let len = series.iter().map(|s| s.steps.len()).min().unwrap();
    let n = series.len() as f64;
    let mut xs = Vec::with_capacity(len);
    let mut mean = Vec::with_capacity(len);
    let mut std = Vec::with_capacity(len);
    for i in 0..len {
        let x = series.iter().map(|s| s.steps[i]).sum::<f64>() / n;
        let m = series.iter().map(|s| s.success[i]).sum::<f64>() / n;
        let v = series.iter().map(|s| (s.success[i] - m).powi(2)).sum::<f64>() / n;
        xs.push(x);
        mean.push(m);
        std.push(v.sqrt());
    }
    let x_max = xs.last().copied().unwrap().max(1.0);
    let px = |x: f64| MARGIN + (x / x_max) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - y.clamp(0.0, 1.0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    // axes
    let _ = writeln!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    );
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" font-size="11" text-anchor="end">{frac:.2}</text>"#,
            x = MARGIN - 6.0,
            y = py(frac) + 4.0
        );
        let _ = writeln!(
            svg,
            r##"<line x1="{m}" y1="{y}" x2="{r}" y2="{y}" stroke="#dddddd"/>"##,
            m = MARGIN,
            r = WIDTH - MARGIN,
            y = py(frac)
        );
    }
    for frac in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" font-size="11" text-anchor="middle">{v:.0}</text>"#,
            x = px(frac * x_max),
            y = HEIGHT - MARGIN + 16.0,
            v = frac * x_max
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{x}" y="{y}" font-size="12" text-anchor="middle">cumulative environment steps</text>"#,
        x = WIDTH / 2.0,
        y = HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{y}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {y})">success rate</text>"#,
        y = HEIGHT / 2.0
    );
    // +/- std band
    if series.len() > 1 {
        let mut pts = String::new();
        for i in 0..len {
            let _ = write!(pts, "{:.1},{:.1} ", px(xs[i]), py(mean[i] + std[i]));
        }
        for i in (0..len).rev() {
            let _ = write!(pts, "{:.1},{:.1} ", px(xs[i]), py(mean[i] - std[i]));
        }
        let _ = writeln!(
            svg,
            r##"<polygon points="{}" fill="#7799ff" fill-opacity="0.3" stroke="none"/>"##,
            pts.trim_end()
        );
    }
    let pts: Vec<String> = (0..len)
        .map(|i| format!("{:.1},{:.1}", px(xs[i]), py(mean[i])))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#2244cc" stroke-width="1.5"/>"##,
        pts.join(" ")
    );
    let _ = writeln!(svg, "</svg>");
    if let Some(parent) = out_svg.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out_svg, svg)?;
    Ok(())
}
