//! Deterministic SVG rendering of loss curves and sweep heatmaps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 110.0;
const MARGIN_TOP: f64 = 30.0;
const GAP: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e"];

/// Renders every plot the directory supports and returns the written paths.
pub fn plot_dir(dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut written = Vec::new();
    if dir.join("loss_curve.csv").is_file() {
        written.push(render_run(dir, force)?);
    }
    let mut runs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("loss_curve.csv").is_file())
        .collect();
    runs.sort();
    for run in runs {
        written.push(render_run(&run, force)?);
    }
    let summary = dir.join("summary.csv");
    if summary.is_file() {
        let text = std::fs::read_to_string(&summary)?;
        if text.starts_with("alpha0,beta0,") {
            written.extend(render_heatmap(dir, &text, force)?);
        }
    }
    if written.is_empty() {
        bail!("nothing to plot in {}: expected loss_curve.csv or run directories", dir.display());
    }
    Ok(written)
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn parse_csv(text: &str, path: &Path) -> Result<Table> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .with_context(|| format!("{} is empty", path.display()))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{} line {}", path.display(), n + 2))?;
        if row.len() != header.len() {
            bail!("{} line {}: expected {} columns", path.display(), n + 2, header.len());
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn write_new(path: &Path, text: &str, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} exists; pass --force to overwrite", path.display());
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn render_run(dir: &Path, force: bool) -> Result<PathBuf> {
    let csv = dir.join("loss_curve.csv");
    let table = parse_csv(&std::fs::read_to_string(&csv)?, &csv)?;
    let col = |name: &str| -> Result<Vec<f64>> {
        let idx = table
            .header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("{} lacks column {name}", csv.display()))?;
        Ok(table.rows.iter().map(|r| r[idx]).collect())
    };
    let epochs = col("epoch")?;
    let title = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut svg = String::new();
    let height = MARGIN_TOP + 2.0 * PANEL_HEIGHT + GAP + 40.0;
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="18" font-size="13">{}</text>"#, MARGIN_LEFT, escape(&title));
    panel(&mut svg, MARGIN_TOP, "train loss", &epochs, &[("train_loss", col("train_loss")?)]);
    panel(
        &mut svg,
        MARGIN_TOP + PANEL_HEIGHT + GAP,
        "test error (%)",
        &epochs,
        &[
            ("overall", col("test_error")?),
            ("head", col("head_error")?),
            ("tail", col("tail_error")?),
        ],
    );
    svg.push_str("</svg>\n");
    let out = dir.join("loss_curve.svg");
    write_new(&out, &svg, force)?;
    Ok(out)
}

fn finite_range(series: &[(&str, Vec<f64>)]) -> (f64, f64) {
    let values = series.iter().flat_map(|(_, v)| v.iter()).filter(|v| v.is_finite());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn panel(svg: &mut String, top: f64, label: &str, xs: &[f64], series: &[(&str, Vec<f64>)]) {
    let left = MARGIN_LEFT;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let bottom = top + PANEL_HEIGHT;
    let (x_lo, x_hi) = match (xs.first(), xs.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a - 0.5, a + 0.5),
        _ => (0.0, 1.0),
    };
    let (y_lo, y_hi) = finite_range(series);
    let sx = |x: f64| left + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| bottom - (y - y_lo) / (y_hi - y_lo) * PANEL_HEIGHT;

    let _ = writeln!(
        svg,
        r##"<rect x="{left}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(svg, r#"<text x="{left}" y="{}">{}</text>"#, top - 6.0, escape(label));
    for k in 0..=4 {
        let y = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="#444"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            left - 4.0,
            left - 6.0,
            sy(y) + 4.0,
            fmt_tick(y),
            py = sy(y)
        );
        let x = x_lo + (x_hi - x_lo) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r##"<line x1="{px:.2}" y1="{bottom}" x2="{px:.2}" y2="{}" stroke="#444"/><text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"##,
            bottom + 4.0,
            bottom + 16.0,
            fmt_tick(x),
            px = sx(x)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">epoch</text>"#,
        left + plot_w / 2.0,
        bottom + 30.0
    );
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut path = String::new();
        let mut pen_down = false;
        for (&x, &y) in xs.iter().zip(ys) {
            if !y.is_finite() {
                pen_down = false;
                continue;
            }
            let _ = write!(path, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, sx(x), sy(y));
            pen_down = true;
        }
        if !path.is_empty() {
            let _ = writeln!(
                svg,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.trim_end()
            );
        }
        let ly = top + 14.0 + 16.0 * i as f64;
        let lx = left + plot_w + 10.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 22.0,
            ly + 4.0,
            escape(name)
        );
    }
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_heatmap(dir: &Path, summary: &str, force: bool) -> Result<Vec<PathBuf>> {
    let path = dir.join("summary.csv");
    let table = parse_csv(summary, &path)?;
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    for r in &table.rows {
        if !alphas.contains(&r[0]) {
            alphas.push(r[0]);
        }
        if !betas.contains(&r[1]) {
            betas.push(r[1]);
        }
    }
    let mut grid = vec![vec![f64::NAN; betas.len()]; alphas.len()];
    for r in &table.rows {
        let a = alphas.iter().position(|&v| v == r[0]).expect("collected above");
        let b = betas.iter().position(|&v| v == r[1]).expect("collected above");
        grid[a][b] = r[2];
    }

    let mut csv = String::from("alpha0");
    for b in &betas {
        let _ = write!(csv, ",beta0={b}");
    }
    csv.push('\n');
    for (a, row) in grid.iter().enumerate() {
        let _ = write!(csv, "{}", alphas[a]);
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }

    let cell = 64.0;
    let left = 70.0;
    let top = 50.0;
    let w = left + cell * betas.len() as f64 + 20.0;
    let h = top + cell * alphas.len() as f64 + 50.0;
    let (lo, hi) = grid
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{left}" y="20" font-size="13">mean test error (%)</text>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="40" text-anchor="middle">beta0</text>"#,
        left + cell * betas.len() as f64 / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">alpha0</text>"#,
        top + cell * alphas.len() as f64 / 2.0,
        top + cell * alphas.len() as f64 / 2.0
    );
    for (b, beta) in betas.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{beta}</text>"#,
            left + cell * (b as f64 + 0.5),
            top + cell * alphas.len() as f64 + 16.0
        );
    }
    for (a, row) in grid.iter().enumerate() {
        let y = top + cell * a as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 6.0,
            y + cell / 2.0 + 4.0,
            alphas[a]
        );
        for (b, &v) in row.iter().enumerate() {
            let x = left + cell * b as f64;
            let fill = if v.is_finite() {
                let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                shade(t)
            } else {
                "#cccccc".to_string()
            };
            let _ = writeln!(
                svg,
                r##"<rect x="{x:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="{fill}" stroke="#fff"/><text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"##,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0,
                if v.is_finite() { format!("{v:.2}") } else { "n/a".into() }
            );
        }
    }
    svg.push_str("</svg>\n");

    let svg_path = dir.join("heatmap.svg");
    let csv_path = dir.join("heatmap.csv");
    write_new(&svg_path, &svg, force)?;
    write_new(&csv_path, &csv, force)?;
    Ok(vec![svg_path, csv_path])
}

/// Light yellow (low error) to dark red (high error).
fn shade(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 165.0), lerp(245.0, 15.0), lerp(200.0, 21.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shade_endpoints() {
        assert_eq!(shade(0.0), "#fff5c8");
        assert_eq!(shade(1.0), "#a50f15");
        assert_eq!(shade(7.0), shade(1.0));
    }

    #[test]
    fn heatmap_grid_from_summary() {
        let tmp = tempfile::tempdir().unwrap();
        let summary = "alpha0,beta0,mean_error,std_error,mean_tail_error,seeds\n0.5,1,10,0,12,1\n0.5,2,11,0,13,1\n1,1,9,0,11,1\n1,2,8,0,10,1\n";
        std::fs::write(tmp.path().join("summary.csv"), summary).unwrap();
        let out = plot_dir(tmp.path(), false).unwrap();
        assert_eq!(out.len(), 2);
        let csv = std::fs::read_to_string(tmp.path().join("heatmap.csv")).unwrap();
        assert_eq!(csv, "alpha0,beta0=1,beta0=2\n0.5,10,11\n1,9,8\n");
        assert!(plot_dir(tmp.path(), false).is_err());
        assert!(plot_dir(tmp.path(), true).is_ok());
    }

    #[test]
    fn empty_directory_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(plot_dir(tmp.path(), false).is_err());
    }
}
