//! Test-accuracy curves: mean over seeds with a one-standard-deviation band.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{mean_std, read_metrics, METRICS_FILE};
use crate::error::{Error, Result};

const COLOURS: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"];

/// Runs drawn as one curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveGroup {
    pub label: String,
    pub runs: Vec<PathBuf>,
}

/// Per-epoch summary of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: String,
    /// `(epoch, mean, std)` over runs of the per-run peer-mean test accuracy.
    pub points: Vec<(usize, f64, f64)>,
}

/// Finds run directories under `root` and groups them by their parent
/// directory (`root/<mode>/seed-<s>` groups by mode). A run directory that is
/// `root` itself forms its own group.
pub fn discover(root: &Path) -> Result<Vec<CurveGroup>> {
    let mut found = Vec::new();
    collect_runs(root, &mut found)?;
    found.sort();
    let mut groups: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for run in found {
        let label = if run == root {
            root.file_name().map_or("run".into(), |n| n.to_string_lossy().into_owned())
        } else {
            let parent = run.parent().unwrap_or(root);
            let rel = if parent == root { run.as_path() } else { parent };
            rel.strip_prefix(root).unwrap_or(rel).to_string_lossy().into_owned()
        };
        groups.entry(label).or_default().push(run);
    }
    Ok(groups.into_iter().map(|(label, runs)| CurveGroup { label, runs }).collect())
}

fn collect_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(METRICS_FILE).is_file() {
        out.push(dir.to_path_buf());
    }
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() && path.file_name().is_some_and(|n| n != "plots" && n != "checkpoints") {
            collect_runs(&path, out)?;
        }
    }
    Ok(())
}

/// Reads every group's metrics and reduces them to curves. Epochs missing
/// from any run of a group are left out of that group's curve.
pub fn curves(groups: &[CurveGroup]) -> Result<Vec<Curve>> {
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        let mut per_run: Vec<BTreeMap<usize, f64>> = Vec::new();
        for run in &g.runs {
            let mut by_epoch: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
            for row in read_metrics(&run.join(METRICS_FILE))? {
                let e = by_epoch.entry(row.epoch).or_default();
                e.0 += row.test_acc;
                e.1 += 1;
            }
            per_run.push(by_epoch.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect());
        }
        let Some(first) = per_run.first() else { continue };
        let points = first
            .keys()
            .filter_map(|&epoch| {
                let vals: Option<Vec<f64>> = per_run.iter().map(|r| r.get(&epoch).copied()).collect();
                vals.map(|v| {
                    let (m, s) = mean_std(&v);
                    (epoch, m, s)
                })
            })
            .collect();
        out.push(Curve { label: g.label.clone(), points });
    }
    Ok(out)
}

/// Renders curves as an SVG document.
pub fn render_svg(curves: &[Curve], title: &str) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (64.0, 170.0, 36.0, 48.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let all = curves.iter().flat_map(|c| &c.points);
    let max_epoch = all.clone().map(|p| p.0).max().unwrap_or(0).max(1) as f64;
    let lo = all.clone().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min);
    let hi = all.map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = ((lo - pad).max(0.0), (hi + pad).min(1.0));
    let x = |e: f64| left + pw * e / max_epoch;
    let y = |v: f64| top + ph * (1.0 - (v - lo) / (hi - lo).max(1e-9));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let v = lo + (hi - lo) * i as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{yy:.2}" x2="{}" y2="{yy:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{:.1}</text>"##,
            left + pw,
            left - 6.0,
            yy + 4.0,
            100.0 * v
        );
        let e = max_epoch * i as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{:.0}</text>"#,
            x(e),
            top + ph + 16.0,
            e
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">test accuracy (%)</text>"#,
        top + ph / 2.0
    );
    for (i, c) in curves.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        if c.points.is_empty() {
            continue;
        }
        let upper = c.points.iter().map(|p| format!("{:.2},{:.2}", x(p.0 as f64), y(p.1 + p.2)));
        let lower = c.points.iter().rev().map(|p| format!("{:.2},{:.2}", x(p.0 as f64), y(p.1 - p.2)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="{colour}" fill-opacity="0.18" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = c.points.iter().map(|p| format!("{:.2},{:.2}", x(p.0 as f64), y(p.1))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.8"/>"#,
            line.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `accuracy.svg`, `accuracy.csv` (the plotted curve values) and
/// `points.csv` (every source row behind them) into `out_dir`.
pub fn plot(groups: &[CurveGroup], out_dir: &Path) -> Result<Vec<Curve>> {
    if groups.iter().all(|g| g.runs.is_empty()) {
        return Err(Error::Parameter("no runs to plot".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let curves = curves(groups)?;

    let path = out_dir.join("accuracy.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["group", "epoch", "mean_test_acc", "std_test_acc", "runs"])?;
    for (c, g) in curves.iter().zip(groups) {
        for &(e, m, sd) in &c.points {
            w.write_record([c.label.clone(), e.to_string(), m.to_string(), sd.to_string(), g.runs.len().to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out_dir.join("points.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["group", "run", "epoch", "peer", "test_acc"])?;
    for g in groups {
        for run in &g.runs {
            for row in read_metrics(&run.join(METRICS_FILE))? {
                w.write_record([
                    g.label.clone(),
                    run.display().to_string(),
                    row.epoch.to_string(),
                    row.peer.to_string(),
                    row.test_acc.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out_dir.join("accuracy.svg");
    fs::write(&path, render_svg(&curves, "Test accuracy (mean ± std over seeds)")).map_err(|e| Error::io(&path, e))?;
    Ok(curves)
}
