use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Result};

use crate::io::read_jsonl;
use crate::pipeline::{AE_LOSS, COMPLETE, DIFFUSION_LOSS, GENERATED, NCDE_LOSS, REFINED, REPORT};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 220.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// One titled panel of polylines.
pub struct Panel {
    pub title: String,
    pub log_y: bool,
    pub lines: Vec<Vec<(f64, f64)>>,
}

fn panel_svg(p: &Panel, top: f64, out: &mut String) {
    let pts: Vec<(f64, f64)> = p
        .lines
        .iter()
        .flatten()
        .map(|&(x, y)| (x, if p.log_y { y.max(1e-300).log10() } else { y }))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let _ = writeln!(
        out,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="13">{}</text>"#,
        top + 16.0,
        p.title
    );
    let (x0, y0, w, h) = (MARGIN, top + 24.0, WIDTH - 2.0 * MARGIN, HEIGHT - 40.0);
    let _ = writeln!(
        out,
        r##"<rect x="{x0}" y="{y0}" width="{w}" height="{h}" fill="none" stroke="#999"/>"##
    );
    if pts.is_empty() {
        return;
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, pick: fn(&(f64, f64)) -> f64| pts.iter().map(pick).fold(init, f);
    let (xmin, xmax) = (
        fold(f64::min, f64::INFINITY, |p| p.0),
        fold(f64::max, f64::NEG_INFINITY, |p| p.0),
    );
    let (ymin, ymax) = (
        fold(f64::min, f64::INFINITY, |p| p.1),
        fold(f64::max, f64::NEG_INFINITY, |p| p.1),
    );
    let sx = if xmax > xmin { w / (xmax - xmin) } else { 0.0 };
    let sy = if ymax > ymin { h / (ymax - ymin) } else { 0.0 };
    for (i, line) in p.lines.iter().enumerate() {
        let coords: Vec<String> = line
            .iter()
            .map(|&(x, y)| (x, if p.log_y { y.max(1e-300).log10() } else { y }))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", x0 + (x - xmin) * sx, y0 + h - (y - ymin) * sy))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
            COLORS[i % COLORS.len()],
            coords.join(" ")
        );
    }
}

/// A standalone SVG stacking `panels` vertically.
pub fn render(panels: &[Panel]) -> String {
    let total = HEIGHT * panels.len() as f64;
    let mut out = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{total}" viewBox="0 0 {WIDTH} {total}">"#
    );
    out.push('\n');
    for (i, p) in panels.iter().enumerate() {
        panel_svg(p, i as f64 * HEIGHT, &mut out);
    }
    out.push_str("</svg>\n");
    out
}

fn loss_curve(path: &Path) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok((rec[0].parse()?, rec[1].parse()?))
        })
        .collect()
}

const SHOWN: usize = 4;

fn sample_panel(path: &Path, title: &str) -> Result<Panel> {
    let data = read_jsonl(path)?;
    let lines = data
        .iter()
        .take(SHOWN)
        .map(|s| s.times().iter().zip(s.values()).map(|(&t, r)| (t, r[0])).collect())
        .collect();
    Ok(Panel {
        title: title.into(),
        log_y: false,
        lines,
    })
}

/// Loss curves and a few samples from whatever `dir` holds.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let mut panels = Vec::new();
    for (name, title) in [
        (AE_LOSS, "autoencoder loss (log10)"),
        (NCDE_LOSS, "MoE-NCDE loss (log10)"),
        (DIFFUSION_LOSS, "diffusion loss (log10)"),
    ] {
        let p = dir.join(name);
        if p.exists() {
            panels.push(Panel {
                title: title.into(),
                log_y: true,
                lines: vec![loss_curve(&p)?],
            });
        }
    }
    for (name, title) in [
        (COMPLETE, "real samples, channel 0"),
        (GENERATED, "generated samples, channel 0"),
        (REFINED, "refined samples, channel 0"),
    ] {
        let p = dir.join(name);
        if p.exists() {
            panels.push(sample_panel(&p, title)?);
        }
    }
    if panels.is_empty() {
        bail!("nothing to report in {}", dir.display());
    }
    let svg = render(&panels);
    fs::write(dir.join(REPORT), &svg)?;
    Ok(svg)
}
