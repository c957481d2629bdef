//! Static SVG charts with CSV sidecars holding the plotted numbers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::aggregate::{aggregate, mean_std, GroupField, Pivot};
use super::train::RunRecord;
use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Affine map from data interval `[d0, d1]` to pixel interval `[r0, r1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearScale {
    pub d0: f64,
    pub d1: f64,
    pub r0: f64,
    pub r1: f64,
}

impl LinearScale {
    pub fn map(&self, v: f64) -> f64 {
        if self.d1 == self.d0 {
            return (self.r0 + self.r1) / 2.0;
        }
        self.r0 + (v - self.d0) * (self.r1 - self.r0) / (self.d1 - self.d0)
    }

    /// Pixels per data unit (absolute).
    pub fn k(&self) -> f64 {
        if self.d1 == self.d0 {
            0.0
        } else {
            ((self.r1 - self.r0) / (self.d1 - self.d0)).abs()
        }
    }
}

fn y_scale(lo: f64, hi: f64) -> LinearScale {
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    LinearScale {
        d0: lo - pad,
        d1: hi + pad,
        r0: H - BOTTOM,
        r1: TOP,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(svg: &mut String, title: &str, y_label: &str, ys: &LinearScale) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>
<line x1="{LEFT}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>
"#,
        W / 2.0,
        escape(title),
        H - BOTTOM,
        H - BOTTOM,
        W - RIGHT,
        H - BOTTOM,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        escape(y_label)
    );
    for i in 0..=4 {
        let v = ys.d0 + (ys.d1 - ys.d0) * i as f64 / 4.0;
        let y = ys.map(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0,
            format_tick(v)
        );
    }
}

fn format_tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bar {
    pub label: String,
    pub mean: f64,
    pub std: f64,
}

/// Bars with error bars spanning `mean ± std`.
pub fn bar_chart_svg(title: &str, y_label: &str, bars: &[Bar]) -> String {
    let lo = bars
        .iter()
        .map(|b| b.mean - b.std)
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let hi = bars.iter().map(|b| b.mean + b.std).fold(f64::NEG_INFINITY, f64::max);
    let ys = y_scale(lo, hi);
    let mut svg = String::new();
    frame(&mut svg, title, y_label, &ys);
    let slot = (W - LEFT - RIGHT) / bars.len().max(1) as f64;
    let base = ys.map(0.0f64.max(ys.d0));
    for (i, b) in bars.iter().enumerate() {
        let cx = LEFT + slot * (i as f64 + 0.5);
        let bw = slot * 0.6;
        let top = ys.map(b.mean);
        let _ = writeln!(
            svg,
            r#"<rect class="bar" x="{:.2}" y="{:.2}" width="{bw:.2}" height="{:.2}" fill="{}"/>"#,
            cx - bw / 2.0,
            top.min(base),
            (base - top).abs(),
            PALETTE[i % PALETTE.len()]
        );
        let (y_hi, y_lo) = (ys.map(b.mean + b.std), ys.map(b.mean - b.std));
        let _ = writeln!(
            svg,
            r#"<line class="error-bar" x1="{cx:.2}" y1="{y_lo:.4}" x2="{cx:.2}" y2="{y_hi:.4}" stroke="black"/><line x1="{:.2}" y1="{y_lo:.4}" x2="{:.2}" y2="{y_lo:.4}" stroke="black"/><line x1="{:.2}" y1="{y_hi:.4}" x2="{:.2}" y2="{y_hi:.4}" stroke="black"/>"#,
            cx - 6.0,
            cx + 6.0,
            cx - 6.0,
            cx + 6.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 18.0,
            escape(&b.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Mean lines with shaded `mean ± std` bands.
pub fn band_chart_svg(title: &str, x_label: &str, y_label: &str, curves: &[Curve]) -> String {
    let all = curves.iter().flat_map(|c| c.mean.iter().zip(&c.std));
    let lo = all.clone().map(|(m, s)| m - s).fold(f64::INFINITY, f64::min);
    let hi = all.map(|(m, s)| m + s).fold(f64::NEG_INFINITY, f64::max);
    let ys = y_scale(lo, hi);
    let xs_all = curves.iter().flat_map(|c| c.x.iter().copied());
    let xs = LinearScale {
        d0: xs_all.clone().fold(f64::INFINITY, f64::min),
        d1: xs_all.fold(f64::NEG_INFINITY, f64::max),
        r0: LEFT + 10.0,
        r1: W - RIGHT - 10.0,
    };
    let mut svg = String::new();
    frame(&mut svg, title, y_label, &ys);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 14.0,
        escape(x_label)
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper =
            c.x.iter()
                .zip(c.mean.iter().zip(&c.std))
                .map(|(x, (m, s))| (xs.map(*x), ys.map(m + s)));
        let lower =
            c.x.iter()
                .zip(c.mean.iter().zip(&c.std))
                .rev()
                .map(|(x, (m, s))| (xs.map(*x), ys.map(m - s)));
        let band: Vec<String> = upper.chain(lower).map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let line: Vec<String> =
            c.x.iter()
                .zip(&c.mean)
                .map(|(x, m)| format!("{:.2},{:.2}", xs.map(*x), ys.map(*m)))
                .collect();
        let _ = writeln!(
            svg,
            r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>
<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="2"/>
<rect x="{}" y="{}" width="12" height="12" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            band.join(" "),
            line.join(" "),
            W - RIGHT - 150.0,
            TOP + 8.0 + 18.0 * i as f64,
            W - RIGHT - 132.0,
            TOP + 18.0 + 18.0 * i as f64,
            escape(&c.label)
        );
    }
    for &x in curves.first().map(|c| c.x.as_slice()).unwrap_or(&[]) {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
            xs.map(x),
            H - BOTTOM + 16.0,
            x
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn slug(values: &[(GroupField, &str)]) -> String {
    values
        .iter()
        .map(|(f, v)| match f {
            GroupField::Noise => format!("noise{v}"),
            GroupField::BatchSize => format!("bs{v}"),
            _ => v.to_string(),
        })
        .collect::<Vec<_>>()
        .join("_")
}

const PANEL: [GroupField; 4] = [
    GroupField::Dataset,
    GroupField::Model,
    GroupField::BatchSize,
    GroupField::Noise,
];

/// Per (dataset, model, batch size, noise) panel: a bar chart of best test
/// accuracy by optimizer, and per-epoch band charts of test accuracy and
/// test loss. Returns the written paths.
pub fn emit_plots(records: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut by = PANEL.to_vec();
    by.push(GroupField::Optimizer);
    let rows = aggregate(records, &by)?;
    let mut panels: BTreeMap<Vec<String>, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        panels
            .entry(PANEL.iter().map(|f| f.value(r)).collect())
            .or_default()
            .push(r);
    }
    let mut written = Vec::new();
    for (key, recs) in &panels {
        let named: Vec<(GroupField, &str)> = PANEL.iter().copied().zip(key.iter().map(String::as_str)).collect();
        let name = slug(&named);
        let title = format!("{} / {} / B={} / noise {}", key[0], key[1], key[2], key[3]);

        let panel_rows: Vec<_> = rows
            .iter()
            .filter(|r| PANEL.iter().zip(key).all(|(f, v)| r.get(*f) == Some(v.as_str())))
            .cloned()
            .collect();
        let pivot = Pivot::new(&panel_rows, GroupField::Optimizer, &PANEL);
        let bars: Vec<Bar> = pivot
            .rows
            .iter()
            .zip(&pivot.cells)
            .filter_map(|(opt, cells)| {
                cells[0].as_ref().map(|c| Bar {
                    label: GroupField::Optimizer.label(opt),
                    mean: 100.0 * c.accuracy.mean,
                    std: 100.0 * c.accuracy.std,
                })
            })
            .collect();
        let svg_path = out_dir.join(format!("bar_{name}.svg"));
        write(&svg_path, &bar_chart_svg(&title, "best test accuracy (%)", &bars))?;
        let mut csv = String::from("optimizer,mean,std\n");
        for b in &bars {
            let _ = writeln!(csv, "{},{},{}", b.label, b.mean, b.std);
        }
        let csv_path = svg_path.with_extension("csv");
        write(&csv_path, &csv)?;
        written.extend([svg_path, csv_path]);

        let mut by_opt: BTreeMap<usize, Vec<&RunRecord>> = BTreeMap::new();
        for r in recs {
            let idx = crate::optim::OptimizerKind::ALL
                .iter()
                .position(|k| *k == r.cell.optimizer)
                .unwrap_or(usize::MAX);
            by_opt.entry(idx).or_default().push(r);
        }
        for (metric, label, get) in [
            (
                "accuracy",
                "test accuracy (%)",
                (|e: &super::train::EpochMetrics| 100.0 * e.test_accuracy) as fn(&_) -> f64,
            ),
            ("loss", "test loss", |e: &super::train::EpochMetrics| e.test_loss),
        ] {
            let mut curves = Vec::new();
            for runs in by_opt.values() {
                let epochs = runs.iter().map(|r| r.epochs.len()).min().unwrap_or(0);
                let mut c = Curve {
                    label: runs[0].cell.optimizer.label().to_string(),
                    x: Vec::new(),
                    mean: Vec::new(),
                    std: Vec::new(),
                };
                let mut csv = String::from("epoch,mean,std\n");
                for e in 0..epochs {
                    let vals: Vec<f64> = runs.iter().map(|r| get(&r.epochs[e])).collect();
                    let ms = mean_std(&vals)?;
                    c.x.push((e + 1) as f64);
                    c.mean.push(ms.mean);
                    c.std.push(ms.std);
                    let _ = writeln!(csv, "{},{},{}", e + 1, ms.mean, ms.std);
                }
                let csv_path = out_dir.join(format!("curve_{name}_{metric}_{}.csv", runs[0].cell.optimizer.id()));
                write(&csv_path, &csv)?;
                written.push(csv_path);
                curves.push(c);
            }
            let svg_path = out_dir.join(format!("curve_{name}_{metric}.svg"));
            write(&svg_path, &band_chart_svg(&title, "epoch", label, &curves))?;
            written.push(svg_path);
        }
    }
    Ok(written)
}
