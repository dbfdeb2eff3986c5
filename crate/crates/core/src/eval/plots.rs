//! Plot emission: training-dynamics curves and ROC/PR curves as SVG,
//! patch-location heatmaps and image grids as PNG.

use std::path::Path;

use ndarray::Array2;

use super::metrics::{pr_curve, roc_curve};
use super::suite::MetricReport;
use crate::error::{Error, Result};
use crate::train::RunLog;
use crate::types::LabeledImage;

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 420.0;
const MARGIN: f64 = 56.0;

struct SvgPlot {
    body: String,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl SvgPlot {
    fn new(x_range: (f64, f64), y_range: (f64, f64), title: &str, x_label: &str, y_label: &str) -> Self {
        let mut body = String::new();
        body.push_str(&format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" \
             viewBox=\"0 0 {PLOT_W} {PLOT_H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
        ));
        body.push_str(&format!(
            "<rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>\n"
        ));
        body.push_str(&format!(
            "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
            PLOT_W / 2.0
        ));
        body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
            PLOT_W / 2.0,
            PLOT_H - 8.0
        ));
        body.push_str(&format!(
            "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{y_label}</text>\n",
            PLOT_H / 2.0,
            PLOT_H / 2.0
        ));
        // Axes box.
        body.push_str(&format!(
            "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
            PLOT_W - 2.0 * MARGIN,
            PLOT_H - 2.0 * MARGIN
        ));
        Self {
            body,
            x_range,
            y_range,
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        let fx = if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.5 };
        let fy = if y1 > y0 { (y - y0) / (y1 - y0) } else { 0.5 };
        (
            MARGIN + fx * (PLOT_W - 2.0 * MARGIN),
            PLOT_H - MARGIN - fy * (PLOT_H - 2.0 * MARGIN),
        )
    }

    fn polyline(&mut self, pts: &[(f64, f64)], color: &str, label: &str, slot: usize) {
        if pts.is_empty() {
            return;
        }
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (px, py) = self.map(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        self.body.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            coords.join(" ")
        ));
        let ly = MARGIN + 16.0 * (slot as f64 + 1.0);
        self.body.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            PLOT_W - MARGIN - 130.0,
            PLOT_W - MARGIN - 110.0
        ));
        self.body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{label}</text>\n",
            PLOT_W - MARGIN - 104.0,
            ly + 4.0
        ));
    }

    fn ticks(&mut self) {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        for i in 0..=4 {
            let x = x0 + (x1 - x0) * i as f64 / 4.0;
            let (px, _) = self.map(x, y0);
            self.body.push_str(&format!(
                "<text x=\"{px:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
                PLOT_H - MARGIN + 16.0,
                format_tick(x)
            ));
            let y = y0 + (y1 - y0) * i as f64 / 4.0;
            let (_, py) = self.map(x0, y);
            self.body.push_str(&format!(
                "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
                MARGIN - 6.0,
                py + 4.0,
                format_tick(y)
            ));
        }
    }

    fn finish(mut self) -> String {
        self.ticks();
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Train/validation loss curves plus the validation AU-ROC curve; the x axis
/// is the logged step index.
pub fn plot_training_curves(log: &RunLog, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let steps: Vec<f64> = log.records.iter().map(|r| r.step as f64).collect();
    let train: Vec<f64> = log.records.iter().map(|r| r.train_loss).collect();
    let val: Vec<f64> = log.records.iter().map(|r| r.val_loss).collect();
    let auroc: Vec<f64> = log.records.iter().map(|r| r.val_auroc).collect();
    let xmax = steps.last().copied().unwrap_or(1.0).max(1.0);
    let ymax = train
        .iter()
        .chain(val.iter())
        .copied()
        .fold(1e-12f64, f64::max);

    let mut loss_plot = SvgPlot::new(
        (0.0, xmax),
        (0.0, ymax * 1.05),
        "training dynamics",
        "step",
        "loss",
    );
    let pts = |ys: &[f64]| -> Vec<(f64, f64)> { steps.iter().copied().zip(ys.iter().copied()).collect() };
    loss_plot.polyline(&pts(&train), "#1f77b4", "train", 0);
    loss_plot.polyline(&pts(&val), "#d62728", "validation", 1);
    let loss_path = dir.join("loss.svg");
    write_text(&loss_path, &loss_plot.finish())?;

    let mut auroc_plot = SvgPlot::new(
        (0.0, xmax),
        (0.0, 1.0),
        "validation AU-ROC",
        "step",
        "AU-ROC",
    );
    auroc_plot.polyline(&pts(&auroc), "#2ca02c", "val AU-ROC", 0);
    let auroc_path = dir.join("auroc.svg");
    write_text(&auroc_path, &auroc_plot.finish())?;
    Ok(vec![loss_path, auroc_path])
}

/// ROC and PR curves for one score set.
pub fn plot_roc_pr(
    scores: &[f64],
    labels: &[bool],
    name: &str,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    let roc = roc_curve(scores, labels)?;
    let pr = pr_curve(scores, labels)?;
    let mut roc_plot = SvgPlot::new(
        (0.0, 1.0),
        (0.0, 1.0),
        &format!("ROC: {name}"),
        "false positive rate",
        "true positive rate",
    );
    roc_plot.polyline(&roc, "#1f77b4", name, 0);
    roc_plot.polyline(&[(0.0, 0.0), (1.0, 1.0)], "#cccccc", "chance", 1);
    let roc_path = dir.join(format!("roc_{name}.svg"));
    write_text(&roc_path, &roc_plot.finish())?;

    let mut pr_plot = SvgPlot::new(
        (0.0, 1.0),
        (0.0, 1.0),
        &format!("PR: {name}"),
        "recall",
        "precision",
    );
    pr_plot.polyline(&pr, "#d62728", name, 0);
    let pr_path = dir.join(format!("pr_{name}.svg"));
    write_text(&pr_path, &pr_plot.finish())?;
    Ok(vec![roc_path, pr_path])
}

/// Bar chart of AU-ROC per attack, one group per TTA.
pub fn plot_metric_report(report: &MetricReport, dir: &Path) -> Result<std::path::PathBuf> {
    let attacks: Vec<&String> = report.entries.keys().collect();
    let n = attacks.len().max(1);
    let mut plot = SvgPlot::new(
        (0.0, n as f64),
        (0.0, 1.0),
        "AU-ROC by attack",
        "attack",
        "AU-ROC",
    );
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let mut tta_labels: Vec<String> = Vec::new();
    if let Some(first) = report.entries.values().next() {
        tta_labels = first.keys().cloned().collect();
    }
    for (ti, tta) in tta_labels.iter().enumerate() {
        for (ai, attack) in attacks.iter().enumerate() {
            if let Some(e) = report.entries[*attack].get(tta) {
                let group_w = 0.8 / tta_labels.len() as f64;
                let x0 = ai as f64 + 0.1 + ti as f64 * group_w;
                let (px0, py0) = plot.map(x0, 0.0);
                let (px1, py1) = plot.map(x0 + group_w * 0.9, e.au_roc);
                plot.body.push_str(&format!(
                    "<rect x=\"{px0:.1}\" y=\"{py1:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>\n",
                    (px1 - px0).max(1.0),
                    (py0 - py1).max(0.0),
                    colors[ti % colors.len()]
                ));
            }
        }
        plot.polyline(&[], colors[ti % colors.len()], tta, ti);
        // Legend entry only.
        let ly = MARGIN + 16.0 * (ti as f64 + 1.0);
        plot.body.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{}\" y=\"{}\">{tta}</text>\n",
            PLOT_W - MARGIN - 130.0,
            ly - 8.0,
            colors[ti % colors.len()],
            PLOT_W - MARGIN - 114.0,
            ly + 1.0
        ));
    }
    for (ai, attack) in attacks.iter().enumerate() {
        let (px, py) = plot.map(ai as f64 + 0.5, 0.0);
        plot.body.push_str(&format!(
            "<text x=\"{px:.1}\" y=\"{}\" text-anchor=\"middle\">{attack}</text>\n",
            py + 16.0
        ));
    }
    let path = dir.join("metrics.svg");
    write_text(&path, &plot.finish())?;
    Ok(path)
}

/// Heatmap of best-patch locations over the stride grid, upscaled to PNG.
/// `positions` are top-left corners; `grid` enumerates the candidate corners.
pub fn plot_location_heatmap(
    positions: &[(usize, usize)],
    grid_rows: &[usize],
    grid_cols: &[usize],
    path: &Path,
) -> Result<Array2<u32>> {
    let mut counts = Array2::<u32>::zeros((grid_rows.len(), grid_cols.len()));
    for &(r, c) in positions {
        let ri = grid_rows.iter().position(|&g| g == r);
        let ci = grid_cols.iter().position(|&g| g == c);
        if let (Some(ri), Some(ci)) = (ri, ci) {
            counts[(ri, ci)] += 1;
        }
    }
    let max = counts.iter().copied().max().unwrap_or(0).max(1);
    let cell = 24u32;
    let width = grid_cols.len().max(1) as u32 * cell;
    let height = grid_rows.len().max(1) as u32 * cell;
    let mut img = image::RgbImage::new(width, height);
    for (y, x, pixel) in img.enumerate_pixels_mut().map(|(x, y, p)| (y, x, p)) {
        let ri = (y / cell) as usize;
        let ci = (x / cell) as usize;
        let v = if ri < counts.nrows() && ci < counts.ncols() {
            counts[(ri, ci)] as f32 / max as f32
        } else {
            0.0
        };
        // Dark blue (0) to bright yellow (max).
        *pixel = image::Rgb([
            (30.0 + 225.0 * v) as u8,
            (30.0 + 200.0 * v) as u8,
            (90.0 * (1.0 - v) + 40.0) as u8,
        ]);
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path)
        .map_err(|e| Error::Dataset(format!("save heatmap: {e}")))?;
    Ok(counts)
}

/// Grid of images (rows of equal length), written as one PNG.
pub fn plot_image_grid(rows: &[Vec<&LabeledImage>], path: &Path) -> Result<()> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Dataset("image grid needs at least one image".into()));
    }
    let (h, w, c) = rows[0][0].shape();
    let pad = 2usize;
    let ncols = rows.iter().map(|r| r.len()).max().unwrap();
    let width = (ncols * (w + pad) + pad) as u32;
    let height = (rows.len() * (h + pad) + pad) as u32;
    let mut img = image::RgbImage::from_pixel(width, height, image::Rgb([255, 255, 255]));
    for (ri, row) in rows.iter().enumerate() {
        for (ci, im) in row.iter().enumerate() {
            let oy = pad + ri * (h + pad);
            let ox = pad + ci * (w + pad);
            for r in 0..h {
                for col in 0..w {
                    let px = |ch: usize| -> u8 {
                        let v = if c == 1 {
                            im.pixels[(r, col, 0)]
                        } else {
                            im.pixels[(r, col, ch.min(c - 1))]
                        };
                        (v.clamp(0.0, 1.0) * 255.0).round() as u8
                    };
                    img.put_pixel(
                        (ox + col) as u32,
                        (oy + r) as u32,
                        image::Rgb([px(0), px(1), px(2)]),
                    );
                }
            }
        }
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path)
        .map_err(|e| Error::Dataset(format!("save grid: {e}")))
}
