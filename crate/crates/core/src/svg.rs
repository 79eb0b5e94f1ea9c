//! Self-contained SVG writers for the evaluation and visualisation outputs.

use std::fmt::Write as _;

use crate::annotator::IterationLog;
use crate::datamodel::{Alphabet, Interval, BLANK};
use crate::metrics::{ConfusionMatrix, RocCurve};

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Minimal document builder; elements are appended as raw strings.
struct Doc {
    width: f64,
    height: f64,
    body: String,
}

impl Doc {
    fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" {FONT}>{}</text>"#,
            escape(s)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        let mut p = String::new();
        for (x, y) in pts {
            let _ = write!(p, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="2"/>"#,
            p.trim_end()
        );
    }

    fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{fill}"/>"#);
    }

    fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn symbol(c: usize) -> String {
    Alphabet::symbol(c).map(String::from).unwrap_or_default()
}

/// White to dark blue.
fn heat(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - v)).round() as u8;
    let g = (255.0 * (1.0 - 0.8 * v)).round() as u8;
    format!("rgb({r},{g},255)")
}

/// Distinct hue per letter class; blank is light grey.
fn letter_colour(c: usize) -> String {
    if c == BLANK {
        return "#dddddd".into();
    }
    let hue = (c - 1) as f64 * 360.0 / 26.0;
    format!("hsl({hue:.0},65%,55%)")
}

/// Row-normalised confusion heatmap; the extra column is "predicted blank".
pub fn confusion_svg(cm: &ConfusionMatrix) -> String {
    let cell = 18.0;
    let (left, top) = (30.0, 30.0);
    let n = cm.counts.len();
    let mut doc = Doc::new(left + cell * (n as f64 + 1.0) + 10.0, top + cell * n as f64 + 10.0);
    let pct = cm.percentages();
    for (i, row) in pct.iter().enumerate() {
        let y = top + i as f64 * cell;
        doc.text(left - 6.0, y + cell * 0.7, "end", &symbol(i + 1));
        for (j, &p) in row.iter().enumerate() {
            doc.rect(left + j as f64 * cell, y, cell, cell, &heat(p / 100.0));
        }
        let total = cm.row_total(i).max(1) as f64;
        doc.rect(left + n as f64 * cell, y, cell, cell, &heat(cm.to_blank[i] as f64 / total));
    }
    for j in 0..=n {
        doc.text(left + (j as f64 + 0.5) * cell, top - 8.0, "middle", &symbol((j + 1) % (n + 1)));
    }
    doc.finish()
}

fn axes(doc: &mut Doc, x0: f64, y0: f64, w: f64, h: f64, xlabel: &str, ylabel: &str) {
    doc.line(x0, y0, x0 + w, y0, "black");
    doc.line(x0, y0, x0, y0 - h, "black");
    doc.text(x0 + w / 2.0, y0 + 30.0, "middle", xlabel);
    doc.text(x0 - 35.0, y0 - h / 2.0, "middle", ylabel);
}

pub fn roc_svg(roc: &RocCurve) -> String {
    let (x0, y0, size) = (60.0, 330.0, 300.0);
    let mut doc = Doc::new(400.0, 380.0);
    axes(&mut doc, x0, y0, size, size, "false positive rate", "TPR");
    doc.line(x0, y0, x0 + size, y0 - size, "#bbbbbb");
    for t in [0.0, 0.5, 1.0] {
        doc.text(x0 + t * size, y0 + 14.0, "middle", &format!("{t:.1}"));
        doc.text(x0 - 6.0, y0 - t * size + 4.0, "end", &format!("{t:.1}"));
    }
    let pts: Vec<(f64, f64)> = roc
        .points
        .iter()
        .map(|&(fpr, tpr)| (x0 + fpr * size, y0 - tpr * size))
        .collect();
    doc.polyline(&pts, "#1f77b4");
    doc.text(x0 + size - 5.0, y0 - 10.0, "end", &format!("AUC = {:.4}", roc.auc));
    doc.finish()
}

/// Held-out CER against the accepted count, one marker per iteration.
pub fn pipeline_curve_svg(log: &[IterationLog]) -> String {
    let (x0, y0, w, h) = (70.0, 300.0, 400.0, 250.0);
    let mut doc = Doc::new(520.0, 350.0);
    axes(&mut doc, x0, y0, w, h, "accepted annotations", "CER");
    let max_x = log.iter().map(|l| l.accepted).max().unwrap_or(0).max(1) as f64;
    let max_y = log.iter().map(|l| l.heldout_cer).fold(0.0, f64::max).max(1e-9) * 1.1;
    let pts: Vec<(f64, f64)> = log
        .iter()
        .map(|l| (x0 + l.accepted as f64 / max_x * w, y0 - l.heldout_cer / max_y * h))
        .collect();
    doc.polyline(&pts, "#d62728");
    for (l, &(x, y)) in log.iter().zip(&pts) {
        doc.circle(x, y, 4.0, "#d62728");
        doc.text(x, y - 8.0, "middle", &format!("it{} {:.3}", l.iteration, l.heldout_cer));
    }
    doc.text(x0 - 6.0, y0 - h + 4.0, "end", &format!("{max_y:.2}"));
    doc.text(x0 + w, y0 + 14.0, "middle", &format!("{max_x:.0}"));
    doc.finish()
}

/// One clip: a ground-truth band, a probability trace and the smoothed
/// prediction band.
pub struct Timeline<'a> {
    pub clip_id: &'a str,
    pub len: usize,
    pub truth: &'a [Interval],
    pub probs: &'a [f64],
    pub predicted: &'a [Interval],
}

pub fn timelines_svg(rows: &[Timeline<'_>]) -> String {
    let (left, row_h, w) = (150.0, 70.0, 700.0);
    let mut doc = Doc::new(left + w + 20.0, 20.0 + row_h * rows.len() as f64);
    for (r, row) in rows.iter().enumerate() {
        let top = 10.0 + r as f64 * row_h;
        let scale = w / row.len.max(1) as f64;
        doc.text(left - 8.0, top + 30.0, "end", row.clip_id);
        doc.rect(left, top, w, 12.0, "#eeeeee");
        for iv in row.truth {
            doc.rect(left + iv.start as f64 * scale, top, iv.len() as f64 * scale, 12.0, "#2ca02c");
        }
        let pts: Vec<(f64, f64)> = row
            .probs
            .iter()
            .enumerate()
            .map(|(t, &p)| (left + (t as f64 + 0.5) * scale, top + 44.0 - 26.0 * p))
            .collect();
        doc.polyline(&pts, "#7f7f7f");
        doc.rect(left, top + 48.0, w, 12.0, "#eeeeee");
        for iv in row.predicted {
            doc.rect(left + iv.start as f64 * scale, top + 48.0, iv.len() as f64 * scale, 12.0, "#ff7f0e");
        }
    }
    doc.finish()
}

/// Per-frame letter strips, one row per labelled sequence.
pub fn letter_strips_svg(rows: &[(&str, &[usize])]) -> String {
    let (left, cell, row_h) = (150.0, 12.0, 26.0);
    let longest = rows.iter().map(|(_, l)| l.len()).max().unwrap_or(0);
    let mut doc = Doc::new(left + cell * longest as f64 + 20.0, 20.0 + row_h * rows.len() as f64);
    for (r, (name, labels)) in rows.iter().enumerate() {
        let y = 10.0 + r as f64 * row_h;
        doc.text(left - 8.0, y + cell * 0.85, "end", name);
        for (t, &c) in labels.iter().enumerate() {
            let x = left + t as f64 * cell;
            doc.rect(x, y, cell, cell + 4.0, &letter_colour(c));
            let starts_run = t == 0 || labels[t - 1] != c;
            if c != BLANK && starts_run {
                doc.text(x + 2.0, y + cell * 0.85, "start", &symbol(c));
            }
        }
    }
    doc.finish()
}
