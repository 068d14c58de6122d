//! Benchmark-style score tables: aligned text with top-3 markers per
//! column, plus CSV and JSON twins.

use serde_json::json;

use crate::data::CLASS_NAMES;
use crate::eval::{ConfusionMatrix, MiouRule};
use crate::NUM_CLASSES;

/// Per-class IoU plus the class-mean under a chosen averaging rule. The
/// display subset is the 8 foreground classes; background participates in
/// the mean only under [`MiouRule::All9`].
#[derive(Debug, Clone, PartialEq)]
pub struct IoUReport {
    pub per_class: [Option<f64>; NUM_CLASSES],
    pub miou: Option<f64>,
    pub rule: MiouRule,
}

impl IoUReport {
    pub fn from_matrix(cm: &ConfusionMatrix, rule: MiouRule) -> Self {
        IoUReport {
            per_class: cm.iou(),
            miou: cm.miou(rule),
            rule,
        }
    }
}

/// One table row: method name plus the 8 foreground-class scores and the
/// mean, all as fractions in [0, 1] (rendered ×100).
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub method: String,
    pub cells: [Option<f64>; 9],
}

impl ReportRow {
    pub fn from_report(method: impl Into<String>, report: &IoUReport) -> Self {
        let mut cells = [None; 9];
        cells[..8].copy_from_slice(&report.per_class[1..9]);
        cells[8] = report.miou;
        ReportRow {
            method: method.into(),
            cells,
        }
    }
}

pub const COLUMN_NAMES: [&str; 9] = [
    "Car", "Person", "Bike", "Curve", "Stop", "Guardrail", "Cone", "Bump", "mIoU",
];

/// Published MFNet-benchmark scores (%), kept only so the table formatter
/// has stable layout fixtures. Literature values, not reproduction targets.
pub const REFERENCE_ROWS: [(&str, [f64; 9]); 8] = [
    ("MFNet", [65.9, 58.9, 42.9, 29.9, 9.9, 0.0, 25.2, 27.7, 39.7]),
    ("RTFNet", [87.4, 70.3, 62.7, 45.3, 29.8, 0.0, 29.1, 55.7, 53.2]),
    ("FuseSeg", [87.9, 71.7, 64.6, 44.8, 22.7, 6.4, 46.9, 47.9, 54.5]),
    ("ABMDRNet", [84.8, 69.6, 60.3, 45.1, 33.1, 5.1, 47.4, 50.0, 54.8]),
    ("FEANet", [87.8, 71.1, 61.1, 46.5, 22.1, 6.6, 55.3, 48.9, 55.3]),
    ("CMX", [90.1, 75.2, 64.5, 64.5, 50.2, 35.3, 8.5, 54.2, 60.6]),
    ("CRM-RGBTSeg", [90.0, 75.1, 67.0, 45.2, 49.7, 18.4, 54.2, 54.4, 61.4]),
    ("MASTER", [86.9, 59.4, 66.4, 44.1, 47.1, 49.4, 53.6, 57.8, 62.5]),
];

pub fn reference_rows() -> Vec<ReportRow> {
    REFERENCE_ROWS
        .iter()
        .map(|(method, scores)| ReportRow {
            method: method.to_string(),
            cells: scores.map(|v| Some(v / 100.0)),
        })
        .collect()
}

/// Which cells per column rank in the top three defined scores (ties at the
/// third-best value all qualify; with fewer than three rows everything
/// defined qualifies).
fn top3_marks(rows: &[ReportRow]) -> Vec<[bool; 9]> {
    let mut marks = vec![[false; 9]; rows.len()];
    for col in 0..9 {
        let mut defined: Vec<f64> = rows.iter().filter_map(|r| r.cells[col]).collect();
        defined.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if defined.is_empty() {
            continue;
        }
        let threshold = defined[defined.len().min(3) - 1];
        for (row, mark) in rows.iter().zip(&mut marks) {
            if let Some(v) = row.cells[col] {
                if v >= threshold {
                    mark[col] = true;
                }
            }
        }
    }
    marks
}

fn render_cell(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.1}", v * 100.0),
        None => "-".to_string(),
    }
}

/// Aligned plain-text table; `*` marks a top-3 score in its column.
pub fn format_table(rows: &[ReportRow]) -> String {
    let marks = top3_marks(rows);
    let mut header: Vec<String> = vec!["Method".to_string()];
    header.extend(COLUMN_NAMES.iter().map(|c| c.to_string()));
    let mut body: Vec<Vec<String>> = Vec::with_capacity(rows.len());
    for (row, mark) in rows.iter().zip(&marks) {
        let mut line = vec![row.method.clone()];
        for col in 0..9 {
            let mut cell = render_cell(row.cells[col]);
            if mark[col] {
                cell.push('*');
            }
            line.push(cell);
        }
        body.push(line);
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for line in &body {
        for (w, cell) in widths.iter_mut().zip(line) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let emit = |out: &mut String, line: &[String]| {
        for (i, (cell, w)) in line.iter().zip(&widths).enumerate() {
            if i == 0 {
                out.push_str(&format!("{cell:<w$}"));
            } else {
                out.push_str(&format!("  {cell:>w$}"));
            }
        }
        out.push('\n');
    };
    emit(&mut out, &header);
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for line in &body {
        emit(&mut out, line);
    }
    out.push_str("* top-3 in column\n");
    out
}

/// CSV twin: raw percentages, one decimal, no markers.
pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("method,");
    out.push_str(&COLUMN_NAMES.join(",").to_lowercase());
    out.push('\n');
    for row in rows {
        out.push_str(&row.method);
        for cell in &row.cells {
            out.push(',');
            out.push_str(&match cell {
                Some(v) => format!("{:.1}", v * 100.0),
                None => String::new(),
            });
        }
        out.push('\n');
    }
    out
}

/// JSON twin of the table.
pub fn to_json(rows: &[ReportRow]) -> serde_json::Value {
    json!(rows
        .iter()
        .map(|row| {
            let mut obj = serde_json::Map::new();
            obj.insert("method".into(), json!(row.method));
            for (name, cell) in COLUMN_NAMES.iter().zip(&row.cells) {
                obj.insert(name.to_lowercase(), json!(cell.map(|v| v * 100.0)));
            }
            serde_json::Value::Object(obj)
        })
        .collect::<Vec<_>>())
}

/// Detailed single-run JSON: per-class IoU keyed by class name, the mean,
/// the rule, and optionally the raw confusion counts.
pub fn report_json(
    method: &str,
    report: &IoUReport,
    counts: Option<&ConfusionMatrix>,
) -> serde_json::Value {
    let mut per_class = serde_json::Map::new();
    for (name, iou) in CLASS_NAMES.iter().zip(&report.per_class) {
        per_class.insert(name.to_string(), json!(iou));
    }
    let mut out = serde_json::Map::new();
    out.insert("method".into(), json!(method));
    out.insert("per_class_iou".into(), serde_json::Value::Object(per_class));
    out.insert("miou".into(), json!(report.miou));
    out.insert(
        "miou_rule".into(),
        json!(match report.rule {
            MiouRule::All9 => "all9",
            MiouRule::Foreground8 => "fg8",
        }),
    );
    if let Some(cm) = counts {
        let rows: Vec<Vec<u64>> = (0..NUM_CLASSES)
            .map(|i| (0..NUM_CLASSES).map(|j| cm.count(i, j)).collect())
            .collect();
        out.insert("confusion_counts".into(), json!(rows));
        out.insert("pixels_ignored".into(), json!(cm.pixels_ignored()));
    }
    serde_json::Value::Object(out)
}
