//! Metrics CSV rows and the aggregated comparison table.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::train::MetricsReport;

pub const CSV_HEADER: &str = "method,seed,accuracy,mean_pixel_acc,mean_iou,n_test";

/// One evaluation; absent metrics serialize as empty fields.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub mean_pixel_acc: Option<f64>,
    pub mean_iou: Option<f64>,
    pub n_test: usize,
}

impl MetricsRow {
    pub fn from_report(method: &str, seed: u64, report: &MetricsReport) -> Self {
        MetricsRow {
            method: method.to_string(),
            seed,
            accuracy: report.accuracy,
            mean_pixel_acc: report.mean_pixel_accuracy(),
            mean_iou: report.mean_iou(),
            n_test: report.n_test,
        }
    }

    pub fn to_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{}",
            self.method,
            self.seed,
            f(self.accuracy),
            f(self.mean_pixel_acc),
            f(self.mean_iou),
            self.n_test
        )
    }

    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| Error::Data(format!("metrics line {line_no}: {what}"));
        let [method, seed, acc, pix, iou, n] = fields[..] else {
            return Err(bad("expected 6 fields"));
        };
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(&format!("bad number {s:?}")))
            }
        };
        Ok(MetricsRow {
            method: method.to_string(),
            seed: seed.parse().map_err(|_| bad("bad seed"))?,
            accuracy: opt(acc)?,
            mean_pixel_acc: opt(pix)?,
            mean_iou: opt(iou)?,
            n_test: n.parse().map_err(|_| bad("bad n_test"))?,
        })
    }
}

/// Appends rows, writing the header only when the file is new or empty.
pub fn append_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut text = String::new();
    if fresh {
        text.push_str(CSV_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Data(format!("metrics file must start with {CSV_HEADER:?}"))),
    }
    lines.map(|(i, l)| MetricsRow::parse(l.trim(), i + 1)).collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    parse_metrics(&fs::read_to_string(path)?)
}

/// Fixed-width comparison table, one line per row, percentages with one decimal.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let pct = |v: Option<f64>| v.map(|x| format!("{:.1}%", 100.0 * x)).unwrap_or_else(|| "-".into());
    let width = rows.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = format!(
        "{:<width$}  {:>10}  {:>9}  {:>8}  {:>6}  {:>6}\n",
        "method", "seed", "accuracy", "pix.acc", "mIoU", "n_test"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<width$}  {:>10}  {:>9}  {:>8}  {:>6}  {:>6}\n",
            r.method,
            r.seed,
            pct(r.accuracy),
            pct(r.mean_pixel_acc),
            pct(r.mean_iou),
            r.n_test
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, acc: Option<f64>) -> MetricsRow {
        MetricsRow {
            method: method.into(),
            seed: 7,
            accuracy: acc,
            mean_pixel_acc: None,
            mean_iou: None,
            n_test: 202,
        }
    }

    #[test]
    fn classification_row_leaves_segmentation_empty() {
        assert_eq!(row("fused", Some(0.84321)).to_line(), "fused,7,0.8432,,,202");
    }

    #[test]
    fn append_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        append_metrics(&path, &[row("a", Some(0.5))]).unwrap();
        append_metrics(&path, &[row("b", None)]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches(CSV_HEADER).count(), 1);
        assert_eq!(text.lines().count(), 3);
        let rows = read_metrics(&path).unwrap();
        assert_eq!(rows, vec![row("a", Some(0.5)), row("b", None)]);
    }

    #[test]
    fn parse_back_matches_at_four_decimals() {
        let r = MetricsRow {
            mean_pixel_acc: Some(0.912345),
            mean_iou: Some(2.0 / 3.0),
            ..row("roi", None)
        };
        let back = MetricsRow::parse(&r.to_line(), 1).unwrap();
        assert_eq!(back.mean_pixel_acc, Some(0.9123));
        assert_eq!(back.mean_iou, Some(0.6667));
    }

    #[test]
    fn malformed_rows() {
        assert!(parse_metrics("nope\n").is_err());
        assert!(parse_metrics(&format!("{CSV_HEADER}\na,1,2\n")).is_err());
    }
}
