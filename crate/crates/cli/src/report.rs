//! CSV and JSON report files.

use std::path::{Path, PathBuf};

use tsda::adaptation::VariantName;
use tsda::evaluation::{MetricsReport, ReportRow};

use crate::config::ReportFormat;
use crate::error::{CliError, Result};
use crate::fsio;

pub const CSV_FILE: &str = "report.csv";
pub const JSON_FILE: &str = "report.json";

fn rank(variant: &str) -> usize {
    variant
        .parse::<VariantName>()
        .map_or(usize::MAX, VariantName::rank)
}

/// Stable sort into the registry order; unknown variants go last.
pub fn order_rows(report: &mut MetricsReport) {
    report.rows.sort_by_key(|r| rank(&r.variant));
}

pub fn to_csv(report: &MetricsReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.rows {
        w.serialize(r).map_err(|e| CliError::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn from_csv(text: &str) -> Result<MetricsReport> {
    let rows = csv::Reader::from_reader(text.as_bytes())
        .deserialize::<ReportRow>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::Parse(e.to_string()))?;
    Ok(MetricsReport { rows })
}

pub fn to_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<MetricsReport> {
    serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
}

/// Reads a report written by [`emit_report`], choosing the parser by extension.
pub fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = fsio::read_string(path)?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => from_csv(&text),
        _ => from_json(&text),
    };
    parsed.map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

/// Writes the report in each format under `dir`, rows in registry order.
pub fn emit_report(
    report: &MetricsReport,
    dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(CliError::Data("empty report".into()));
    }
    report.validate()?;
    let mut ordered = report.clone();
    order_rows(&mut ordered);
    let mut written = Vec::new();
    for f in formats {
        let (name, body) = match f {
            ReportFormat::Csv => (CSV_FILE, to_csv(&ordered)?),
            ReportFormat::Json => (JSON_FILE, to_json(&ordered)),
        };
        let path = dir.join(name);
        fsio::write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &str, auc: f64) -> ReportRow {
        ReportRow {
            variant: v.into(),
            roc_auc: auc,
            pr_auc: 0.1 + auc / 3.0,
            n_pos: 7,
            n_neg: 40,
            variance_bound: 0.0123456789,
            seed: 4,
            config_digest: "ab".into(),
        }
    }

    #[test]
    fn order_puts_unknown_last() {
        let mut r = MetricsReport {
            rows: vec![
                row("zzz", 0.5),
                row("teacher_on_source", 0.9),
                row("naive_transfer", 0.7),
            ],
        };
        order_rows(&mut r);
        let names: Vec<_> = r.rows.iter().map(|r| r.variant.as_str()).collect();
        assert_eq!(names, ["naive_transfer", "teacher_on_source", "zzz"]);
    }

    #[test]
    fn csv_round_trip() {
        let r = MetricsReport {
            rows: vec![row("full", 1.0 / 3.0), row("minimal", 0.1 + 0.2)],
        };
        assert_eq!(from_csv(&to_csv(&r).unwrap()).unwrap(), r);
        assert!(to_csv(&r)
            .unwrap()
            .starts_with("variant,roc_auc,pr_auc,n_pos,n_neg,variance_bound,seed,config_digest\n"));
    }

    #[test]
    fn empty_report_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&MetricsReport::default(), dir.path(), &[ReportFormat::Csv]).is_err());
    }
}
