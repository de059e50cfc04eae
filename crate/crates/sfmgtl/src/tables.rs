//! Result tables as CSV and JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sfmgtl_core::evaluation::{MetricReport, SummaryRow};

use crate::error::{Error, IoContext, Result};
use crate::formats::write_json;
use crate::runner::QualityCell;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn joined(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let file = std::fs::File::create(path).at(path)?;
    let mut w = csv::Writer::from_writer(file);
    let err = |e: csv::Error| Error::Runtime(format!("{}: {e}", path.display()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    w.flush().at(path)
}

const SUMMARY_HEADER: [&str; 5] = ["median_rmse", "median_mae", "median_r2", "per_seed_mae", "per_seed_rmse"];

fn summary_cells(r: &SummaryRow) -> Vec<String> {
    vec![r.median_rmse.to_string(), r.median_mae.to_string(), opt(r.median_r2), joined(&r.per_seed_mae), joined(&r.per_seed_rmse)]
}

/// `<stem>.csv` and `<stem>.json` with one row per summary.
pub fn write_summary(dir: &Path, stem: &str, rows: &[SummaryRow]) -> Result<()> {
    let mut header = vec!["label"];
    header.extend(SUMMARY_HEADER);
    let body = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.label.clone()];
            v.extend(summary_cells(r));
            v
        })
        .collect();
    write_csv(&dir.join(format!("{stem}.csv")), &header, body)?;
    write_json(&dir.join(format!("{stem}.json")), rows)
}

pub fn write_quality(dir: &Path, stem: &str, cells: &[QualityCell]) -> Result<()> {
    let mut header = vec!["source_days", "noise_multiple", "noise_sd"];
    header.extend(SUMMARY_HEADER);
    let body = cells
        .iter()
        .map(|c| {
            let mut v = vec![c.source_days.to_string(), c.noise_multiple.to_string(), c.noise_sd.to_string()];
            v.extend(summary_cells(&c.row));
            v
        })
        .collect();
    write_csv(&dir.join(format!("{stem}.csv")), &header, body)?;
    write_json(&dir.join(format!("{stem}.json")), cells)
}

/// Test metrics of one trained model, with the validation score it was
/// selected on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsDoc {
    pub stage: String,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    pub val: Option<MetricReport>,
    pub test: MetricReport,
    /// Extra rows such as baselines, by name.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baselines: Vec<(String, MetricReport)>,
}

pub fn write_metrics(dir: &Path, doc: &MetricsDoc) -> Result<()> {
    let mut rows = vec![(doc.stage.clone(), doc.test)];
    rows.extend(doc.baselines.iter().cloned());
    let body = rows
        .into_iter()
        .map(|(name, r)| vec![name, r.rmse.to_string(), r.mae.to_string(), opt(r.r2)])
        .collect();
    write_csv(&dir.join("metrics.csv"), &["model", "rmse", "mae", "r2"], body)?;
    write_json(&dir.join("metrics.json"), doc)
}
