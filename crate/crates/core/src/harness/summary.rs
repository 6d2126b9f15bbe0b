use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::RunRecord;

pub const SUMMARY_HEADER: [&str; 6] = ["config_id", "dataset", "metric", "mean", "std", "n_seeds"];
const SUMMARY_NOTE: &str = "# std is the population standard deviation over seeds";

/// Test primary metric aggregated over the seeds of one (config, dataset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub config_id: String,
    pub dataset: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

/// `(mean, population std)`.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One row per (config_id, dataset), sorted by that key; seeds enter the
/// mean in ascending order.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    let mut groups: BTreeMap<(&str, &str), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.config_id, &r.dataset)).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((config_id, dataset), mut runs) in groups {
        runs.sort_by_key(|r| r.seed);
        let metric = &runs[0].test.primary_metric;
        if runs.iter().any(|r| &r.test.primary_metric != metric) {
            return Err(Error::Validation(format!("mixed metrics for {config_id} on {dataset}")));
        }
        let values: Vec<f64> = runs.iter().map(|r| r.test.primary).collect();
        let (mean, std) = mean_std(&values);
        rows.push(SummaryRow {
            config_id: config_id.to_string(),
            dataset: dataset.to_string(),
            metric: metric.clone(),
            mean,
            std,
            n_seeds: runs.len(),
        });
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv");
    format!("{SUMMARY_NOTE}\n{body}")
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Validation(format!("summary csv: {e}"))))
        .collect()
}
