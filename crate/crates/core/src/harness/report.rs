use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{cd_grouping, friedman_test, nemenyi_cd, rank_models, regime_advantage, FriedmanResult, ScoreTable};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Deserialize)]
struct LongRow {
    model: String,
    dataset: String,
    #[serde(default)]
    metric: Option<String>,
    score: f64,
}

/// Parses a score table from CSV. Two layouts are accepted:
///
/// * long: `model,dataset,score` with an optional `metric` column;
/// * a sweep summary (`config_id,dataset,metric,mean,...`), where each
///   config is a model and `mean` is its score.
///
/// Models and datasets keep their order of first appearance. A table with
/// missing cells is rejected with the full list of them.
pub fn parse_score_table(text: &str) -> Result<ScoreTable> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Validation(format!("score csv: {e}")))?.clone();
    let summary = headers.iter().any(|h| h == "config_id");
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Validation(format!("score csv: {e}")))?;
        let row: LongRow = if summary {
            let field = |name: &str| -> Result<String> {
                let i = headers.iter().position(|h| h == name).ok_or_else(|| Error::Validation(format!("summary csv lacks {name}")))?;
                Ok(rec.get(i).unwrap_or_default().to_string())
            };
            LongRow {
                model: field("config_id")?,
                dataset: field("dataset")?,
                metric: Some(field("metric")?),
                score: field("mean")?
                    .parse()
                    .map_err(|e| Error::Validation(format!("score csv row {}: {e}", line + 1)))?,
            }
        } else {
            rec.deserialize(Some(&headers))
                .map_err(|e| Error::Validation(format!("score csv row {}: {e}", line + 1)))?
        };
        rows.push(row);
    }
    let mut models: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    for r in &rows {
        if !models.contains(&r.model) {
            models.push(r.model.clone());
        }
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
    }
    let mut cells: Vec<Vec<Option<f64>>> = vec![vec![None; datasets.len()]; models.len()];
    let mut metrics: Vec<Option<String>> = vec![None; datasets.len()];
    for r in rows {
        let m = models.iter().position(|x| *x == r.model).expect("model listed");
        let d = datasets.iter().position(|x| *x == r.dataset).expect("dataset listed");
        if cells[m][d].replace(r.score).is_some() {
            return Err(Error::Validation(format!("duplicate score for {} on {}", r.model, r.dataset)));
        }
        if let Some(metric) = r.metric {
            match &metrics[d] {
                Some(existing) if *existing != metric => {
                    return Err(Error::Validation(format!("dataset {} mixes metrics {existing} and {metric}", r.dataset)))
                }
                _ => metrics[d] = Some(metric),
            }
        }
    }
    let missing: Vec<String> = models
        .iter()
        .enumerate()
        .flat_map(|(m, name)| {
            let cells = &cells;
            datasets
                .iter()
                .enumerate()
                .filter(move |&(d, _)| cells[m][d].is_none())
                .map(move |(_, ds)| format!("{name}/{ds}"))
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!("score table is missing cells: {}", missing.join(", "))));
    }
    let scores = cells.into_iter().map(|row| row.into_iter().map(|c| c.expect("checked")).collect()).collect();
    let metrics = metrics.into_iter().map(|m| m.unwrap_or_else(|| "score".into())).collect();
    ScoreTable::new(models, datasets, scores, metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageReport {
    pub subject: String,
    pub baselines: Vec<String>,
    /// `(dataset, advantage)` in table order.
    pub per_dataset: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub schema_version: u32,
    pub alpha: f64,
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub metrics: Vec<String>,
    pub ranks: Vec<Vec<f64>>,
    pub mean_ranks: Vec<f64>,
    /// Absent for fewer than three models.
    pub friedman: Option<FriedmanResult>,
    pub critical_difference: f64,
    /// Groups of model names whose mean ranks differ by at most the CD.
    pub groups: Vec<Vec<String>>,
    /// Number of datasets on which each model holds rank 1 (ties included).
    pub first_places: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advantage: Option<AdvantageReport>,
}

pub fn rank_report(table: &ScoreTable, alpha: f64, advantage: Option<(&str, &[&str])>) -> Result<RankReport> {
    let ranking = rank_models(table)?;
    let k = table.models.len();
    let n = table.datasets.len();
    let friedman = if k >= 3 && n >= 2 { Some(friedman_test(&ranking.ranks)?) } else { None };
    let cd = nemenyi_cd(k, n, alpha)?;
    let groups = cd_grouping(&ranking.mean_ranks, cd)
        .into_iter()
        .map(|g| g.into_iter().map(|m| table.models[m].clone()).collect())
        .collect();
    let first_places = ranking.ranks.iter().map(|row| row.iter().filter(|&&r| r < 2.0).count()).collect();
    let advantage = match advantage {
        None => None,
        Some((subject, baselines)) => Some(AdvantageReport {
            subject: subject.to_string(),
            baselines: baselines.iter().map(|b| b.to_string()).collect(),
            per_dataset: table
                .datasets
                .iter()
                .map(|d| Ok((d.clone(), regime_advantage(table, subject, baselines, d)?)))
                .collect::<Result<_>>()?,
        }),
    };
    Ok(RankReport {
        schema_version: REPORT_SCHEMA_VERSION,
        alpha,
        models: table.models.clone(),
        datasets: table.datasets.clone(),
        metrics: table.metrics.clone(),
        ranks: ranking.ranks,
        mean_ranks: ranking.mean_ranks,
        friedman,
        critical_difference: cd,
        groups,
        first_places,
        advantage,
    })
}

/// Plot data for a critical-difference diagram:
/// `kind,label,start,end` with one `model` row per model (start = end =
/// mean rank), one `group` row per group and one `cd` row spanning the CD.
pub fn plot_csv(report: &RankReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["kind", "label", "start", "end"]).expect("in-memory write");
    let mut put = |kind: &str, label: &str, a: f64, b: f64| {
        w.write_record([kind, label, &a.to_string(), &b.to_string()]).expect("in-memory write");
    };
    let mut order: Vec<usize> = (0..report.models.len()).collect();
    order.sort_by(|&a, &b| report.mean_ranks[a].total_cmp(&report.mean_ranks[b]));
    for &m in &order {
        put("model", &report.models[m], report.mean_ranks[m], report.mean_ranks[m]);
    }
    for (g, members) in report.groups.iter().enumerate() {
        let ranks: Vec<f64> = members
            .iter()
            .map(|name| report.mean_ranks[report.models.iter().position(|m| m == name).expect("member")])
            .collect();
        let lo = ranks.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ranks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        put("group", &format!("g{g}"), lo, hi);
    }
    put("cd", "cd", 1.0, 1.0 + report.critical_difference);
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}
