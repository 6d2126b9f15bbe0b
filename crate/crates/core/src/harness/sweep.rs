use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{dataset_id, resolve_test_path, ExperimentPlan};
use super::summary::{summarize, summary_csv, SummaryRow};
use crate::data::DatasetSplit;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::{run_protocol, RunRecord, TrainProtocol};

/// Sort key of one sweep cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub config_id: String,
    pub dataset: String,
    pub seed: u64,
}

impl std::fmt::Display for CellKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.config_id, self.dataset, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub key: CellKey,
    pub config: ModelConfig,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub protocol: TrainProtocol,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub key: CellKey,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepOutcome {
    pub records: Vec<RunRecord>,
    pub failures: Vec<CellFailure>,
}

impl SweepOutcome {
    pub fn summary(&self) -> Result<Vec<SummaryRow>> {
        summarize(&self.records)
    }
}

/// Every (config, dataset, seed) cell of the plan, sorted by key. A test
/// split that cannot be resolved falls back to the training file itself.
pub fn expand_plan(plan: &ExperimentPlan) -> Result<Vec<Cell>> {
    let mut cells: BTreeMap<CellKey, Cell> = BTreeMap::new();
    for e in &plan.entries {
        let test_path = resolve_test_path(&e.dataset, e.test_dataset.as_deref()).unwrap_or_else(|| e.dataset.clone());
        let config_id = e.config.id();
        for &seed in &e.seeds {
            let key = CellKey {
                config_id: config_id.clone(),
                dataset: dataset_id(&e.dataset),
                seed,
            };
            if cells.contains_key(&key) {
                return Err(Error::Validation(format!("duplicate sweep cell {key}")));
            }
            cells.insert(
                key.clone(),
                Cell {
                    key,
                    config: e.config.clone(),
                    train_path: e.dataset.clone(),
                    test_path: test_path.clone(),
                    protocol: e.overrides.protocol(seed),
                    label: e.label.clone(),
                },
            );
        }
    }
    Ok(cells.into_values().collect())
}

fn load_all(cells: &[Cell]) -> BTreeMap<PathBuf, std::result::Result<Arc<DatasetSplit>, String>> {
    let mut out = BTreeMap::new();
    for c in cells {
        for p in [&c.train_path, &c.test_path] {
            out.entry(p.clone())
                .or_insert_with(|| DatasetSplit::load(p).map(Arc::new).map_err(|e| e.to_string()));
        }
    }
    out
}

fn run_cell(cell: &Cell, data: &BTreeMap<PathBuf, std::result::Result<Arc<DatasetSplit>, String>>) -> Result<RunRecord> {
    let get = |p: &Path| data[p].clone().map_err(Error::Validation);
    let train = get(&cell.train_path)?;
    let test = get(&cell.test_path)?;
    run_protocol(&train, &test, &cell.config, &cell.protocol, &cell.key.dataset)
}

/// Runs every cell on a pool of `workers` threads (0 = one per core).
/// Results come back in key order whatever the pool size, and a failing
/// cell is recorded without stopping the others.
pub fn run_cells(cells: &[Cell], workers: usize, on_done: impl Fn(&CellKey, &Result<RunRecord>) + Sync) -> Result<SweepOutcome> {
    let data = load_all(cells);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<RunRecord>> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| {
                let r = run_cell(c, &data);
                on_done(&c.key, &r);
                r
            })
            .collect()
    });
    let mut outcome = SweepOutcome::default();
    for (cell, r) in cells.iter().zip(results) {
        match r {
            Ok(rec) => outcome.records.push(rec),
            Err(e) => outcome.failures.push(CellFailure {
                key: cell.key.clone(),
                error: e.to_string(),
            }),
        }
    }
    Ok(outcome)
}

/// Writes one JSON file per run, `summary.csv` and, when any cell failed,
/// `failures.json`. Returns the summary rows.
pub fn write_outputs(out_dir: &Path, outcome: &SweepOutcome) -> Result<Vec<SummaryRow>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for r in &outcome.records {
        let path = out_dir.join(r.file_name());
        std::fs::write(&path, r.to_json()).map_err(|e| Error::io(&path, e))?;
    }
    let rows = outcome.summary()?;
    let path = out_dir.join("summary.csv");
    std::fs::write(&path, summary_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    if !outcome.failures.is_empty() {
        let path = out_dir.join("failures.json");
        let text = serde_json::to_string_pretty(&outcome.failures)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(rows)
}

/// Reads every `run_*.json` file in a directory, sorted by file name.
pub fn read_run_files(dir: &Path) -> Result<Vec<RunRecord>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.starts_with("run_") && name.ends_with(".json")
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            RunRecord::from_json(&text)
        })
        .collect()
}
