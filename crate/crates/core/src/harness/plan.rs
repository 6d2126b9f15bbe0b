use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainProtocol;

pub const PLAN_SCHEMA_VERSION: u32 = 1;

/// Optional replacements for the default protocol values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
}

impl ProtocolOverrides {
    pub fn protocol(&self, seed: u64) -> TrainProtocol {
        let d = TrainProtocol::with_seed(seed);
        TrainProtocol {
            shots_per_class: self.shots_per_class.unwrap_or(d.shots_per_class),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            epochs: self.epochs.unwrap_or(d.epochs),
            ..d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    /// Training split container.
    pub dataset: PathBuf,
    /// Test split; resolved from `dataset` when absent (see [`resolve_test_path`]).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_dataset: Option<PathBuf>,
    pub config: ModelConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub overrides: ProtocolOverrides,
    /// Human-readable variant name, carried into logs only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub schema_version: u32,
    pub entries: Vec<PlanEntry>,
    pub out_dir: PathBuf,
    /// Worker threads; 0 means one per available core.
    #[serde(default)]
    pub workers: usize,
}

impl ExperimentPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: ExperimentPlan = serde_json::from_str(text)?;
        if plan.schema_version != PLAN_SCHEMA_VERSION {
            return Err(Error::Validation(format!("unsupported plan schema version {}", plan.schema_version)));
        }
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// Checks seeds, configs and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Validation("plan has no entries".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.seeds.is_empty() {
                return Err(Error::Validation(format!("entry {i} has an empty seed list")));
            }
            e.config.validate()?;
            e.overrides.protocol(0).validate()?;
            if !e.dataset.is_file() {
                return Err(Error::Validation(format!("dataset file {} does not exist", e.dataset.display())));
            }
            if let Some(t) = &e.test_dataset {
                if !t.is_file() {
                    return Err(Error::Validation(format!("test dataset file {} does not exist", t.display())));
                }
            }
        }
        Ok(())
    }
}

/// Dataset identifier used in run file names: the file stem with any
/// trailing `_train`/`-train`/`.train` removed.
pub fn dataset_id(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    for suffix in ["_train", "-train", ".train"] {
        if let Some(s) = stem.strip_suffix(suffix) {
            if !s.is_empty() {
                return s.to_string();
            }
        }
    }
    stem
}

/// Where the test split for `train` lives: the explicit path if given, else
/// a sibling whose file name has its last "train" replaced by "test", else
/// `None`.
pub fn resolve_test_path(train: &Path, explicit: Option<&Path>) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.to_path_buf());
    }
    let name = train.file_name()?.to_string_lossy().into_owned();
    let at = name.rfind("train")?;
    let sibling = train.with_file_name(format!("{}test{}", &name[..at], &name[at + 5..]));
    sibling.is_file().then_some(sibling)
}
