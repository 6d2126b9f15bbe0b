//! Experiment orchestration: plans, built-in grids, sweeps, summaries and
//! rank reports.

pub mod grid;
pub mod plan;
pub mod report;
pub mod summary;
pub mod sweep;

pub use grid::{builtin_grid, GridVariant, GRID_NAMES};
pub use plan::{dataset_id, resolve_test_path, ExperimentPlan, PlanEntry, ProtocolOverrides, PLAN_SCHEMA_VERSION};
pub use report::{parse_score_table, plot_csv, rank_report, AdvantageReport, RankReport};
pub use summary::{mean_std, parse_summary_csv, summarize, summary_csv, SummaryRow};
pub use sweep::{expand_plan, read_run_files, run_cells, write_outputs, Cell, CellFailure, CellKey, SweepOutcome};
