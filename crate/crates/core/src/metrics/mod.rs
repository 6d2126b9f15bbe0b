//! Classification metrics and rank statistics.

pub mod classification;
pub mod ranking;

pub use classification::{accuracy, macro_f1, roc_auc, threshold_accuracy, PredictionSet};
pub use ranking::{
    cd_grouping, friedman_test, nemenyi_cd, nemenyi_q, rank_models, regime_advantage, FriedmanResult, Ranking,
    ScoreTable,
};
