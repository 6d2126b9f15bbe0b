//! Multi-dataset model comparison: mean ranks, the Friedman test, the
//! Nemenyi critical difference and critical-difference groupings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Models × datasets matrix of scores (higher is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    /// `scores[model][dataset]`
    pub scores: Vec<Vec<f64>>,
    /// Metric name per dataset.
    pub metrics: Vec<String>,
}

impl ScoreTable {
    pub fn new(models: Vec<String>, datasets: Vec<String>, scores: Vec<Vec<f64>>, metrics: Vec<String>) -> Result<Self> {
        let t = ScoreTable {
            models,
            datasets,
            scores,
            metrics,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.len() != self.models.len() {
            return Err(Error::Validation(format!(
                "{} score rows for {} models",
                self.scores.len(),
                self.models.len()
            )));
        }
        if self.metrics.len() != self.datasets.len() {
            return Err(Error::Validation("one metric name per dataset is required".into()));
        }
        for (m, row) in self.models.iter().zip(&self.scores) {
            if row.len() != self.datasets.len() {
                return Err(Error::Validation(format!("model {m} has {} of {} scores", row.len(), self.datasets.len())));
            }
            if let Some(j) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("score for {m} on {} is not finite", self.datasets[j])));
            }
        }
        Ok(())
    }

    pub fn model_index(&self, name: &str) -> Result<usize> {
        self.models
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| Error::Usage(format!("model {name:?} is not in the table")))
    }

    pub fn dataset_index(&self, name: &str) -> Result<usize> {
        self.datasets
            .iter()
            .position(|d| d == name)
            .ok_or_else(|| Error::Usage(format!("dataset {name:?} is not in the table")))
    }

    pub fn score(&self, model: &str, dataset: &str) -> Result<f64> {
        Ok(self.scores[self.model_index(model)?][self.dataset_index(dataset)?])
    }
}

/// Subject score minus the mean score of `baselines` on one dataset.
pub fn regime_advantage(table: &ScoreTable, subject: &str, baselines: &[&str], dataset: &str) -> Result<f64> {
    if baselines.is_empty() {
        return Err(Error::Usage("regime advantage needs at least one baseline".into()));
    }
    let own = table.score(subject, dataset)?;
    let mut total = 0.0;
    for b in baselines {
        total += table.score(b, dataset)?;
    }
    Ok(own - total / baselines.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    /// `ranks[model][dataset]`, 1 = best, ties share their average rank.
    pub ranks: Vec<Vec<f64>>,
    pub mean_ranks: Vec<f64>,
}

/// Ranks of one column of scores, descending, ties averaged.
pub fn rank_descending(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let shared = (i + j + 2) as f64 / 2.0;
        for &m in &order[i..=j] {
            ranks[m] = shared;
        }
        i = j + 1;
    }
    ranks
}

pub fn rank_models(table: &ScoreTable) -> Result<Ranking> {
    table.validate()?;
    let k = table.models.len();
    let n = table.datasets.len();
    let mut ranks = vec![vec![0.0; n]; k];
    for d in 0..n {
        let column: Vec<f64> = table.scores.iter().map(|row| row[d]).collect();
        for (m, r) in rank_descending(&column).into_iter().enumerate() {
            ranks[m][d] = r;
        }
    }
    let mean_ranks = ranks.iter().map(|row| row.iter().sum::<f64>() / n.max(1) as f64).collect();
    Ok(Ranking { ranks, mean_ranks })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
}

/// Friedman chi-square on a `[k×N]` rank matrix:
/// `χ² = 12N / (k(k+1)) · (Σ R̄ⱼ² − k(k+1)²/4)`, p from χ²(k−1).
pub fn friedman_test(ranks: &[Vec<f64>]) -> Result<FriedmanResult> {
    let k = ranks.len();
    if k < 3 {
        return Err(Error::Usage(format!("the Friedman test needs at least 3 models, got {k}")));
    }
    let n = ranks[0].len();
    if n < 2 {
        return Err(Error::Usage(format!("the Friedman test needs at least 2 datasets, got {n}")));
    }
    if ranks.iter().any(|r| r.len() != n) {
        return Err(Error::dim("friedman_test", "ragged rank matrix"));
    }
    let (kf, nf) = (k as f64, n as f64);
    let sum_sq: f64 = ranks
        .iter()
        .map(|r| {
            let mean = r.iter().sum::<f64>() / nf;
            mean * mean
        })
        .sum();
    let statistic = (12.0 * nf / (kf * (kf + 1.0)) * (sum_sq - kf * (kf + 1.0).powi(2) / 4.0)).max(0.0);
    let df = k - 1;
    let p_value = if statistic == 0.0 {
        1.0
    } else {
        statrs::function::gamma::checked_gamma_ur(df as f64 / 2.0, statistic / 2.0)
            .map_err(|e| Error::UndefinedMetric(format!("Friedman p-value: {e}")))?
            .clamp(0.0, 1.0)
    };
    Ok(FriedmanResult {
        statistic,
        p_value,
        df,
    })
}

/// Critical values `q_α(k)` of the two-tailed Nemenyi test for k = 2..=20:
/// upper quantiles of the Studentized range with infinite degrees of
/// freedom divided by √2 (the k ≤ 10 entries match Demšar's Table 5).
/// Evaluated with `scipy.stats.studentized_range.ppf(1 − α, k, ∞) / √2`.
const Q_ALPHA_005: [f64; 19] = [
    1.959964, 2.343701, 2.569032, 2.727774, 2.849705, 2.948320, 3.030878, 3.101730, 3.163684, 3.218654,
    3.268004, 3.312739, 3.353618, 3.391230, 3.426041, 3.458425, 3.488685, 3.517073, 3.543799,
];
const Q_ALPHA_010: [f64; 19] = [
    1.644854, 2.052293, 2.291341, 2.459516, 2.588521, 2.692732, 2.779884, 2.854606, 2.919889, 2.977768,
    3.029694, 3.076733, 3.119693, 3.159199, 3.195743, 3.229723, 3.261461, 3.291224, 3.319233,
];

/// Tabulated `q_α(k)`; only α ∈ {0.05, 0.10} and 2 ≤ k ≤ 20 are available.
pub fn nemenyi_q(k: usize, alpha: f64) -> Result<f64> {
    let table = if (alpha - 0.05).abs() < 1e-12 {
        &Q_ALPHA_005
    } else if (alpha - 0.10).abs() < 1e-12 {
        &Q_ALPHA_010
    } else {
        return Err(Error::Usage(format!("no Nemenyi constants for alpha {alpha}; use 0.05 or 0.10")));
    };
    if !(2..=20).contains(&k) {
        return Err(Error::Usage(format!("no Nemenyi constants for k = {k}; tabulated for 2..=20")));
    }
    Ok(table[k - 2])
}

/// `CD = q_α(k) · sqrt(k(k+1) / (6N))`.
pub fn nemenyi_cd(k: usize, n: usize, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Usage("critical difference needs at least one dataset".into()));
    }
    let q = nemenyi_q(k, alpha)?;
    Ok(q * ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt())
}

/// Maximal runs of models (sorted by mean rank) whose rank spread is within
/// `cd`. Returned groups hold model indices in rank order.
pub fn cd_grouping(mean_ranks: &[f64], cd: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..mean_ranks.len()).collect();
    order.sort_by(|&a, &b| mean_ranks[a].total_cmp(&mean_ranks[b]));
    let mut groups = Vec::new();
    let mut last_end: Option<usize> = None;
    for i in 0..order.len() {
        let mut j = i;
        while j + 1 < order.len() && mean_ranks[order[j + 1]] - mean_ranks[order[i]] <= cd {
            j += 1;
        }
        if last_end.is_none_or(|e| j > e) {
            groups.push(order[i..=j].to_vec());
            last_end = Some(j);
        }
    }
    groups
}
