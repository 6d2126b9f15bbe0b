use crate::data::TaskKind;
use crate::error::{Error, Result};

/// Class-probability rows paired with true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    scores: Vec<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    task_kind: TaskKind,
}

impl PredictionSet {
    /// `scores` is row-major `[n×K]`; each row must sum to 1 within 1e-9.
    pub fn new(scores: Vec<f64>, labels: Vec<usize>, num_classes: usize, task_kind: TaskKind) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Usage("predictions need at least two classes".into()));
        }
        if task_kind == TaskKind::Binary && num_classes != 2 {
            return Err(Error::Usage(format!("binary task with {num_classes} classes")));
        }
        if scores.len() != labels.len() * num_classes {
            return Err(Error::dim(
                "prediction_set",
                format!("{} scores for {} labels × {num_classes} classes", scores.len(), labels.len()),
            ));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Usage(format!("label {l} out of range for {num_classes} classes")));
        }
        for (i, row) in scores.chunks(num_classes).enumerate() {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Validation(format!("score row {i} is not a probability vector")));
            }
        }
        Ok(PredictionSet {
            scores,
            labels,
            num_classes,
            task_kind,
        })
    }

    /// Softmax of raw logit rows.
    pub fn from_logits(logits: &[f64], labels: Vec<usize>, num_classes: usize, task_kind: TaskKind) -> Result<Self> {
        let mut scores = Vec::with_capacity(logits.len());
        for row in logits.chunks(num_classes) {
            scores.extend(softmax(row));
        }
        Self::new(scores, labels, num_classes, task_kind)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.num_classes..(i + 1) * self.num_classes]
    }

    /// Argmax of row `i`, ties to the lowest class index.
    pub fn predicted(&self, i: usize) -> usize {
        argmax(self.row(i))
    }

    fn non_empty(&self, metric: &str) -> Result<()> {
        if self.is_empty() {
            Err(Error::Usage(format!("{metric} of an empty prediction set")))
        } else {
            Ok(())
        }
    }

    fn require_binary(&self, metric: &str) -> Result<()> {
        if self.task_kind != TaskKind::Binary {
            return Err(Error::Usage(format!("{metric} is defined for binary tasks only")));
        }
        Ok(())
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn accuracy(pred: &PredictionSet) -> Result<f64> {
    pred.non_empty("accuracy")?;
    let correct = (0..pred.len()).filter(|&i| pred.predicted(i) == pred.labels[i]).count();
    Ok(correct as f64 / pred.len() as f64)
}

/// Unweighted mean of per-class F1. A class that is neither present nor
/// predicted scores 0.
pub fn macro_f1(pred: &PredictionSet) -> Result<f64> {
    pred.non_empty("macro_f1")?;
    let k = pred.num_classes;
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fn_ = vec![0usize; k];
    for i in 0..pred.len() {
        let (p, t) = (pred.predicted(i), pred.labels[i]);
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    if let Some(exact) = exact_mean_f1(&tp, &fp, &fn_) {
        return Ok(exact);
    }
    let total: f64 = (0..k).map(|c| f1_from_counts(tp[c], fp[c], fn_[c])).sum();
    Ok(total / k as f64)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// The macro mean as one correctly rounded division, accumulating the
/// per-class fractions exactly. `None` when the integers outgrow exact f64.
fn exact_mean_f1(tp: &[usize], fp: &[usize], fn_: &[usize]) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for c in 0..tp.len() {
        let b = (2 * tp[c] + fp[c] + fn_[c]) as u128;
        if b == 0 {
            continue;
        }
        let a = 2 * tp[c] as u128;
        num = num.checked_mul(b)?.checked_add(a.checked_mul(den)?)?;
        den = den.checked_mul(b)?;
        let g = gcd(num, den).max(1);
        num /= g;
        den /= g;
    }
    den = den.checked_mul(tp.len() as u128)?;
    let g = gcd(num, den).max(1);
    num /= g;
    den /= g;
    const EXACT: u128 = 1 << 53;
    (num <= EXACT && den <= EXACT).then(|| num as f64 / den as f64)
}

/// `2·tp / (2·tp + fp + fn)`, which equals `2PR/(P+R)`; 0 when undefined.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * tp) as f64 / denom as f64
    }
}

/// Probability that a random positive (class 1) outscores a random negative,
/// ties counting one half. Computed from midranks (Mann-Whitney U).
pub fn roc_auc(pred: &PredictionSet) -> Result<f64> {
    pred.require_binary("roc_auc")?;
    pred.non_empty("roc_auc")?;
    let mut scored: Vec<(f64, bool)> = (0..pred.len()).map(|i| (pred.row(i)[1], pred.labels[i] == 1)).collect();
    let n_pos = scored.iter().filter(|s| s.1).count();
    let n_neg = scored.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("roc_auc needs both positive and negative labels".into()));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j + 1 < scored.len() && scored[j + 1].0 == scored[i].0 {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += mid * scored[i..=j].iter().filter(|s| s.1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Accuracy when class 1 is predicted iff its probability is at least `tau`.
pub fn threshold_accuracy(pred: &PredictionSet, tau: f64) -> Result<f64> {
    pred.require_binary("threshold_accuracy")?;
    pred.non_empty("threshold_accuracy")?;
    let correct = (0..pred.len())
        .filter(|&i| usize::from(pred.row(i)[1] >= tau) == pred.labels[i])
        .count();
    Ok(correct as f64 / pred.len() as f64)
}
