//! Built-in invariant suites behind the `selftest` command.

use std::path::Path;
use std::time::Instant;

use crate::data::{DatasetSplit, TaskKind};
use crate::error::{Error, Result};
use crate::metrics::{friedman_test, macro_f1, nemenyi_cd, nemenyi_q, roc_auc, PredictionSet};
use crate::model::{forward_patches, patchify, ModelConfig, ModelParams, Pooling};
use crate::rng::Rng;
use crate::tensor::{gradcheck, Fault, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SelfTestOptions {
    /// Optional container to validate as an extra suite.
    pub file: Option<std::path::PathBuf>,
    /// Deliberately broken kernel, to show the gradient suite catches it.
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, Default)]
pub struct SelfTestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelfTestReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn render(&self) -> String {
        let width = self.suites.iter().map(|s| s.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for s in &self.suites {
            out.push_str(&format!(
                "{} {:width$}  {:>8.3}s  {}\n",
                if s.passed { "PASS" } else { "FAIL" },
                s.name,
                s.seconds,
                s.detail
            ));
        }
        let failed = self.suites.iter().filter(|s| !s.passed).count();
        out.push_str(&format!("{} suites, {failed} failed\n", self.suites.len()));
        out
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> SuiteResult {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    SuiteResult {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_selftest(opts: &SelfTestOptions) -> SelfTestReport {
    let mut suites = vec![
        timed("permutation-invariance", permutation_suite),
        timed("positional-sensitivity", positional_suite),
        timed("gradient-check", || gradient_suite(opts.fault)),
        timed("zero-init-residual", zero_residual_suite),
        timed("metric-oracles", metric_suite),
        timed("rank-statistics", rank_suite),
    ];
    if let Some(path) = &opts.file {
        suites.push(timed("container-file", || container_suite(path)));
    }
    SelfTestReport { suites }
}

/// Every ordering of `0..n` (Heap's algorithm).
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k - 1 {
            heap(k - 1, a, out);
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
        heap(k - 1, a, out);
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

fn random_image(config: &ModelConfig, rng: &mut Rng) -> Tensor {
    let s = config.input_size;
    let data = (0..s * s * config.channels).map(|_| rng.next_f64()).collect();
    Tensor::new(&[s, s, config.channels], data).expect("shape matches data")
}

fn logits_for(params: &ModelParams, config: &ModelConfig, patches: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind_constant(&mut tape);
    let p = tape.constant(patches.clone());
    let out = forward_patches(&mut tape, p, &bound, config)?;
    Ok(tape.value(out).clone())
}

/// Largest logit change over all reorderings of the patch rows (all of them
/// for up to 6 patches, otherwise 50 random ones).
pub fn max_permutation_deviation(params: &ModelParams, config: &ModelConfig, image: &Tensor, rng: &mut Rng) -> Result<f64> {
    let patches = patchify(image, config.patch_size)?;
    let base = logits_for(params, config, &patches)?;
    let n = config.num_patches();
    let orders = if n <= 6 { all_permutations(n) } else { (0..50).map(|_| rng.permutation(n)).collect() };
    let mut worst: f64 = 0.0;
    for order in orders {
        let permuted = logits_for(params, config, &patches.permute_rows(&order)?)?;
        worst = worst.max(base.max_abs_diff(&permuted));
    }
    Ok(worst)
}

fn four_patch(pooling: Pooling, use_positional: bool) -> ModelConfig {
    ModelConfig {
        pooling,
        use_positional,
        num_classes: 3,
        ..ModelConfig::toy(3)
    }
}

fn permutation_suite() -> Result<(bool, String)> {
    let mut rng = Rng::new(11);
    let mut worst: f64 = 0.0;
    for pooling in Pooling::ALL {
        let config = four_patch(pooling, false);
        let params = ModelParams::init(&config, &mut rng)?;
        let image = random_image(&config, &mut rng);
        worst = worst.max(max_permutation_deviation(&params, &config, &image, &mut rng)?);
    }
    Ok((worst <= 1e-9, format!("max deviation {worst:.3e} over 24 orders x 4 poolings (limit 1e-9)")))
}

fn positional_suite() -> Result<(bool, String)> {
    let mut rng = Rng::new(12);
    let config = four_patch(Pooling::Gap, true);
    let mut params = ModelParams::init(&config, &mut rng)?;
    // Unit-scale table so the effect is clearly above rounding.
    if let Some(p) = params.positional.as_mut() {
        p.data_mut().iter_mut().for_each(|x| *x = rng.normal());
    }
    let image = random_image(&config, &mut rng);
    let d = max_permutation_deviation(&params, &config, &image, &mut rng)?;
    Ok((d > 1e-6, format!("max deviation {d:.3e} (needs > 1e-6)")))
}

/// Rebinds a flat list of variables into the parameter structure.
pub fn params_from_vars(template: &ModelParams, vars: &[Var]) -> crate::model::Params<Var> {
    let mut it = vars.iter().copied();
    template.map(|_, _| it.next().expect("one variable per parameter tensor"))
}

/// Relative-error gradient check of every parameter of `config` on one
/// random image, through the cross-entropy loss.
pub fn model_gradcheck(config: &ModelConfig, seed: u64, fault: Option<Fault>) -> Result<gradcheck::GradCheckReport> {
    let mut rng = Rng::new(seed);
    let params = ModelParams::init(config, &mut rng)?;
    let image = random_image(config, &mut rng);
    let label = rng.below(config.num_classes);
    let patches = patchify(&image, config.patch_size)?;
    let leaves: Vec<Tensor> = params.leaves().into_iter().cloned().collect();
    gradcheck::check(&leaves, gradcheck::DEFAULT_STEP, fault, |tape, vars| {
        let bound = params_from_vars(&params, vars);
        let p = tape.constant(patches.clone());
        let logits = forward_patches(tape, p, &bound, config)?;
        tape.cross_entropy(logits, &[label])
    })
}

fn gradient_suite(fault: Option<Fault>) -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (i, pooling) in Pooling::ALL.into_iter().enumerate() {
        let config = ModelConfig {
            pooling,
            use_positional: true,
            ..ModelConfig::toy(2)
        };
        let r = model_gradcheck(&config, 20 + i as u64, fault)?;
        worst = worst.max(r.max_relative_error);
        checked += r.checked;
    }
    Ok((worst <= 1e-4, format!("{checked} partials, max relative error {worst:.3e} (limit 1e-4)")))
}

fn zero_residual_suite() -> Result<(bool, String)> {
    let mut rng = Rng::new(13);
    let config = ModelConfig::toy(2);
    let params = ModelParams::init(&config, &mut rng)?;
    let image = random_image(&config, &mut rng);
    let patches = patchify(&image, config.patch_size)?;
    let with = logits_for(&params, &config, &patches)?;
    let mut ablated = params.clone();
    for b in &mut ablated.blocks {
        b.residual_proj = None;
    }
    let no_skip = ModelConfig {
        use_adaptive_residual: false,
        ..config.clone()
    };
    let without = logits_for(&ablated, &no_skip, &patches)?;
    let d = with.max_abs_diff(&without);
    Ok((d <= 1e-12, format!("logit change {d:.3e} when the projected skip is removed (limit 1e-12)")))
}

/// Macro F1 straight from the definition in exact rational arithmetic:
/// per class P = tp/predicted and R = tp/actual, F1 = 2PR/(P+R) or 0,
/// averaged over classes and rounded once.
pub fn brute_macro_f1(pred: &[usize], labels: &[usize], k: usize) -> f64 {
    type Q = (i128, i128);
    fn reduce((n, d): Q) -> Q {
        let (mut a, mut b) = (n.abs(), d.abs());
        while b != 0 {
            (a, b) = (b, a % b);
        }
        let g = a.max(1) * d.signum();
        (n / g, d / g)
    }
    let add = |x: Q, y: Q| reduce((x.0 * y.1 + y.0 * x.1, x.1 * y.1));
    let mul = |x: Q, y: Q| reduce((x.0 * y.0, x.1 * y.1));
    let div = |x: Q, y: Q| reduce((x.0 * y.1, x.1 * y.0));
    let mut total: Q = (0, 1);
    for c in 0..k {
        let tp = pred.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count() as i128;
        let predicted = pred.iter().filter(|&&p| p == c).count() as i128;
        let actual = labels.iter().filter(|&&l| l == c).count() as i128;
        let precision = if predicted > 0 { (tp, predicted) } else { (0, 1) };
        let recall = if actual > 0 { (tp, actual) } else { (0, 1) };
        let sum = add(precision, recall);
        if sum.0 > 0 {
            total = add(total, div(mul((2, 1), mul(precision, recall)), sum));
        }
    }
    let mean = div(total, (k as i128, 1));
    mean.0 as f64 / mean.1 as f64
}

/// AUC by enumerating every positive/negative pair.
pub fn brute_auc(scores: &[f64], labels: &[usize]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn metric_suite() -> Result<(bool, String)> {
    let mut rng = Rng::new(14);
    let mut mismatches = 0;
    for _ in 0..200 {
        let n = 2 + rng.below(11);
        let k = 2 + rng.below(3);
        // Coarse probabilities so ties occur.
        let mut scores = Vec::with_capacity(n * k);
        for _ in 0..n {
            let raw: Vec<f64> = (0..k).map(|_| (1 + rng.below(4)) as f64).collect();
            let total: f64 = raw.iter().sum();
            scores.extend(raw.iter().map(|r| r / total));
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
        let pred = PredictionSet::new(scores.clone(), labels.clone(), k, TaskKind::for_class_count(k))?;
        let predicted: Vec<usize> = (0..n).map(|i| pred.predicted(i)).collect();
        if macro_f1(&pred)? != brute_macro_f1(&predicted, &labels, k) {
            mismatches += 1;
        }
        if k == 2 && labels.contains(&0) && labels.contains(&1) {
            let s1: Vec<f64> = (0..n).map(|i| scores[2 * i + 1]).collect();
            if roc_auc(&pred)? != brute_auc(&s1, &labels) {
                mismatches += 1;
            }
        }
    }
    Ok((mismatches == 0, format!("{mismatches} mismatches over 200 random sets")))
}

fn rank_suite() -> Result<(bool, String)> {
    let ranks = vec![vec![1.0; 4], vec![2.0; 4], vec![3.0; 4]];
    let f = friedman_test(&ranks)?;
    let mut ok = f.statistic == 8.0 && f.df == 2;
    for (k, n) in [(5usize, 7usize), (15, 7)] {
        let cd = nemenyi_cd(k, n, 0.05)?;
        let hand = nemenyi_q(k, 0.05)? * ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt();
        ok &= (cd - hand).abs() <= 1e-9;
    }
    Ok((ok, format!("chi2 {} df {}, CD(5,7) {:.6}, CD(15,7) {:.6}", f.statistic, f.df, nemenyi_cd(5, 7, 0.05)?, nemenyi_cd(15, 7, 0.05)?)))
}

fn container_suite(path: &Path) -> Result<(bool, String)> {
    let split = DatasetSplit::load(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let same = split.to_bytes() == bytes;
    Ok((
        same,
        format!(
            "{}: n={} H={} W={} C={} classes={} task={:?}{}",
            path.display(),
            split.len(),
            split.height(),
            split.width(),
            split.channels(),
            split.class_count(),
            split.task_kind(),
            if same { "" } else { " (re-encoding differs from file)" }
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_are_distinct_and_complete() {
        for (n, count) in [(1, 1), (4, 24), (6, 720)] {
            let mut p = all_permutations(n);
            p.sort();
            p.dedup();
            assert_eq!(p.len(), count);
        }
    }

    #[test]
    fn clean_build_passes() {
        let r = run_selftest(&SelfTestOptions::default());
        assert!(r.all_passed(), "{}", r.render());
    }

    #[test]
    fn softmax_fault_is_caught() {
        let r = run_selftest(&SelfTestOptions {
            fault: Some(Fault::SoftmaxBackward),
            ..Default::default()
        });
        let g = r.suites.iter().find(|s| s.name == "gradient-check").unwrap();
        assert!(!g.passed, "{}", g.detail);
    }
}
