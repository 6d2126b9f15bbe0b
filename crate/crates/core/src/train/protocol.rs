use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use crate::data::{few_shot_indices, DatasetSplit, TaskKind};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, macro_f1, roc_auc, threshold_accuracy, PredictionSet};
use crate::model::{forward, predict_logits, ModelConfig, ModelParams};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor};

pub const RUN_SCHEMA_VERSION: u32 = 1;

/// Few-shot training protocol. Defaults: 50 shots per class, batch 16,
/// Adam at lr 1e-4, 23 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainProtocol {
    pub shots_per_class: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainProtocol {
    fn default() -> Self {
        TrainProtocol::with_seed(3)
    }
}

/// Seeds used for every reported configuration.
pub const PROTOCOL_SEEDS: [u64; 5] = [3, 5, 7, 11, 13];

impl TrainProtocol {
    pub fn with_seed(seed: u64) -> Self {
        let adam = AdamConfig::default();
        TrainProtocol {
            shots_per_class: 50,
            batch_size: 16,
            learning_rate: adam.learning_rate,
            epochs: 23,
            seed,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shots_per_class == 0 || self.batch_size == 0 {
            return Err(Error::Usage("shots and batch size must be at least 1".into()));
        }
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !finite_pos(self.learning_rate) || !finite_pos(self.eps) {
            return Err(Error::Usage("learning rate and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Usage("adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Binary tasks only.
    pub roc_auc: Option<f64>,
    /// Binary tasks only; class 1 iff its probability ≥ 0.5.
    pub threshold_accuracy: Option<f64>,
    /// `roc_auc` for binary tasks, `macro_f1` otherwise.
    pub primary_metric: String,
    pub primary: f64,
}

impl EvalMetrics {
    pub fn from_predictions(pred: &PredictionSet) -> Result<Self> {
        let acc = accuracy(pred)?;
        let f1 = macro_f1(pred)?;
        let (auc, thr) = match pred.task_kind() {
            TaskKind::Binary => (Some(roc_auc(pred)?), Some(threshold_accuracy(pred, 0.5)?)),
            TaskKind::Multiclass => (None, None),
        };
        let (primary_metric, primary) = match auc {
            Some(a) => ("roc_auc", a),
            None => ("macro_f1", f1),
        };
        Ok(EvalMetrics {
            n: pred.len(),
            accuracy: acc,
            macro_f1: f1,
            roc_auc: auc,
            threshold_accuracy: thr,
            primary_metric: primary_metric.into(),
            primary,
        })
    }
}

/// One (config, dataset, seed) training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub schema_version: u32,
    pub config_id: String,
    pub config: ModelConfig,
    pub dataset: String,
    pub seed: u64,
    pub protocol: TrainProtocol,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub train: EvalMetrics,
    pub test: EvalMetrics,
    pub param_count: usize,
    pub wall_seconds: f64,
}

impl RunRecord {
    pub fn file_name(&self) -> String {
        format!("run_{}_{}_{}.json", self.config_id, self.dataset, self.seed)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: RunRecord = serde_json::from_str(text)?;
        if r.schema_version != RUN_SCHEMA_VERSION {
            return Err(Error::Validation(format!("unsupported run schema version {}", r.schema_version)));
        }
        if r.epoch_losses.len() != r.protocol.epochs {
            return Err(Error::Validation(format!(
                "{} epoch losses recorded for {} epochs",
                r.epoch_losses.len(),
                r.protocol.epochs
            )));
        }
        Ok(r)
    }

    /// Everything except wall time, for reproducibility comparisons.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        let mut a = self.clone();
        a.wall_seconds = other.wall_seconds;
        &a == other
    }
}

/// Train-minus-test primary metric; positive when the model overfits.
pub fn generalization_gap(record: &RunRecord) -> f64 {
    record.train.primary - record.test.primary
}

fn check_compatible(split: &DatasetSplit, config: &ModelConfig, role: &str) -> Result<()> {
    if split.channels() != config.channels {
        return Err(Error::Config(format!(
            "{role} split has {} channels, config expects {}",
            split.channels(),
            config.channels
        )));
    }
    if split.class_count() != config.num_classes {
        return Err(Error::Config(format!(
            "{role} split has {} classes, config expects {}",
            split.class_count(),
            config.num_classes
        )));
    }
    if split.is_empty() {
        return Err(Error::Usage(format!("{role} split is empty")));
    }
    Ok(())
}

/// Softmax predictions of `params` over the given images.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    images: impl Iterator<Item = Result<Tensor>>,
    labels: Vec<usize>,
    task_kind: TaskKind,
    rng: &mut Rng,
) -> Result<EvalMetrics> {
    let mut logits = Vec::with_capacity(labels.len() * config.num_classes);
    for image in images {
        let out = predict_logits(params, config, &image?, config.shuffle_patches.then_some(&mut *rng))?;
        logits.extend_from_slice(out.data());
    }
    let pred = PredictionSet::from_logits(&logits, labels, config.num_classes, task_kind)?;
    EvalMetrics::from_predictions(&pred)
}

/// Runs the protocol; `on_epoch(epoch, mean_loss)` is called after each epoch.
///
/// All randomness comes from one stream seeded with `protocol.seed`, consumed
/// in a fixed order: few-shot draw, initialization, then per epoch the batch
/// order followed by any shuffle-probe permutations, and finally the probe
/// permutations used during evaluation.
pub fn run_protocol_with(
    train: &DatasetSplit,
    test: &DatasetSplit,
    config: &ModelConfig,
    protocol: &TrainProtocol,
    dataset: &str,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<RunRecord> {
    let started = Instant::now();
    config.validate()?;
    protocol.validate()?;
    check_compatible(train, config, "train")?;
    check_compatible(test, config, "test")?;

    let mut rng = Rng::new(protocol.seed);
    let indices = few_shot_indices(train, protocol.shots_per_class, &mut rng)?;
    let mut params = ModelParams::init(config, &mut rng)?;
    let images: Vec<Tensor> = indices
        .iter()
        .map(|&i| train.image_tensor(i, config.input_size))
        .collect::<Result<_>>()?;
    let labels: Vec<usize> = indices.iter().map(|&i| train.label(i)).collect();

    let adam = protocol.adam();
    let mut state = AdamState::new(&params);
    let mut step = 0u64;
    let mut epoch_losses = Vec::with_capacity(protocol.epochs);
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 0..protocol.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(protocol.batch_size) {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let mut outs = Vec::with_capacity(batch.len());
            for &i in batch {
                let probe = config.shuffle_patches.then_some(&mut rng);
                outs.push(forward(&mut tape, &images[i], &bound, config, probe)?);
            }
            let logits = tape.concat_rows(&outs)?;
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let loss = tape.cross_entropy(logits, &batch_labels)?;
            loss_sum += tape.value(loss).data()[0] * batch.len() as f64;
            tape.backward(loss)?;
            let grads = bound.gradients(&tape)?;
            step += 1;
            adam_step(&mut params, &grads, &mut state, step, &adam)?;
        }
        let mean = loss_sum / images.len() as f64;
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }

    let train_metrics = evaluate(
        &params,
        config,
        images.into_iter().map(Ok),
        labels,
        train.task_kind(),
        &mut rng,
    )?;
    let test_metrics = evaluate(
        &params,
        config,
        (0..test.len()).map(|i| test.image_tensor(i, config.input_size)),
        (0..test.len()).map(|i| test.label(i)).collect(),
        test.task_kind(),
        &mut rng,
    )?;
    Ok(RunRecord {
        schema_version: RUN_SCHEMA_VERSION,
        config_id: config.id(),
        config: config.clone(),
        dataset: dataset.to_string(),
        seed: protocol.seed,
        protocol: protocol.clone(),
        epoch_losses,
        train: train_metrics,
        test: test_metrics,
        param_count: params.num_scalars(),
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

pub fn run_protocol(
    train: &DatasetSplit,
    test: &DatasetSplit,
    config: &ModelConfig,
    protocol: &TrainProtocol,
    dataset: &str,
) -> Result<RunRecord> {
    run_protocol_with(train, test, config, protocol, dataset, |_, _| {})
}
