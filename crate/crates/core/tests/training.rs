use zachvit::data::{few_shot_sample, make_synthetic, SyntheticMode, SyntheticSpec};
use zachvit::train::{run_protocol, TrainProtocol, PROTOCOL_SEEDS};
use zachvit::ModelConfig;

fn toy_widths() -> ModelConfig {
    ModelConfig {
        unit_dims: vec![16, 8],
        mlp_dims: vec![16, 8],
        ..ModelConfig::toy(2)
    }
}

#[test]
fn loss_decreases_on_separable_task() {
    let train = make_synthetic(&SyntheticSpec::new(2, 20, 8, SyntheticMode::PatchHistogram, 31)).unwrap();
    let config = toy_widths();
    let mut decreasing = 0;
    for seed in PROTOCOL_SEEDS {
        let protocol = TrainProtocol {
            epochs: 5,
            learning_rate: 1e-3,
            ..TrainProtocol::with_seed(seed)
        };
        let r = run_protocol(&train, &train, &config, &protocol, "hist").unwrap();
        if r.epoch_losses.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
    }
    assert!(decreasing >= 4, "{decreasing}/5 seeds decreased monotonically");
}

#[test]
fn fits_patch_histogram_training_set() {
    let train = make_synthetic(&SyntheticSpec::new(2, 50, 8, SyntheticMode::PatchHistogram, 32)).unwrap();
    let r = run_protocol(&train, &train, &toy_widths(), &TrainProtocol::default(), "hist").unwrap();
    assert!(r.train.accuracy >= 0.95, "train accuracy {}", r.train.accuracy);
}

#[test]
fn few_shot_seeds_differ() {
    let train = make_synthetic(&SyntheticSpec::new(3, 40, 8, SyntheticMode::PatchHistogram, 1)).unwrap();
    let a = few_shot_sample(&train, 10, 3).unwrap();
    let b = few_shot_sample(&train, 10, 5).unwrap();
    assert_eq!(a.indices.len(), 30);
    assert_ne!(a.indices, b.indices);
    assert_eq!(a, few_shot_sample(&train, 10, 3).unwrap());
}
