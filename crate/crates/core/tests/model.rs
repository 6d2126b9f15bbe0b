use zachvit::harness::{builtin_grid, GRID_NAMES};
use zachvit::model::{attention_block, count_params, predict_logits};
use zachvit::{ModelConfig, ModelParams, Pooling, Rng, Tape, Tensor};

fn image(config: &ModelConfig, seed: u64) -> Tensor {
    let mut rng = Rng::new(seed);
    let n = config.input_size * config.input_size * config.channels;
    Tensor::new(
        &[config.input_size, config.input_size, config.channels],
        (0..n).map(|_| rng.next_f64()).collect(),
    )
    .unwrap()
}

#[test]
fn attention_block_is_permutation_equivariant() {
    let config = ModelConfig {
        unit_dims: vec![16, 8],
        mlp_dims: vec![16, 8],
        ..ModelConfig::toy(2)
    };
    let mut rng = Rng::new(4);
    let mut params = ModelParams::init(&config, &mut rng).unwrap();
    // Nonzero skip projection so that path is exercised too.
    for block in &mut params.blocks {
        if let Some(w) = &mut block.residual_proj {
            w.data_mut().iter_mut().for_each(|x| *x = rng.normal() * 0.1);
        }
    }
    for trial in 0..5 {
        let tokens = Tensor::new(&[7, 16], (0..7 * 16).map(|_| rng.normal()).collect()).unwrap();
        let order = rng.permutation(7);
        let run = |x: Tensor| {
            let mut t = Tape::new();
            let bound = params.bind_constant(&mut t);
            let mut z = t.constant(x);
            for block in &bound.blocks {
                z = attention_block(&mut t, z, block, config.heads, true).unwrap();
            }
            t.value(z).clone()
        };
        let permuted_out = run(tokens.permute_rows(&order).unwrap());
        let out_permuted = run(tokens).permute_rows(&order).unwrap();
        let dev = permuted_out.max_abs_diff(&out_permuted);
        assert!(dev < 1e-10, "trial {trial}: {dev:e}");
    }
}

#[test]
fn counted_params_match_initialized_scalars() {
    for grid in GRID_NAMES {
        for channels in [1, 3] {
            for variant in builtin_grid(grid, 4, channels).unwrap() {
                let (total, parts) = count_params(&variant.config).unwrap();
                let params = ModelParams::init(&variant.config, &mut Rng::new(1)).unwrap();
                assert_eq!(total, params.num_scalars(), "{grid}/{}", variant.name);
                assert_eq!(total, parts.iter().map(|p| p.count).sum::<usize>());
            }
        }
    }
}

#[test]
fn adaptive_flag_is_inert_with_constant_widths() {
    for pooling in Pooling::ALL {
        let on = ModelConfig {
            unit_dims: vec![8, 8],
            mlp_dims: vec![8, 8],
            pooling,
            ..ModelConfig::toy(3)
        };
        let off = ModelConfig {
            use_adaptive_residual: false,
            ..on.clone()
        };
        let p_on = ModelParams::init(&on, &mut Rng::new(2)).unwrap();
        let p_off = ModelParams::init(&off, &mut Rng::new(2)).unwrap();
        assert_eq!(p_on, p_off);
        let x = image(&on, 8);
        let a = predict_logits(&p_on, &on, &x, None).unwrap();
        let b = predict_logits(&p_off, &off, &x, None).unwrap();
        assert_eq!(a.data(), b.data(), "{}", pooling.name());
    }
}

#[test]
fn params_round_trip_through_bytes() {
    let config = ModelConfig::toy(3);
    let params = ModelParams::init(&config, &mut Rng::new(6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.zvit");
    params.save(&path).unwrap();
    assert_eq!(ModelParams::load(&config, &path).unwrap(), params);
    let other = ModelConfig::toy(4);
    assert!(ModelParams::load(&other, &path).is_err());
}

#[test]
fn baseline_budget() {
    let (total, _) = count_params(&ModelConfig::baseline(8)).unwrap();
    assert!((190_000..=310_000).contains(&total), "{total}");
}

#[test]
fn single_block_toy_by_hand() {
    let config = ModelConfig {
        unit_dims: vec![8],
        mlp_dims: vec![8],
        ..ModelConfig::toy(2)
    };
    // 4×4×1 patches into width 8, one 8→8 block, 2-way head.
    let embed = 16 * 8 + 8;
    let norms = 4 * 8;
    let qkv = 3 * (8 * 8 + 8);
    let out = 8 * 8 + 8;
    let ff = 2 * (8 * 8 + 8);
    let head = 8 * 2 + 2;
    assert_eq!(count_params(&config).unwrap().0, embed + norms + qkv + out + ff + head);
    assert_eq!(count_params(&config).unwrap().0, 618);
}
