use super::config::{ModelConfig, Pooling};
use super::params::{BlockParams, ModelParams, Params};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Splits an `[S×S×C]` image into non-overlapping patches.
///
/// Row `i` of the result is patch `i` in raster order, flattened row-major
/// within the patch with channels innermost.
pub fn patchify(image: &Tensor, patch_size: usize) -> Result<Tensor> {
    let (s, w, c) = match image.shape() {
        [h, w, c] => (*h, *w, *c),
        other => return Err(Error::Config(format!("image must be S×S×C, got shape {other:?}"))),
    };
    if s != w {
        return Err(Error::Config(format!("image must be square, got {s}×{w}")));
    }
    if patch_size == 0 || s % patch_size != 0 {
        return Err(Error::Config(format!("image side {s} is not divisible by patch size {patch_size}")));
    }
    let per_side = s / patch_size;
    let patch_dim = patch_size * patch_size * c;
    let src = image.data();
    let mut out = Vec::with_capacity(per_side * per_side * patch_dim);
    for py in 0..per_side {
        for px in 0..per_side {
            for y in 0..patch_size {
                let row = py * patch_size + y;
                let start = (row * s + px * patch_size) * c;
                out.extend_from_slice(&src[start..start + patch_size * c]);
            }
        }
    }
    Tensor::new(&[per_side * per_side, patch_dim], out)
}

/// `x · weight + bias` for an `[M×in]` input.
pub fn linear(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let h = tape.matmul(x, weight)?;
    tape.add_row(h, bias)
}

/// Projects patch rows to the embedding width, adds the positional table
/// when present, then prepends the class token when present.
pub fn embed(tape: &mut Tape, patches: Var, params: &Params<Var>) -> Result<Var> {
    let mut z = linear(tape, patches, params.patch.weight, params.patch.bias)?;
    if let Some(pos) = params.positional {
        z = tape.add(z, pos)?;
    }
    if let Some(cls) = params.cls_token {
        z = tape.concat_rows(&[cls, z])?;
    }
    Ok(z)
}

/// Skip connection across a block that may change width.
///
/// With a projection this is `x · W + y`; with equal widths and no
/// projection it is `x + y`. A width change without a projection is a
/// config error unless `adaptive` is off, in which case the skip is
/// dropped and `y` is returned.
pub fn adaptive_residual(tape: &mut Tape, x: Var, y: Var, proj: Option<Var>, adaptive: bool) -> Result<Var> {
    let d_in = tape.value(x).dims2()?.1;
    let d_out = tape.value(y).dims2()?.1;
    match proj {
        Some(w) => {
            let skipped = tape.matmul(x, w)?;
            tape.add(skipped, y)
        }
        None if d_in == d_out => tape.add(x, y),
        None if adaptive => Err(Error::Config(format!(
            "residual from width {d_in} to {d_out} needs a projection"
        ))),
        None => Ok(y),
    }
}

/// Pre-norm multi-head self-attention followed by a pre-norm feed-forward
/// layer, each wrapped in an adaptive residual. Maps `[M×d_in]` to `[M×d_out]`.
pub fn attention_block(tape: &mut Tape, z: Var, block: &BlockParams<Var>, heads: usize, adaptive: bool) -> Result<Var> {
    let d_out = tape.value(block.query.weight).dims2()?.1;
    if heads == 0 || d_out % heads != 0 {
        return Err(Error::Config(format!("width {d_out} is not divisible by {heads} heads")));
    }
    let head_dim = d_out / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let normed = tape.layer_norm(z, block.norm1.gain, block.norm1.bias, LAYER_NORM_EPS)?;
    let q = linear(tape, normed, block.query.weight, block.query.bias)?;
    let k = linear(tape, normed, block.key.weight, block.key.bias)?;
    let v = linear(tape, normed, block.value.weight, block.value.bias)?;
    let mut per_head = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = tape.slice_cols(q, h * head_dim, head_dim)?;
        let kh = tape.slice_cols(k, h * head_dim, head_dim)?;
        let vh = tape.slice_cols(v, h * head_dim, head_dim)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let weights = tape.softmax(scores, 1)?;
        per_head.push(tape.matmul(weights, vh)?);
    }
    let joined = if heads == 1 { per_head[0] } else { tape.concat_cols(&per_head)? };
    let attended = linear(tape, joined, block.out.weight, block.out.bias)?;
    let z = adaptive_residual(tape, z, attended, block.residual_proj, adaptive)?;

    let normed = tape.layer_norm(z, block.norm2.gain, block.norm2.bias, LAYER_NORM_EPS)?;
    let hidden = linear(tape, normed, block.ff_in.weight, block.ff_in.bias)?;
    let hidden = tape.gelu(hidden)?;
    let ff = linear(tape, hidden, block.ff_out.weight, block.ff_out.bias)?;
    adaptive_residual(tape, z, ff, None, adaptive)
}

/// Reduces final tokens `[M×d]` to one `[1×d]` feature row.
pub fn pool(tape: &mut Tape, z: Var, params: &Params<Var>, pooling: Pooling) -> Result<Var> {
    match pooling {
        Pooling::Gap => tape.mean_rows(z),
        Pooling::Max => tape.max_rows(z),
        Pooling::Attention => {
            let q = params
                .pool_query
                .ok_or_else(|| Error::Config("attention pooling needs a pool_query parameter".into()))?;
            let d = tape.value(z).dims2()?.1;
            let scores = tape.matmul(z, q)?;
            let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
            let weights = tape.softmax(scores, 0)?;
            let wt = tape.transpose(weights)?;
            tape.matmul(wt, z)
        }
        Pooling::Cls => {
            if params.cls_token.is_none() {
                return Err(Error::Config("cls pooling needs a cls_token parameter".into()));
            }
            tape.slice_rows(z, 0, 1)
        }
    }
}

/// Image to `[1×num_classes]` logits.
///
/// `rng` is required when `config.shuffle_patches` is set: the patch rows
/// are then permuted uniformly at random before embedding.
pub fn forward(
    tape: &mut Tape,
    image: &Tensor,
    params: &Params<Var>,
    config: &ModelConfig,
    rng: Option<&mut Rng>,
) -> Result<Var> {
    if image.shape() != [config.input_size, config.input_size, config.channels] {
        return Err(Error::Config(format!(
            "image shape {:?} does not match config {}×{}×{}",
            image.shape(),
            config.input_size,
            config.input_size,
            config.channels
        )));
    }
    let mut patches = patchify(image, config.patch_size)?;
    if config.shuffle_patches {
        let rng = rng.ok_or_else(|| Error::Config("patch shuffling needs a random stream".into()))?;
        let order = rng.permutation(config.num_patches());
        patches = patches.permute_rows(&order)?;
    }
    let patches = tape.constant(patches);
    forward_patches(tape, patches, params, config)
}

/// The model after patch extraction; `patches` is `[N × P·C]`.
pub fn forward_patches(tape: &mut Tape, patches: Var, params: &Params<Var>, config: &ModelConfig) -> Result<Var> {
    let mut z = embed(tape, patches, params)?;
    for block in &params.blocks {
        z = attention_block(tape, z, block, config.heads, config.use_adaptive_residual)?;
    }
    let h = pool(tape, z, params, config.pooling)?;
    linear(tape, h, params.classifier.weight, params.classifier.bias)
}

/// Inference without gradient tracking.
pub fn predict_logits(params: &ModelParams, config: &ModelConfig, image: &Tensor, rng: Option<&mut Rng>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = params.bind_constant(&mut tape);
    let logits = forward(&mut tape, image, &bound, config, rng)?;
    Ok(tape.value(logits).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelParams;

    fn seq_image(s: usize, c: usize) -> Tensor {
        Tensor::new(&[s, s, c], (0..s * s * c).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn patchify_single_pixels() {
        let img = Tensor::new(&[2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = patchify(&img, 1).unwrap();
        assert_eq!(p.shape(), &[4, 1]);
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn patchify_whole_image() {
        let img = seq_image(4, 3);
        let p = patchify(&img, 4).unwrap();
        assert_eq!(p.shape(), &[1, 48]);
        assert_eq!(p.data(), img.data());
    }

    #[test]
    fn patchify_rejects_indivisible() {
        assert!(matches!(patchify(&seq_image(5, 1), 2), Err(Error::Config(_))));
    }

    fn toy_config() -> ModelConfig {
        ModelConfig {
            input_size: 8,
            channels: 1,
            patch_size: 4,
            unit_dims: vec![8, 4],
            mlp_dims: vec![8, 4],
            heads: 2,
            num_classes: 2,
            pooling: Pooling::Gap,
            use_positional: false,
            use_adaptive_residual: true,
            shuffle_patches: false,
        }
    }

    #[test]
    fn adaptive_residual_cases() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let y = t.constant(Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap());
        let r = adaptive_residual(&mut t, x, y, None, true).unwrap();
        assert_eq!(t.value(r).data(), &[4.0, 6.0]);

        let x = t.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let y = t.constant(Tensor::from_rows(&[vec![0.0, 1.0]]).unwrap());
        let eye = t.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let r = adaptive_residual(&mut t, x, y, Some(eye), true).unwrap();
        assert_eq!(t.value(r).data(), &[1.0, 1.0]);

        let wide = t.constant(Tensor::from_rows(&[vec![5.0, 6.0, 7.0]]).unwrap());
        let zero = t.constant(Tensor::zeros(&[3, 2]));
        let r = adaptive_residual(&mut t, wide, y, Some(zero), true).unwrap();
        assert_eq!(t.value(r).data(), t.value(y).data());

        assert!(matches!(adaptive_residual(&mut t, wide, y, None, true), Err(Error::Config(_))));
        let r = adaptive_residual(&mut t, wide, y, None, false).unwrap();
        assert_eq!(r, y);
    }

    #[test]
    fn zero_classifier_gives_zero_logits() {
        let cfg = toy_config();
        let mut params = ModelParams::init(&cfg, &mut Rng::new(3)).unwrap();
        params.classifier.weight = Tensor::zeros(params.classifier.weight.shape());
        let logits = predict_logits(&params, &cfg, &seq_image(8, 1), None).unwrap();
        assert_eq!(logits.data(), &[0.0, 0.0]);
    }

    #[test]
    fn shuffle_requires_rng() {
        let mut cfg = toy_config();
        cfg.shuffle_patches = true;
        let params = ModelParams::init(&cfg, &mut Rng::new(3)).unwrap();
        let img = seq_image(8, 1);
        assert!(predict_logits(&params, &cfg, &img, None).is_err());
        let a = predict_logits(&params, &cfg, &img, Some(&mut Rng::new(1))).unwrap();
        let b = predict_logits(&params, &cfg, &img, Some(&mut Rng::new(1))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_image_shape() {
        let cfg = toy_config();
        let params = ModelParams::init(&cfg, &mut Rng::new(3)).unwrap();
        assert!(predict_logits(&params, &cfg, &seq_image(4, 1), None).is_err());
    }

    #[test]
    fn single_token_attention_is_defined() {
        let mut cfg = toy_config();
        cfg.patch_size = 8;
        let params = ModelParams::init(&cfg, &mut Rng::new(3)).unwrap();
        let logits = predict_logits(&params, &cfg, &seq_image(8, 1), None).unwrap();
        assert!(logits.is_finite());
    }
}
