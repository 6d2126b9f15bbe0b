use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// How the final token representations are reduced to one feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Global average over patch tokens.
    Gap,
    /// Elementwise max over patch tokens.
    Max,
    /// Softmax-weighted sum with one learned query.
    Attention,
    /// Read out a prepended class token.
    Cls,
}

impl Pooling {
    pub const ALL: [Pooling; 4] = [Pooling::Gap, Pooling::Max, Pooling::Attention, Pooling::Cls];

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Gap => "gap",
            Pooling::Max => "max",
            Pooling::Attention => "attention",
            Pooling::Cls => "cls",
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pooling::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown pooling kind {s:?}")))
    }
}

/// Full architectural description of one model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub unit_dims: Vec<usize>,
    pub mlp_dims: Vec<usize>,
    pub heads: usize,
    pub num_classes: usize,
    pub pooling: Pooling,
    pub use_positional: bool,
    pub use_adaptive_residual: bool,
    pub shuffle_patches: bool,
}

impl ModelConfig {
    /// The parameter-efficient reference setting: 64px RGB, 16px patches,
    /// 8 heads, widths 128 → 64, no positional table, average pooling.
    pub fn baseline(num_classes: usize) -> Self {
        ModelConfig {
            input_size: 64,
            channels: 3,
            patch_size: 16,
            unit_dims: vec![128, 64],
            mlp_dims: vec![128, 64],
            heads: 8,
            num_classes,
            pooling: Pooling::Gap,
            use_positional: false,
            use_adaptive_residual: true,
            shuffle_patches: false,
        }
    }

    /// 8px single-channel toy: 4px patches, widths 8 → 4, 2 heads.
    pub fn toy(num_classes: usize) -> Self {
        ModelConfig {
            input_size: 8,
            channels: 1,
            patch_size: 4,
            unit_dims: vec![8, 4],
            mlp_dims: vec![8, 4],
            heads: 2,
            ..ModelConfig::baseline(num_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.input_size == 0 || self.patch_size == 0 {
            return fail("input_size and patch_size must be positive".into());
        }
        if !self.input_size.is_multiple_of(self.patch_size) {
            return fail(format!(
                "input_size {} is not divisible by patch_size {}",
                self.input_size, self.patch_size
            ));
        }
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        if self.unit_dims.is_empty() {
            return fail("unit_dims must list at least one block width".into());
        }
        if self.mlp_dims.is_empty() || self.mlp_dims.len() > self.unit_dims.len() {
            return fail(format!(
                "mlp_dims needs between 1 and {} entries, got {}",
                self.unit_dims.len(),
                self.mlp_dims.len()
            ));
        }
        if self.heads == 0 {
            return fail("heads must be positive".into());
        }
        if let Some(d) = self.unit_dims.iter().find(|&&d| d == 0 || d % self.heads != 0) {
            return fail(format!("unit width {d} is not a positive multiple of {} heads", self.heads));
        }
        if self.mlp_dims.contains(&0) {
            return fail("mlp widths must be positive".into());
        }
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2".into());
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> usize {
        self.input_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.patches_per_side().pow(2)
    }

    /// Flattened length of one patch (`patch_size² · channels`).
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Token count seen by the blocks: patches plus the class token, if any.
    pub fn num_tokens(&self) -> usize {
        self.num_patches() + usize::from(self.pooling == Pooling::Cls)
    }

    pub fn embed_dim(&self) -> usize {
        self.unit_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.unit_dims.last().expect("validated")
    }

    /// `(input width, output width, feed-forward hidden width)` of block `i`.
    /// Block 0 reads the embedding width; short `mlp_dims` repeat their last entry.
    pub fn block_dims(&self, i: usize) -> (usize, usize, usize) {
        let d_in = if i == 0 { self.unit_dims[0] } else { self.unit_dims[i - 1] };
        let hidden = *self.mlp_dims.get(i).unwrap_or_else(|| self.mlp_dims.last().expect("validated"));
        (d_in, self.unit_dims[i], hidden)
    }

    pub fn num_blocks(&self) -> usize {
        self.unit_dims.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Compact JSON with fixed field order; the input to [`ModelConfig::id`].
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Content hash of the canonical JSON: first 12 hex digits of its SHA-256.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }
}
