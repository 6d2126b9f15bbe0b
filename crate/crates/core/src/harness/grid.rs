//! Built-in ablation grids.

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Pooling};

pub const GRID_NAMES: [&str; 3] = ["hparam-table3", "component-table4", "pooling-table5"];

#[derive(Debug, Clone, PartialEq)]
pub struct GridVariant {
    pub name: String,
    pub config: ModelConfig,
}

/// Variants of a named grid built on the baseline config for the given
/// class count and channel count.
pub fn builtin_grid(name: &str, num_classes: usize, channels: usize) -> Result<Vec<GridVariant>> {
    let base = ModelConfig {
        channels,
        ..ModelConfig::baseline(num_classes)
    };
    let v = |name: &str, f: &dyn Fn(&mut ModelConfig)| {
        let mut config = base.clone();
        f(&mut config);
        GridVariant {
            name: name.to_string(),
            config,
        }
    };
    let grid = match name {
        "hparam-table3" => {
            let deeper = || vec![128, 128, 64];
            let wider = || vec![256, 128];
            vec![
                v("Baseline", &|_| {}),
                v("PS=8", &|c| c.patch_size = 8),
                v("PS=32", &|c| c.patch_size = 32),
                v("H=4", &|c| c.heads = 4),
                v("Deeper TU", &|c| c.unit_dims = deeper()),
                v("Wider TU", &|c| c.unit_dims = wider()),
                v("Wider MLP", &|c| c.mlp_dims = wider()),
                v("PS=8 + H=4", &|c| {
                    c.patch_size = 8;
                    c.heads = 4;
                }),
                v("PS=32 + H=4", &|c| {
                    c.patch_size = 32;
                    c.heads = 4;
                }),
                v("Deeper+Wider", &|c| {
                    c.unit_dims = deeper();
                    c.mlp_dims = wider();
                }),
                v("PS=8 + Wider TU", &|c| {
                    c.patch_size = 8;
                    c.unit_dims = wider();
                }),
                v("Wider TU + H=4", &|c| {
                    c.unit_dims = wider();
                    c.heads = 4;
                }),
            ]
        }
        "component-table4" => vec![
            v("Full", &|_| {}),
            v("+ Positional", &|c| c.use_positional = true),
            v("- Adaptive Residuals", &|c| c.use_adaptive_residual = false),
            v("Random Shuffle", &|c| c.shuffle_patches = true),
            v("[CLS] token", &|c| c.pooling = Pooling::Cls),
        ],
        "pooling-table5" => Pooling::ALL
            .iter()
            .map(|&p| v(p.name(), &|c| c.pooling = p))
            .collect(),
        other => {
            return Err(Error::Usage(format!(
                "unknown grid {other:?}; available: {}",
                GRID_NAMES.join(", ")
            )))
        }
    };
    for g in &grid {
        g.config.validate()?;
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::count_params;

    #[test]
    fn grid_sizes() {
        assert_eq!(builtin_grid("hparam-table3", 8, 3).unwrap().len(), 12);
        assert_eq!(builtin_grid("component-table4", 8, 3).unwrap().len(), 5);
        assert_eq!(builtin_grid("pooling-table5", 8, 3).unwrap().len(), 4);
        assert!(builtin_grid("table9", 8, 3).is_err());
    }

    #[test]
    fn config_ids_distinct() {
        for name in GRID_NAMES {
            let g = builtin_grid(name, 8, 3).unwrap();
            let mut ids: Vec<String> = g.iter().map(|v| v.config.id()).collect();
            ids.sort();
            ids.dedup();
            assert_eq!(ids.len(), g.len(), "{name}");
        }
    }

    #[test]
    fn patch_size_orders_budget() {
        let g = builtin_grid("hparam-table3", 8, 3).unwrap();
        let count = |n: &str| count_params(&g.iter().find(|v| v.name == n).unwrap().config).unwrap().0;
        assert!(count("PS=8") < count("Baseline"));
        assert!(count("Baseline") < count("PS=32"));
        assert_eq!(count("Baseline"), count("H=4"));
    }
}
