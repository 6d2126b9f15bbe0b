//! Synthetic splits with known structure, used as training fixtures.

use serde::{Deserialize, Serialize};

use super::container::{DatasetSplit, TaskKind};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticMode {
    /// Each class has its own pixel-intensity band, identical at every
    /// position: separable from any single patch.
    PatchHistogram,
    /// Every class uses the same tiles; only their arrangement differs, so
    /// only a position-aware model can separate the classes.
    Layout,
}

impl std::str::FromStr for SyntheticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "patch-histogram" => Ok(SyntheticMode::PatchHistogram),
            "layout" => Ok(SyntheticMode::Layout),
            other => Err(Error::Usage(format!("unknown synthetic mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub class_count: usize,
    pub n_per_class: usize,
    /// Square image side in pixels.
    pub size: usize,
    pub channels: usize,
    /// Side of the square tiles that make up a layout image; must divide `size`.
    pub tile: usize,
    pub mode: SyntheticMode,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(class_count: usize, n_per_class: usize, size: usize, mode: SyntheticMode, seed: u64) -> Self {
        SyntheticSpec {
            class_count,
            n_per_class,
            size,
            channels: 1,
            tile: (size / 2).max(1),
            mode,
            seed,
        }
    }
}

/// Half-width of each class's intensity band in patch-histogram mode.
const BAND_HALF_WIDTH: f64 = 20.0;

/// Centre of class `c`'s intensity band; centres are spread evenly over `[40, 215]`.
pub fn histogram_class_center(c: usize, class_count: usize) -> f64 {
    if class_count <= 1 {
        127.5
    } else {
        40.0 + 175.0 * c as f64 / (class_count - 1) as f64
    }
}

/// Tile position of the marker tile for class `c` in layout mode.
pub fn layout_marker_position(c: usize, class_count: usize, tiles: usize) -> usize {
    c * (tiles / class_count)
}

/// Builds a synthetic split; images are stored class-interleaved
/// (image `i` has class `i % class_count`).
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<DatasetSplit> {
    let SyntheticSpec {
        class_count: k,
        n_per_class,
        size,
        channels,
        tile,
        mode,
        seed,
    } = *spec;
    if !(2..=256).contains(&k) || n_per_class == 0 || size == 0 || channels == 0 {
        return Err(Error::Usage(format!("invalid synthetic spec {spec:?}")));
    }
    let mut rng = Rng::new(seed);
    let pixels = size * size * channels;
    let mut images = Vec::with_capacity(k * n_per_class * pixels);
    let mut labels = Vec::with_capacity(k * n_per_class);
    match mode {
        SyntheticMode::PatchHistogram => {
            for _ in 0..n_per_class {
                for c in 0..k {
                    let center = histogram_class_center(c, k);
                    for _ in 0..pixels {
                        let v = rng.uniform(center - BAND_HALF_WIDTH, center + BAND_HALF_WIDTH);
                        images.push(v.round().clamp(0.0, 255.0) as u8);
                    }
                    labels.push(c as u8);
                }
            }
        }
        SyntheticMode::Layout => {
            if tile == 0 || size % tile != 0 {
                return Err(Error::Usage(format!("tile {tile} does not divide size {size}")));
            }
            let per_side = size / tile;
            let tiles = per_side * per_side;
            if k > tiles {
                return Err(Error::Usage(format!("{k} classes need at least {k} tiles, have {tiles}")));
            }
            let tile_len = tile * tile * channels;
            for _ in 0..n_per_class {
                // One bright marker tile and dark fillers, shared by every
                // class's version of this image.
                let marker: Vec<u8> = (0..tile_len).map(|_| rng.uniform(230.0, 255.0).round() as u8).collect();
                let fillers: Vec<Vec<u8>> = (1..tiles)
                    .map(|_| (0..tile_len).map(|_| rng.uniform(0.0, 25.0).round() as u8).collect())
                    .collect();
                for c in 0..k {
                    let at = layout_marker_position(c, k, tiles);
                    let mut order: Vec<&[u8]> = fillers.iter().map(Vec::as_slice).collect();
                    order.insert(at, &marker);
                    images.extend(assemble_tiles(&order, per_side, tile, channels));
                    labels.push(c as u8);
                }
            }
        }
    }
    DatasetSplit::new(size, size, channels, k, TaskKind::for_class_count(k), images, labels)
}

/// Lays raster-ordered tiles (each `tile×tile×C`, HWC) into one image.
fn assemble_tiles(tiles: &[&[u8]], per_side: usize, tile: usize, channels: usize) -> Vec<u8> {
    let size = per_side * tile;
    let mut img = vec![0u8; size * size * channels];
    for (t, content) in tiles.iter().enumerate() {
        let (ty, tx) = (t / per_side, t % per_side);
        for y in 0..tile {
            for x in 0..tile {
                for c in 0..channels {
                    let dst = ((ty * tile + y) * size + tx * tile + x) * channels + c;
                    img[dst] = content[(y * tile + x) * channels + c];
                }
            }
        }
    }
    img
}
