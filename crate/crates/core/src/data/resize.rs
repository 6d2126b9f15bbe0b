use crate::error::{Error, Result};

fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    if dst == 1 {
        (src - 1) as f64 / 2.0
    } else {
        i as f64 * (src - 1) as f64 / (dst - 1) as f64
    }
}

/// Corner-aligned bilinear resize of an `H×W×C` byte image to `size×size×C`.
///
/// Output corners sample input corners exactly. Values are returned
/// unrounded, clamped to `[0, 255]`.
pub fn resize_bilinear(image: &[u8], height: usize, width: usize, channels: usize, size: usize) -> Result<Vec<f64>> {
    if height == 0 || width == 0 || channels == 0 || size == 0 {
        return Err(Error::Usage("resize needs positive extents".into()));
    }
    if image.len() != height * width * channels {
        return Err(Error::dim(
            "resize_bilinear",
            format!("{} bytes for {height}×{width}×{channels}", image.len()),
        ));
    }
    let px = |y: usize, x: usize, c: usize| image[(y * width + x) * channels + c] as f64;
    let mut out = Vec::with_capacity(size * size * channels);
    for i in 0..size {
        let sy = source_coord(i, height, size);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(height - 1);
        let fy = sy - y0 as f64;
        for j in 0..size {
            let sx = source_coord(j, width, size);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(width - 1);
            let fx = sx - x0 as f64;
            for c in 0..channels {
                let top = px(y0, x0, c) * (1.0 - fx) + px(y0, x1, c) * fx;
                let bottom = px(y1, x0, c) * (1.0 - fx) + px(y1, x1, c) * fx;
                out.push((top * (1.0 - fy) + bottom * fy).clamp(0.0, 255.0));
            }
        }
    }
    Ok(out)
}
