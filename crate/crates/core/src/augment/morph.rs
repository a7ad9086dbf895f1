use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MorphMode {
    Dilate,
    Erode,
    None,
}

/// Grayscale dilation (3×3 max) or erosion (3×3 min); the window is clamped
/// to the image at the borders.
pub fn morph(img: &Image, mode: MorphMode) -> Result<Image> {
    if img.channels() != 1 {
        return Err(Error::invalid(format!(
            "morphology expects a single-channel image, got {} channels",
            img.channels()
        )));
    }
    let pick: fn(f32, f32) -> f32 = match mode {
        MorphMode::None => return Ok(img.clone()),
        MorphMode::Dilate => f32::max,
        MorphMode::Erode => f32::min,
    };
    let (w, h) = (img.width(), img.height());
    let p = img.plane(0);
    Ok(img.map_pixels(|_, y, x| {
        let mut acc = p[y * w + x];
        for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                acc = pick(acc, p[yy * w + xx]);
            }
        }
        acc
    }))
}
