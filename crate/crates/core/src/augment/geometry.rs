use super::{sample_clamp, Image};
use crate::error::{Error, Result};

/// Magnify by `s` and crop back to the original size: output pixel `(x, y)`
/// reads the input at `(ox + x/s, oy + y/s)`.
///
/// Valid offsets satisfy `0 ≤ ox ≤ W(1 − 1/s)` and likewise for `oy`.
/// Reads are clamped to the image edge.
pub fn scale_crop(img: &Image, s: f64, ox: f64, oy: f64) -> Result<Image> {
    if !(s >= 1.0 && s.is_finite()) {
        return Err(Error::invalid(format!("scale factor must be >= 1, got {s}")));
    }
    let (w, h) = (img.width(), img.height());
    let max_x = w as f64 * (1.0 - 1.0 / s);
    let max_y = h as f64 * (1.0 - 1.0 / s);
    const TOL: f64 = 1e-9;
    if !(ox >= -TOL && ox <= max_x + TOL) || !(oy >= -TOL && oy <= max_y + TOL) {
        return Err(Error::invalid(format!(
            "crop offset ({ox}, {oy}) outside [0, {max_x}] x [0, {max_y}] for scale {s}"
        )));
    }
    if s == 1.0 && ox == 0.0 && oy == 0.0 {
        return Ok(img.clone());
    }
    Ok(img.map_pixels(|c, y, x| sample_clamp(img.plane(c), w, h, ox + x as f64 / s, oy + y as f64 / s)))
}

/// Reverses column order in every channel.
pub fn hflip(img: &Image) -> Image {
    let w = img.width();
    img.map_pixels(|c, y, x| img.get(c, y, w - 1 - x))
}
