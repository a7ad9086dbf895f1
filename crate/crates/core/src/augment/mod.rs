//! Deterministic deformation operators `u(x; Θ)`.
//!
//! Every operator is a pure function of its image and parameters and returns
//! an image of the same size. Geometric operators use inverse mapping with
//! bilinear interpolation.

mod elastic;
mod geometry;
mod homography;
mod image;
mod morph;
pub mod zca;

pub use elastic::{elastic_distort, gaussian_kernel, raw_field, ElasticField};
pub use geometry::{hflip, scale_crop};
pub use homography::{warp_homography, Homography};
pub use image::{Image, ValueDomain};
pub use morph::{morph, MorphMode};
pub use zca::ZcaTransform;

/// Snap coordinates within this distance of an integer onto the grid, so that
/// identity-like mappings reproduce pixels exactly.
const GRID_SNAP: f64 = 1e-9;

#[inline]
fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < GRID_SNAP {
        r
    } else {
        v
    }
}

/// Bilinear read of one plane at `(x, y)` pixel coordinates; taps outside the
/// image read as zero.
pub(crate) fn sample_zero(plane: &[f32], width: usize, height: usize, x: f64, y: f64) -> f32 {
    let (x, y) = (snap(x), snap(y));
    if !(x > -1.0 && y > -1.0 && x < width as f64 && y < height as f64) {
        return 0.0;
    }
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let tap = |xi: isize, yi: isize| -> f64 {
        if xi < 0 || yi < 0 || xi >= width as isize || yi >= height as isize {
            0.0
        } else {
            plane[yi as usize * width + xi as usize] as f64
        }
    };
    let mut v = (1.0 - fx) * (1.0 - fy) * tap(x0, y0);
    if fx > 0.0 {
        v += fx * (1.0 - fy) * tap(x0 + 1, y0);
    }
    if fy > 0.0 {
        v += (1.0 - fx) * fy * tap(x0, y0 + 1);
        if fx > 0.0 {
            v += fx * fy * tap(x0 + 1, y0 + 1);
        }
    }
    v as f32
}

/// Bilinear read with coordinates clamped to the image (edge replication).
pub(crate) fn sample_clamp(plane: &[f32], width: usize, height: usize, x: f64, y: f64) -> f32 {
    let x = snap(x).clamp(0.0, (width - 1) as f64);
    let y = snap(y).clamp(0.0, (height - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let p = |xi: usize, yi: usize| plane[yi * width + xi] as f64;
    let mut v = (1.0 - fx) * (1.0 - fy) * p(x0, y0);
    if fx > 0.0 {
        v += fx * (1.0 - fy) * p(x1, y0);
    }
    if fy > 0.0 {
        v += (1.0 - fx) * fy * p(x0, y1);
        if fx > 0.0 {
            v += fx * fy * p(x1, y1);
        }
    }
    v as f32
}
