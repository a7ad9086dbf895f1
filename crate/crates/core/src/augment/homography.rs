use serde::{Deserialize, Serialize};

use super::{sample_zero, Image};
use crate::error::{Error, Result};

/// A 3×3 projective transform with `H33 = 1`, acting on normalized image
/// coordinates: the image spans `[-1, 1]²` centered at the image center, so a
/// unit of translation is half the image extent.
///
/// The warp is an inverse mapping: output pixel `p` reads the input at `H·p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    m: [[f64; 3]; 3],
}

impl Homography {
    pub const IDENTITY_FREE: [f64; 8] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];

    pub fn identity() -> Self {
        Self::from_free(Self::IDENTITY_FREE)
    }

    /// From the eight free entries `[H11, H12, H13, H21, H22, H23, H31, H32]`.
    pub fn from_free(h: [f64; 8]) -> Self {
        Self {
            m: [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]],
        }
    }

    pub fn free(&self) -> [f64; 8] {
        let m = &self.m;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1]]
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn is_identity(&self) -> bool {
        self.free() == Self::IDENTITY_FREE
    }

    /// Applies the transform to a point in normalized coordinates; `None` when
    /// the point maps to infinity.
    pub fn apply(&self, u: f64, v: f64) -> Option<(f64, f64)> {
        let m = &self.m;
        let w = m[2][0] * u + m[2][1] * v + m[2][2];
        if w.abs() < 1e-12 {
            return None;
        }
        Some((
            (m[0][0] * u + m[0][1] * v + m[0][2]) / w,
            (m[1][0] * u + m[1][1] * v + m[1][2]) / w,
        ))
    }
}

/// Projective warp with bilinear interpolation and zero background.
pub fn warp_homography(img: &Image, h: &Homography) -> Result<Image> {
    if !(h.det().abs() > 1e-8) {
        return Err(Error::invalid(format!("homography is singular (det {:e})", h.det())));
    }
    if h.is_identity() {
        return Ok(img.clone());
    }
    let (w, ht) = (img.width(), img.height());
    let (half_w, half_h) = (w as f64 / 2.0, ht as f64 / 2.0);
    // Source pixel coordinates depend only on (y, x); compute them once.
    let coords: Vec<Option<(f64, f64)>> = (0..ht)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let u = (x as f64 + 0.5) / half_w - 1.0;
            let v = (y as f64 + 0.5) / half_h - 1.0;
            h.apply(u, v)
                .map(|(su, sv)| ((su + 1.0) * half_w - 0.5, (sv + 1.0) * half_h - 0.5))
        })
        .collect();
    Ok(img.map_pixels(|c, y, x| match coords[y * w + x] {
        Some((sx, sy)) => sample_zero(img.plane(c), w, ht, sx, sy),
        None => 0.0,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::ValueDomain;

    fn ramp(h: usize, w: usize) -> Image {
        let px = (0..h * w).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        Image::new(h, w, 1, px, ValueDomain::UnitInterval).unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let img = ramp(28, 28);
        assert_eq!(warp_homography(&img, &Homography::identity()).unwrap(), img);
        // A non-identity matrix that is numerically the identity mapping.
        let near = Homography::from_free([1.0, 0.0, 0.0, 0.0, 1.0, 1e-17, 0.0, 0.0]);
        assert_eq!(warp_homography(&img, &near).unwrap(), img);
    }

    #[test]
    fn singular_rejected() {
        let h = Homography::from_free([0.0; 8]);
        assert!(warp_homography(&ramp(4, 4), &h).is_err());
    }

    #[test]
    fn translation_moves_content_by_half_extent_fraction() {
        // 0.1 in normalized units is 0.1 * 28 / 2 = 1.4 pixels.
        let mut img = Image::zeros(28, 28, 1);
        img.set(0, 14, 14, 1.0);
        let h = Homography::from_free([1.0, 0.0, 0.1, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let out = warp_homography(&img, &h).unwrap();
        let (mut mass, mut cx) = (0.0f64, 0.0f64);
        for x in 0..28 {
            let v = out.get(0, 14, x) as f64;
            mass += v;
            cx += v * x as f64;
        }
        assert!((mass - 1.0).abs() < 1e-6);
        assert!((cx / mass - (14.0 - 1.4)).abs() < 1e-5, "centroid {}", cx / mass);
    }
}
