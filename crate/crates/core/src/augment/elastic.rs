use rand::Rng;

use super::{sample_zero, Image};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Normalized 1-D Gaussian kernel truncated at radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Per-pixel uniform noise on `[-1, 1]` for both displacement components
/// (all `dx` values first, then all `dy`).
pub fn raw_field(width: usize, height: usize, rng: &mut RngStream) -> (Vec<f32>, Vec<f32>) {
    let n = width * height;
    let mut draw = || (0..n).map(|_| rng.random_range(-1.0f64..=1.0) as f32).collect::<Vec<_>>();
    let dx = draw();
    let dy = draw();
    (dx, dy)
}

/// Separable convolution with zero padding outside the image.
fn smooth(raw: &[f32], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let (w, h) = (width as isize, height as isize);
    let mut tmp = vec![0.0f64; raw.len()];
    for y in 0..h {
        for x in 0..w {
            let lo = (x - r).max(0);
            let hi = (x + r).min(w - 1);
            let mut acc = 0.0;
            for xs in lo..=hi {
                acc += kernel[(xs - x + r) as usize] * raw[(y * w + xs) as usize] as f64;
            }
            tmp[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0f64; raw.len()];
    for y in 0..h {
        let lo = (y - r).max(0);
        let hi = (y + r).min(h - 1);
        for x in 0..w {
            let mut acc = 0.0;
            for ys in lo..=hi {
                acc += kernel[(ys - y + r) as usize] * tmp[(ys * w + x) as usize];
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Smoothed displacement field in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct ElasticField {
    width: usize,
    height: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
    sigma: f64,
    alpha: f64,
}

impl ElasticField {
    /// `alpha · gaussian(raw, sigma)` for each component.
    pub fn from_raw(raw_dx: &[f32], raw_dy: &[f32], width: usize, height: usize, sigma: f64, alpha: f64) -> Result<Self> {
        if !(sigma > 0.0) || !(alpha >= 0.0) {
            return Err(Error::invalid(format!(
                "elastic distortion needs sigma > 0 and alpha >= 0 (got {sigma}, {alpha})"
            )));
        }
        let n = width * height;
        if raw_dx.len() != n || raw_dy.len() != n {
            return Err(Error::shape(
                "elastic field",
                format!("{width}x{height} image, raw fields of {} / {}", raw_dx.len(), raw_dy.len()),
            ));
        }
        let kernel = gaussian_kernel(sigma);
        let scale = |v: Vec<f64>| v.into_iter().map(|d| alpha * d).collect::<Vec<_>>();
        Ok(Self {
            width,
            height,
            dx: scale(smooth(raw_dx, width, height, &kernel)),
            dy: scale(smooth(raw_dy, width, height, &kernel)),
            sigma,
            alpha,
        })
    }

    pub fn dx(&self) -> &[f64] {
        &self.dx
    }

    pub fn dy(&self) -> &[f64] {
        &self.dy
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Resamples `img` so output pixel `p` reads the input at `p + d(p)`.
    pub fn apply(&self, img: &Image) -> Result<Image> {
        if img.width() != self.width || img.height() != self.height {
            return Err(Error::shape(
                "elastic field",
                format!("field {}x{}, image {}x{}", self.width, self.height, img.width(), img.height()),
            ));
        }
        let w = self.width;
        Ok(img.map_pixels(|c, y, x| {
            let i = y * w + x;
            sample_zero(img.plane(c), w, self.height, x as f64 + self.dx[i], y as f64 + self.dy[i])
        }))
    }
}

/// Elastic distortion of `img` from a raw uniform noise field.
pub fn elastic_distort(img: &Image, raw_dx: &[f32], raw_dy: &[f32], sigma: f64, alpha: f64) -> Result<Image> {
    ElasticField::from_raw(raw_dx, raw_dy, img.width(), img.height(), sigma, alpha)?.apply(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::ValueDomain;

    #[test]
    fn kernel_is_normalized_and_truncated() {
        let k = gaussian_kernel(6.0);
        assert_eq!(k.len(), 37);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(k[0], k[36]);
        assert_eq!(gaussian_kernel(0.5).len(), 5);
    }

    #[test]
    fn alpha_zero_is_identity() {
        let px: Vec<f32> = (0..64).map(|i| (i as f32 * 0.37).sin().abs()).collect();
        let img = Image::new(8, 8, 1, px, ValueDomain::UnitInterval).unwrap();
        let mut rng = RngStream::new(1, 2);
        let (dx, dy) = raw_field(8, 8, &mut rng);
        assert_eq!(elastic_distort(&img, &dx, &dy, 2.0, 0.0).unwrap(), img);
    }

    #[test]
    fn raw_field_in_range() {
        let mut rng = RngStream::new(5, 5);
        let (dx, dy) = raw_field(28, 28, &mut rng);
        assert_eq!(dx.len(), 784);
        assert!(dx.iter().chain(&dy).all(|v| (-1.0..=1.0).contains(v)));
        assert_ne!(dx, dy);
    }

    #[test]
    fn invalid_parameters() {
        let img = Image::zeros(4, 4, 1);
        let z = vec![0.0; 16];
        assert!(elastic_distort(&img, &z, &z, 0.0, 1.0).is_err());
        assert!(elastic_distort(&img, &z, &z, 1.0, -1.0).is_err());
        assert!(elastic_distort(&img, &z[..3], &z, 1.0, 1.0).is_err());
    }
}
