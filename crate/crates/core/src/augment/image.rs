use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueDomain {
    /// Pixels in `[0, 1]`.
    UnitInterval,
    /// ZCA-whitened values, unbounded.
    Whitened,
}

/// An `H×W×C` raster stored channel-planar (`[C][H][W]`, row-major).
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
    domain: ValueDomain,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>, domain: ValueDomain) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::shape("image", format!("empty extent {height}x{width}x{channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::shape(
                "image",
                format!("{height}x{width}x{channels} needs {} pixels, got {}", height * width * channels, pixels.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
            domain,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![0.0; height * width * channels],
            domain: ValueDomain::UnitInterval,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn domain(&self) -> ValueDomain {
        self.domain
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }

    /// Same geometry and domain, new pixel buffer.
    pub(crate) fn with_pixels(&self, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels,
            domain: self.domain,
        }
    }

    pub fn with_domain(mut self, domain: ValueDomain) -> Self {
        self.domain = domain;
        self
    }

    /// Network input tensor of shape `[C, H, W]`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.channels, self.height, self.width], self.pixels.clone())
            .expect("image extents are non-zero")
    }

    /// Builds every output pixel by calling `f(channel, y, x)`.
    pub(crate) fn map_pixels(&self, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut out = Vec::with_capacity(self.pixels.len());
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.push(f(c, y, x));
                }
            }
        }
        self.with_pixels(out)
    }
}
