//! ZCA whitening: `W = U (Λ + εI)^{-1/2} Uᵀ`, applied as `W (x − μ)`.
//!
//! Sidecar layout (little-endian): `"APACZCA1"`, `u64 d`, `f64 ε`,
//! `f64 mean[d]`, `f64 matrix[d·d]` (row-major).

use nalgebra::{DMatrix, SymmetricEigen};

use super::{Image, ValueDomain};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"APACZCA1";

#[derive(Clone, Debug, PartialEq)]
pub struct ZcaTransform {
    dim: usize,
    mean: Vec<f64>,
    matrix: Vec<f64>,
    epsilon: f64,
}

impl ZcaTransform {
    /// Fits on `samples` (each of dimension `d`) with `ε = 1e-5 · trace(Σ)/d`.
    pub fn fit(samples: &[&[f32]]) -> Result<Self> {
        Self::fit_with(samples, None)
    }

    /// Fits with an explicit epsilon, or the default rule when `None`.
    pub fn fit_with(samples: &[&[f32]], epsilon: Option<f64>) -> Result<Self> {
        let n = samples.len();
        let d = samples.first().map(|s| s.len()).unwrap_or(0);
        if n == 0 || d == 0 {
            return Err(Error::invalid("zca_fit needs at least one non-empty sample"));
        }
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::shape("zca_fit", "samples differ in dimension"));
        }
        if samples.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::invalid("zca_fit input contains non-finite values"));
        }
        let mut mean = vec![0.0f64; d];
        for s in samples {
            for (m, &v) in mean.iter_mut().zip(*s) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        // Σ = (1/n) Σ_i (x_i − μ)(x_i − μ)ᵀ, accumulated in row blocks.
        const BLOCK: usize = 512;
        let mut cov = DMatrix::<f64>::zeros(d, d);
        for chunk in samples.chunks(BLOCK) {
            let centered = DMatrix::from_fn(chunk.len(), d, |r, c| chunk[r][c] as f64 - mean[c]);
            cov += centered.transpose() * &centered;
        }
        cov /= n as f64;

        let epsilon = epsilon.unwrap_or_else(|| 1e-5 * cov.trace() / d as f64);
        if !(epsilon >= 0.0) {
            return Err(Error::invalid(format!("zca epsilon must be non-negative, got {epsilon}")));
        }
        let eig = SymmetricEigen::new(cov);
        let scale = eig.eigenvalues.map(|l| {
            let v = l.max(0.0) + epsilon;
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        });
        let u = &eig.eigenvectors;
        let w = u * DMatrix::from_diagonal(&scale) * u.transpose();
        let matrix = (0..d * d).map(|i| w[(i / d, i % d)]).collect();
        Ok(Self {
            dim: d,
            mean,
            matrix,
            epsilon,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Row-major `d×d` whitening matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn apply_vec(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.dim {
            return Err(Error::shape("zca_apply", format!("dimension {} vs {}", x.len(), self.dim)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("zca_apply input contains non-finite values"));
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(&v, m)| v as f64 - m).collect();
        Ok(self
            .matrix
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(&centered).map(|(a, b)| a * b).sum::<f64>() as f32)
            .collect())
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        let out = self.apply_vec(img.pixels())?;
        Ok(img.with_pixels(out).with_domain(ValueDomain::Whitened))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 8 * (self.dim + self.matrix.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&self.epsilon.to_le_bytes());
        for v in self.mean.iter().chain(&self.matrix) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("zca sidecar: {m}"));
        if bytes.len() < 24 || &bytes[..8] != MAGIC {
            return Err(bad("bad magic (expected APACZCA1)"));
        }
        let dim = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let epsilon = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
        let expect = dim
            .checked_mul(dim)
            .and_then(|dd| dd.checked_add(dim))
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(24))
            .ok_or_else(|| bad("dimension overflow"))?;
        if bytes.len() != expect {
            return Err(bad(&format!("expected {expect} bytes, found {}", bytes.len())));
        }
        let vals: Vec<f64> = bytes[24..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let (mean, matrix) = vals.split_at(dim);
        Ok(Self {
            dim,
            mean: mean.to_vec(),
            matrix: matrix.to_vec(),
            epsilon,
        })
    }
}
