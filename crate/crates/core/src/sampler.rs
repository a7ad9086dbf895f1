//! Deformation PDFs and sampling of deformation parameter sets `Θ`.
//!
//! A [`DeformSpec`] holds one or more deformation sets. In class-indistinctive
//! mode every class shares set 0; in class-distinctive mode `class_sets[c]`
//! selects the set whose PDFs `p_k(θ_k | c)` apply to class `c`.
//!
//! Discrete deformations (morphology mode, flip) are drawn directly from
//! categorical distributions rather than by thresholding a continuous `θ`;
//! the two are equal in distribution.

use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::augment::{self, Homography, Image, MorphMode};
use crate::dataio::DatasetKind;
use crate::error::{Error, Result};
use crate::rng::{domain, RngStream};

/// A one-dimensional parameter distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "pdf", rename_all = "snake_case")]
pub enum Pdf {
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
    Categorical { probs: Vec<f64> },
}

impl Pdf {
    pub fn delta(value: f64) -> Self {
        Pdf::Gaussian { mean: value, std: 0.0 }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match self {
            Pdf::Gaussian { mean, std } => mean.is_finite() && *std >= 0.0 && std.is_finite(),
            Pdf::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            Pdf::Categorical { probs } => {
                !probs.is_empty()
                    && probs.iter().all(|p| *p >= 0.0)
                    && (probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("{what}: invalid distribution {self:?}")))
        }
    }

    fn continuous(&self, what: &str) -> Result<()> {
        match self {
            Pdf::Categorical { .. } => Err(Error::invalid(format!("{what} needs a continuous PDF"))),
            _ => Ok(()),
        }
    }

    fn categorical(&self, what: &str, n: usize) -> Result<()> {
        match self {
            Pdf::Categorical { probs } if probs.len() == n => Ok(()),
            _ => Err(Error::invalid(format!("{what} needs a categorical PDF over {n} outcomes"))),
        }
    }

    /// Draws a continuous value.
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match self {
            Pdf::Gaussian { mean, std } => Normal::new(*mean, *std)
                .expect("validated gaussian")
                .sample(rng),
            Pdf::Uniform { lo, hi } => lo + (hi - lo) * rng.unit_f64(),
            Pdf::Categorical { .. } => self.sample_index(rng) as f64,
        }
    }

    /// Draws an outcome index from a categorical distribution.
    pub fn sample_index(&self, rng: &mut RngStream) -> usize {
        let Pdf::Categorical { probs } = self else {
            panic!("sample_index on a continuous pdf");
        };
        let u = rng.unit_f64();
        let mut cum = 0.0;
        for (i, p) in probs.iter().enumerate() {
            cum += p;
            if u < cum {
                return i;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    pub fn cdf(&self, x: f64) -> Option<f64> {
        match *self {
            Pdf::Uniform { lo, hi } => Some(if hi == lo {
                if x >= lo {
                    1.0
                } else {
                    0.0
                }
            } else {
                ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
            }),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticSpec {
    pub sigma: f64,
    pub alpha: f64,
}

/// MNIST deformation: homography, then elastic distortion, then morphology.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MnistDeform {
    /// PDFs of `[H11, H12, H13, H21, H22, H23, H31, H32]`.
    pub homography: [Pdf; 8],
    pub elastic: ElasticSpec,
    /// Categorical over `[dilate, erode, none]`.
    pub morphology: Pdf,
}

/// CIFAR-10 deformation (on already whitened images): scaling, crop shift,
/// elastic distortion, then horizontal flip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CifarDeform {
    pub scale: Pdf,
    /// When set, `ox ~ U(0, W(1 − 1/s))` and `oy ~ U(0, H(1 − 1/s))`.
    pub shift: bool,
    pub width: usize,
    pub height: usize,
    pub elastic: ElasticSpec,
    /// Categorical over `[flip, keep]`.
    pub flip: Pdf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dataset", rename_all = "snake_case")]
pub enum DeformSet {
    Mnist(MnistDeform),
    Cifar10(CifarDeform),
}

impl DeformSet {
    pub fn kind(&self) -> DatasetKind {
        match self {
            DeformSet::Mnist(_) => DatasetKind::Mnist,
            DeformSet::Cifar10(_) => DatasetKind::Cifar10,
        }
    }

    fn validate(&self) -> Result<()> {
        let elastic = |e: &ElasticSpec| {
            if e.sigma > 0.0 && e.alpha >= 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("elastic parameters {e:?}")))
            }
        };
        match self {
            DeformSet::Mnist(m) => {
                for (i, p) in m.homography.iter().enumerate() {
                    let what = format!("homography[{i}]");
                    p.validate(&what)?;
                    p.continuous(&what)?;
                }
                elastic(&m.elastic)?;
                m.morphology.validate("morphology")?;
                m.morphology.categorical("morphology", 3)
            }
            DeformSet::Cifar10(c) => {
                c.scale.validate("scale")?;
                c.scale.continuous("scale")?;
                let min_scale = match c.scale {
                    Pdf::Gaussian { mean, std } if std == 0.0 => mean,
                    Pdf::Uniform { lo, .. } => lo,
                    _ => return Err(Error::invalid("scale needs a uniform or delta PDF with support >= 1")),
                };
                if min_scale < 1.0 {
                    return Err(Error::invalid("scale support must lie in [1, inf)"));
                }
                if c.width == 0 || c.height == 0 {
                    return Err(Error::invalid("cifar deformation needs a non-empty image size"));
                }
                elastic(&c.elastic)?;
                c.flip.validate("flip")?;
                c.flip.categorical("flip", 2)
            }
        }
    }

    fn sample(&self, rng: &mut RngStream) -> DeformParams {
        match self {
            DeformSet::Mnist(m) => {
                let mut h = [0.0; 8];
                for (v, p) in h.iter_mut().zip(&m.homography) {
                    *v = p.sample(rng);
                }
                let elastic_seed = rng.next_u64();
                let morph = [MorphMode::Dilate, MorphMode::Erode, MorphMode::None][m.morphology.sample_index(rng)];
                DeformParams::Mnist {
                    homography: h,
                    elastic_seed,
                    morph,
                }
            }
            DeformSet::Cifar10(c) => {
                let scale = c.scale.sample(rng);
                let (offset_x, offset_y) = if c.shift {
                    let fx = rng.unit_f64();
                    let fy = rng.unit_f64();
                    (
                        fx * c.width as f64 * (1.0 - 1.0 / scale),
                        fy * c.height as f64 * (1.0 - 1.0 / scale),
                    )
                } else {
                    (0.0, 0.0)
                };
                let elastic_seed = rng.next_u64();
                let flip = c.flip.sample_index(rng) == 0;
                DeformParams::Cifar10 {
                    scale,
                    offset_x,
                    offset_y,
                    elastic_seed,
                    flip,
                }
            }
        }
    }

    /// Applies this set's operators in order with the given parameters.
    pub fn apply(&self, params: &DeformParams, img: &Image) -> Result<Image> {
        match (self, params) {
            (
                DeformSet::Mnist(m),
                DeformParams::Mnist {
                    homography,
                    elastic_seed,
                    morph,
                },
            ) => {
                if img.channels() != 1 {
                    return Err(Error::invalid("MNIST deformation expects single-channel images"));
                }
                let warped = augment::warp_homography(img, &Homography::from_free(*homography))?;
                let distorted = elastic(&warped, &m.elastic, *elastic_seed)?;
                augment::morph(&distorted, *morph)
            }
            (
                DeformSet::Cifar10(c),
                DeformParams::Cifar10 {
                    scale,
                    offset_x,
                    offset_y,
                    elastic_seed,
                    flip,
                },
            ) => {
                if img.width() != c.width || img.height() != c.height {
                    return Err(Error::shape(
                        "cifar deformation",
                        format!("spec {}x{}, image {}x{}", c.width, c.height, img.width(), img.height()),
                    ));
                }
                let cropped = augment::scale_crop(img, *scale, *offset_x, *offset_y)?;
                let distorted = elastic(&cropped, &c.elastic, *elastic_seed)?;
                Ok(if *flip { augment::hflip(&distorted) } else { distorted })
            }
            _ => Err(Error::invalid("deformation parameters do not match the deformation set")),
        }
    }
}

fn elastic(img: &Image, spec: &ElasticSpec, seed: u64) -> Result<Image> {
    if spec.alpha == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = RngStream::derive(seed, domain::ELASTIC_FIELD, &[]);
    let (dx, dy) = augment::raw_field(img.width(), img.height(), &mut rng);
    augment::elastic_distort(img, &dx, &dy, spec.sigma, spec.alpha)
}

/// One sampled parameter set; fully determines one virtual sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dataset", rename_all = "snake_case")]
pub enum DeformParams {
    Mnist {
        homography: [f64; 8],
        /// Seed of the raw elastic noise field.
        elastic_seed: u64,
        morph: MorphMode,
    },
    Cifar10 {
        scale: f64,
        offset_x: f64,
        offset_y: f64,
        elastic_seed: u64,
        flip: bool,
    },
}

impl DeformParams {
    /// One-line JSON form for diagnostic logs.
    pub fn to_log_line(&self) -> String {
        serde_json::to_string(self).expect("params serialize")
    }

    pub fn from_log_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::invalid(format!("bad deformation log line: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformSpec {
    pub sets: Vec<DeformSet>,
    /// `class_sets[c]` is the index into `sets` for class `c`; `None` means
    /// class-indistinctive (everything uses `sets[0]`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_sets: Option<Vec<usize>>,
}

impl DeformSpec {
    pub fn single(set: DeformSet) -> Self {
        Self {
            sets: vec![set],
            class_sets: None,
        }
    }

    pub fn class_distinctive(sets: Vec<DeformSet>, class_sets: Vec<usize>) -> Result<Self> {
        let spec = Self {
            sets,
            class_sets: Some(class_sets),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Every class gets its own copy of this spec's shared set.
    pub fn replicate_per_class(&self, classes: usize) -> Self {
        Self {
            sets: vec![self.sets[0].clone(); classes],
            class_sets: Some((0..classes).collect()),
        }
    }

    pub fn kind(&self) -> DatasetKind {
        self.sets[0].kind()
    }

    pub fn is_class_distinctive(&self) -> bool {
        self.class_sets.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .sets
            .first()
            .ok_or_else(|| Error::invalid("deformation spec has no sets"))?;
        for s in &self.sets {
            if s.kind() != first.kind() {
                return Err(Error::invalid("deformation sets mix dataset kinds"));
            }
            s.validate()?;
        }
        if let Some(cs) = &self.class_sets {
            if cs.is_empty() {
                return Err(Error::invalid("class-distinctive spec lists no classes"));
            }
            if let Some(bad) = cs.iter().find(|&&i| i >= self.sets.len()) {
                return Err(Error::invalid(format!("class set index {bad} out of range")));
            }
        }
        Ok(())
    }

    /// Index of the deformation set used for `class`.
    pub fn set_index(&self, class: Option<usize>) -> Result<usize> {
        match (&self.class_sets, class) {
            (None, _) => Ok(0),
            (Some(_), None) => Err(Error::invalid("class-distinctive deformation requires a class")),
            (Some(cs), Some(c)) => cs
                .get(c)
                .copied()
                .ok_or_else(|| Error::invalid(format!("no deformation set defined for class {c}"))),
        }
    }

    pub fn set_for(&self, class: Option<usize>) -> Result<&DeformSet> {
        Ok(&self.sets[self.set_index(class)?])
    }

    /// Number of distinct deformation sets in use (`N_d`).
    pub fn distinct_sets(&self) -> usize {
        match &self.class_sets {
            None => 1,
            Some(cs) => {
                let mut seen = vec![false; self.sets.len()];
                cs.iter().for_each(|&i| seen[i] = true);
                seen.iter().filter(|&&b| b).count()
            }
        }
    }

    pub fn apply(&self, params: &DeformParams, class: Option<usize>, img: &Image) -> Result<Image> {
        self.set_for(class)?.apply(params, img)
    }
}

/// The experiment deformation PDFs for a dataset.
pub fn default_spec(kind: DatasetKind) -> DeformSpec {
    let cat = |probs: &[f64]| Pdf::Categorical { probs: probs.to_vec() };
    match kind {
        DatasetKind::Mnist => {
            let g = |mean| Pdf::Gaussian { mean, std: 0.1 };
            DeformSpec::single(DeformSet::Mnist(MnistDeform {
                homography: [g(1.0), g(0.0), g(0.0), g(0.0), g(1.0), g(0.0), g(0.0), g(0.0)],
                elastic: ElasticSpec { sigma: 6.0, alpha: 38.0 },
                morphology: cat(&[0.25, 0.25, 0.5]),
            }))
        }
        DatasetKind::Cifar10 => DeformSpec::single(DeformSet::Cifar10(CifarDeform {
            scale: Pdf::Uniform { lo: 1.0, hi: 2.0 },
            shift: true,
            width: 32,
            height: 32,
            elastic: ElasticSpec { sigma: 8.0, alpha: 40.0 },
            flip: cat(&[0.5, 0.5]),
        })),
    }
}

/// Delta PDFs at the identity deformation.
pub fn identity_spec(kind: DatasetKind) -> DeformSpec {
    let cat = |probs: &[f64]| Pdf::Categorical { probs: probs.to_vec() };
    match kind {
        DatasetKind::Mnist => DeformSpec::single(DeformSet::Mnist(MnistDeform {
            homography: Homography::IDENTITY_FREE.map(Pdf::delta),
            elastic: ElasticSpec { sigma: 6.0, alpha: 0.0 },
            morphology: cat(&[0.0, 0.0, 1.0]),
        })),
        DatasetKind::Cifar10 => DeformSpec::single(DeformSet::Cifar10(CifarDeform {
            scale: Pdf::delta(1.0),
            shift: false,
            width: 32,
            height: 32,
            elastic: ElasticSpec { sigma: 8.0, alpha: 0.0 },
            flip: cat(&[0.0, 1.0]),
        })),
    }
}

/// Draws `Θ` from the PDFs for `class` (class-distinctive) or the shared set.
pub fn sample_theta(spec: &DeformSpec, rng: &mut RngStream, class: Option<usize>) -> Result<DeformParams> {
    Ok(spec.set_for(class)?.sample(rng))
}

/// Samples from a specific deformation set.
pub fn sample_from_set(set: &DeformSet, rng: &mut RngStream) -> DeformParams {
    set.sample(rng)
}

/// `u(x; Θ)`: composes the operators of the relevant set.
pub fn apply(spec: &DeformSpec, params: &DeformParams, class: Option<usize>, img: &Image) -> Result<Image> {
    spec.apply(params, class, img)
}
