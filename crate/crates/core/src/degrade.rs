//! Synthetic degradation: the classical blur → downsample → noise → JPEG
//! chain and multi-round plans built from the same stages.
//!
//! All randomness is counter based (see [`crate::rng`]): a noise draw for a
//! pixel depends only on the stage seed and the pixel index.

use std::path::Path;

use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::imaging::{convolve, resize, GrayImage, Kernel2D, ResampleFilter};
use crate::numerics::{check_quality, gaussian_kernel, sinc_kernel, SincSpec};
use crate::rng::{counter_rng, mix};

const STREAM_GAUSSIAN: u64 = 1;
const STREAM_POISSON: u64 = 2;
const STREAM_INCLUDE: u64 = 3;

/// Adds i.i.d. `N(0, tau²)` noise and clamps. `tau = 0` returns the input.
pub fn add_gaussian_noise(img: &GrayImage, tau: f64, seed: u64) -> Result<GrayImage> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::arg(format!("noise std-dev must be >= 0, got {tau}")));
    }
    if tau == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, tau).map_err(|e| Error::arg(e.to_string()))?;
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + normal.sample(&mut counter_rng(seed, STREAM_GAUSSIAN, i as u64)))
        .collect();
    GrayImage::new(img.width(), img.height(), data).map(|o| o.with_source_depth(img.source_depth()))
}

/// Photon-counting noise: `Poisson(v·scale)/scale`, clamped.
pub fn add_poisson_noise(img: &GrayImage, scale: f64, seed: u64) -> Result<GrayImage> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::arg(format!("poisson scale must be > 0, got {scale}")));
    }
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let lambda = v * scale;
            if lambda <= 0.0 {
                return Ok(0.0);
            }
            let dist = Poisson::new(lambda).map_err(|e| Error::arg(e.to_string()))?;
            let count: f64 = dist.sample(&mut counter_rng(seed, STREAM_POISSON, i as u64));
            Ok(count / scale)
        })
        .collect::<Result<Vec<f64>>>()?;
    GrayImage::new(img.width(), img.height(), data).map(|o| o.with_source_depth(img.source_depth()))
}

/// Round trip through the block codec at quality `q`. Returns the decoded
/// image and the packed coefficient size in bytes.
pub fn jpeg_emulate(img: &GrayImage, q: u8) -> Result<(GrayImage, usize)> {
    check_quality(q)?;
    let packed = codec::encode(img, q)?;
    let out = codec::decode(&packed, img.width(), img.height(), q)?;
    Ok((out.with_source_depth(img.source_depth()), packed.len()))
}

/// Area downsampling by an integer factor; output sides are `ceil(n / s)`.
pub fn downsample(img: &GrayImage, factor: u32, filter: ResampleFilter) -> Result<GrayImage> {
    if factor == 0 {
        return Err(Error::arg("downsample factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let s = factor as usize;
    resize(img, img.width().div_ceil(s), img.height().div_ceil(s), filter)
}

/// Classical model `[(y ⊗ g)↓s + v]_JPEG`, stages applied in exactly that order.
pub fn apply_classical(y: &GrayImage, g: &Kernel2D, s: u32, tau: f64, q: u8, seed: u64) -> Result<GrayImage> {
    check_quality(q)?;
    let blurred = convolve(y, g)?;
    let small = downsample(&blurred, s, ResampleFilter::Area)?;
    let noisy = add_gaussian_noise(&small, tau, seed)?;
    Ok(jpeg_emulate(&noisy, q)?.0)
}

fn one() -> f64 {
    1.0
}

fn default_filter() -> ResampleFilter {
    ResampleFilter::Area
}

/// One step of a degradation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case")]
pub enum DegradeStage {
    Blur {
        sigma: f64,
    },
    Downsample {
        factor: u32,
        #[serde(default = "default_filter")]
        filter: ResampleFilter,
    },
    GaussianNoise {
        tau: f64,
    },
    PoissonNoise {
        scale: f64,
    },
    Jpeg {
        quality: u8,
    },
    /// Ringing via the circular sinc kernel, applied with probability
    /// `probability` (drawn from the stage's own counter stream).
    Sinc {
        eta: f64,
        radius: usize,
        #[serde(default = "one")]
        probability: f64,
    },
}

impl DegradeStage {
    fn tag(&self) -> u64 {
        match self {
            DegradeStage::Blur { .. } => 1,
            DegradeStage::Downsample { .. } => 2,
            DegradeStage::GaussianNoise { .. } => 3,
            DegradeStage::PoissonNoise { .. } => 4,
            DegradeStage::Jpeg { .. } => 5,
            DegradeStage::Sinc { .. } => 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DegradeStage::Blur { sigma } => gaussian_kernel(sigma).map(|_| ()),
            DegradeStage::Downsample { factor, .. } if factor < 1 => Err(Error::arg("downsample factor must be >= 1")),
            DegradeStage::Downsample { .. } => Ok(()),
            DegradeStage::GaussianNoise { tau } if !(tau >= 0.0 && tau.is_finite()) => {
                Err(Error::arg(format!("noise std-dev must be >= 0, got {tau}")))
            }
            DegradeStage::GaussianNoise { .. } => Ok(()),
            DegradeStage::PoissonNoise { scale } if !(scale > 0.0 && scale.is_finite()) => {
                Err(Error::arg(format!("poisson scale must be > 0, got {scale}")))
            }
            DegradeStage::PoissonNoise { .. } => Ok(()),
            DegradeStage::Jpeg { quality } => check_quality(quality),
            DegradeStage::Sinc { eta, radius, probability } => {
                if !(0.0..=1.0).contains(&probability) {
                    return Err(Error::arg(format!("sinc probability must lie in [0, 1], got {probability}")));
                }
                SincSpec::new(eta, radius).map(|_| ())
            }
        }
    }

    /// Applies the stage with the given stage seed.
    pub fn apply(&self, img: &GrayImage, seed: u64) -> Result<GrayImage> {
        match *self {
            DegradeStage::Blur { sigma } => convolve(img, &gaussian_kernel(sigma)?),
            DegradeStage::Downsample { factor, filter } => downsample(img, factor, filter),
            DegradeStage::GaussianNoise { tau } => add_gaussian_noise(img, tau, seed),
            DegradeStage::PoissonNoise { scale } => add_poisson_noise(img, scale, seed),
            DegradeStage::Jpeg { quality } => Ok(jpeg_emulate(img, quality)?.0),
            DegradeStage::Sinc { eta, radius, probability } => {
                let include = probability >= 1.0
                    || rand::Rng::random_bool(&mut counter_rng(seed, STREAM_INCLUDE, 0), probability);
                if include {
                    convolve(img, &sinc_kernel(SincSpec::new(eta, radius)?)?)
                } else {
                    Ok(img.clone())
                }
            }
        }
    }
}

/// Ordered rounds of stages plus the seed all randomness derives from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradationPlan {
    pub seed: u64,
    pub rounds: Vec<Vec<DegradeStage>>,
}

impl DegradationPlan {
    /// `order` repetitions of the classical chain with the same parameters.
    pub fn classical(order: usize, sigma: f64, factor: u32, tau: f64, quality: u8, seed: u64) -> Self {
        let round = vec![
            DegradeStage::Blur { sigma },
            DegradeStage::Downsample {
                factor,
                filter: ResampleFilter::Area,
            },
            DegradeStage::GaussianNoise { tau },
            DegradeStage::Jpeg { quality },
        ];
        Self {
            seed,
            rounds: vec![round; order],
        }
    }

    pub fn order(&self) -> usize {
        self.rounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds.is_empty() {
            return Err(Error::arg("degradation plan needs at least one round"));
        }
        self.rounds.iter().flatten().try_for_each(DegradeStage::validate)
    }

    /// Seed of the `stage`-th entry in `round`.
    ///
    /// Keyed by stage type and its ordinal among same-typed stages of the
    /// round, so inserting a stage of another type leaves existing draws intact.
    pub fn stage_seed(&self, round: usize, stage: usize) -> u64 {
        let stages = &self.rounds[round];
        let tag = stages[stage].tag();
        let ordinal = stages[..stage].iter().filter(|s| s.tag() == tag).count();
        mix(&[self.seed, round as u64, tag, ordinal as u64])
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }
}

impl Default for DegradationPlan {
    /// Two-round classical chain.
    fn default() -> Self {
        Self::classical(2, 1.0, 2, 0.02, 75, 0)
    }
}

/// Applies every round in order, stages in listed order.
pub fn apply_plan(y: &GrayImage, plan: &DegradationPlan) -> Result<GrayImage> {
    plan.validate()?;
    let mut img = y.clone();
    for (r, round) in plan.rounds.iter().enumerate() {
        for (s, stage) in round.iter().enumerate() {
            img = stage.apply(&img, plan.stage_seed(r, s))?;
        }
    }
    Ok(img)
}
