//! Image quality metrics and the generator loss terms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{gaussian_blur, resize, sobel_magnitude, GrayImage, ResampleFilter};
use crate::inference::{run_features, NetworkGraph, WeightStore};

fn same_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::arg(format!(
            "image dims differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn mse(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

/// PSNR in dB with peak 1.0. Identical images give `f64::INFINITY`.
pub fn psnr(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 1e-4;
const SSIM_C2: f64 = 9e-4;

/// Valid-region separable filtering with a normalized 1-D Gaussian.
fn filter_valid(data: &[f64], w: usize, h: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = taps.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let src = &data[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(k, t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows (σ = 1.5).
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::arg(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}")));
    }
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);

    let (da, db) = (a.data(), b.data());
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect() };
    let (mu_a, ..) = filter_valid(da, w, h, &taps);
    let (mu_b, ..) = filter_valid(db, w, h, &taps);
    let (aa, ..) = filter_valid(&prod(&|x, _| x * x), w, h, &taps);
    let (bb, ..) = filter_valid(&prod(&|_, y| y * y), w, h, &taps);
    let (ab, ..) = filter_valid(&prod(&|x, y| x * y), w, h, &taps);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok((sum / mu_a.len() as f64).clamp(-1.0, 1.0))
}

pub fn l1_loss(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
    Ok(sum / a.data().len() as f64)
}

/// Feature space used by [`perceptual_loss`].
#[derive(Debug, Clone, Default)]
pub enum PerceptualExtractor {
    /// Sobel magnitude on each level of a 3-level Gaussian pyramid.
    #[default]
    PyramidProxy,
    /// Feature layers declared by a loaded network.
    Network { graph: NetworkGraph, weights: WeightStore },
}

impl PerceptualExtractor {
    pub fn load(manifest: &std::path::Path, weights: &std::path::Path) -> Result<Self> {
        let graph = NetworkGraph::load(manifest)?;
        let weights = WeightStore::load(weights)?;
        graph.validate(&weights)?;
        Ok(Self::Network { graph, weights })
    }
}

pub const PYRAMID_LEVELS: usize = 3;

fn pyramid(img: &GrayImage) -> Result<Vec<GrayImage>> {
    let mut levels = vec![img.clone()];
    for _ in 1..PYRAMID_LEVELS {
        let prev = levels.last().unwrap();
        let (w, h) = prev.dims();
        if w < 2 || h < 2 {
            break;
        }
        let smooth = gaussian_blur(prev, 1.0).unwrap_or_else(|_| prev.clone());
        levels.push(resize(&smooth, w.div_ceil(2), h.div_ceil(2), ResampleFilter::Area)?);
    }
    Ok(levels)
}

pub fn perceptual_loss(a: &GrayImage, b: &GrayImage, extractor: &PerceptualExtractor) -> Result<f64> {
    same_dims(a, b)?;
    match extractor {
        PerceptualExtractor::PyramidProxy => {
            let (pa, pb) = (pyramid(a)?, pyramid(b)?);
            let mut total = 0.0;
            for (la, lb) in pa.iter().zip(&pb) {
                total += l1_loss(&sobel_magnitude(la), &sobel_magnitude(lb))?;
            }
            Ok(total / pa.len() as f64)
        }
        PerceptualExtractor::Network { graph, weights } => {
            let fa = run_features(graph, weights, a)?;
            let fb = run_features(graph, weights, b)?;
            let mut total = 0.0;
            for (ta, tb) in fa.iter().zip(&fb) {
                let sum: f64 = ta.data().iter().zip(tb.data()).map(|(x, y)| (x - y).abs() as f64).sum();
                total += sum / ta.data().len() as f64;
            }
            Ok(total / fa.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Real,
    Fake,
}

/// Mean binary cross-entropy of `logits` against the target label.
pub fn adversarial_loss(logits: &[f32], target: Target) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::arg("empty realness map"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("realness map contains non-finite logits"));
    }
    let y = if target == Target::Real { 1.0 } else { 0.0 };
    // max(x, 0) - x·y + ln(1 + e^-|x|)
    let sum: f64 = logits
        .iter()
        .map(|&x| {
            let x = x as f64;
            x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
        })
        .sum();
    Ok(sum / logits.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_l1: f64,
    pub lambda_perc: f64,
    pub lambda_gan: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_l1: 1.0,
            lambda_perc: 1.0,
            lambda_gan: 0.1,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_l1: f64, lambda_perc: f64, lambda_gan: f64) -> Result<Self> {
        let w = Self {
            lambda_l1,
            lambda_perc,
            lambda_gan,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_l1", self.lambda_l1),
            ("lambda_perc", self.lambda_perc),
            ("lambda_gan", self.lambda_gan),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::arg(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub composite: f64,
}

/// Weighted generator loss. `logits` is the discriminator's realness map for
/// `a`, scored against the real label.
pub fn composite_loss(
    a: &GrayImage,
    b: &GrayImage,
    logits: &[f32],
    w: &LossWeights,
    extractor: &PerceptualExtractor,
) -> Result<LossTerms> {
    w.validate()?;
    let l1 = l1_loss(a, b)?;
    let perceptual = perceptual_loss(a, b, extractor)?;
    let adversarial = adversarial_loss(logits, Target::Real)?;
    Ok(LossTerms {
        l1,
        perceptual,
        adversarial,
        composite: w.lambda_l1 * l1 + w.lambda_perc * perceptual + w.lambda_gan * adversarial,
    })
}

/// Everything scored for one restored image.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub l1: f64,
    pub perceptual: f64,
    pub adversarial: f64,
    pub composite: f64,
    pub payload_bytes: usize,
    pub raw_bytes: usize,
    pub compression_ratio: f64,
}

impl QualityReport {
    pub fn new(restored: &GrayImage, reference: &GrayImage, terms: LossTerms, payload_bytes: usize, raw_bytes: usize) -> Result<Self> {
        Ok(Self {
            psnr_db: psnr(restored, reference)?,
            ssim: ssim(restored, reference)?,
            l1: terms.l1,
            perceptual: terms.perceptual,
            adversarial: terms.adversarial,
            composite: terms.composite,
            payload_bytes,
            raw_bytes,
            compression_ratio: compression_ratio(raw_bytes, payload_bytes),
        })
    }
}

pub fn compression_ratio(raw_bytes: usize, payload_bytes: usize) -> f64 {
    raw_bytes as f64 / payload_bytes.max(1) as f64
}
