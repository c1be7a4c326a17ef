//! Receiver side: decode a payload, upscale back to the original resolution,
//! then denoise.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compress::{decode_payload, CompressedPayload};
use crate::error::{Error, Result};
use crate::imaging::{gaussian_blur, reflect, resize, GrayImage, ResampleFilter};
use crate::inference::{run_generator, NetworkGraph, WeightStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Nearest,
    Bilinear,
    Bicubic,
    Lanczos3,
    Rrdb { manifest: PathBuf, weights: PathBuf },
}

impl Backend {
    pub const CLASSICAL: [Backend; 4] = [Backend::Nearest, Backend::Bilinear, Backend::Bicubic, Backend::Lanczos3];

    pub fn name(&self) -> &'static str {
        match self {
            Backend::Nearest => "nearest",
            Backend::Bilinear => "bilinear",
            Backend::Bicubic => "bicubic",
            Backend::Lanczos3 => "lanczos3",
            Backend::Rrdb { .. } => "rrdb",
        }
    }

    fn filter(&self) -> Option<ResampleFilter> {
        Some(match self {
            Backend::Nearest => ResampleFilter::Nearest,
            Backend::Bilinear => ResampleFilter::Bilinear,
            Backend::Bicubic => ResampleFilter::Bicubic,
            Backend::Lanczos3 => ResampleFilter::Lanczos3,
            Backend::Rrdb { .. } => return None,
        })
    }

    /// Parses a classical backend name, or `rrdb` with model paths.
    pub fn parse(name: &str, manifest: Option<PathBuf>, weights: Option<PathBuf>) -> Result<Self> {
        match name {
            "rrdb" => match (manifest, weights) {
                (Some(manifest), Some(weights)) => Ok(Backend::Rrdb { manifest, weights }),
                _ => Err(Error::arg("rrdb backend needs both a manifest and a weights file")),
            },
            _ => Backend::CLASSICAL
                .into_iter()
                .find(|b| b.name() == name)
                .ok_or_else(|| Error::arg(format!("unknown backend `{name}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Denoiser {
    None,
    Gaussian { sigma: f64 },
    /// 3×3 median.
    Median,
    Bilateral { sigma_s: f64, sigma_r: f64 },
}

impl Default for Denoiser {
    fn default() -> Self {
        Denoiser::Bilateral {
            sigma_s: 1.5,
            sigma_r: 0.05,
        }
    }
}

impl Denoiser {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::arg(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        match *self {
            Denoiser::None | Denoiser::Median => Ok(()),
            Denoiser::Gaussian { sigma } => positive("sigma", sigma),
            Denoiser::Bilateral { sigma_s, sigma_r } => {
                positive("sigma_s", sigma_s)?;
                positive("sigma_r", sigma_r)
            }
        }
    }
}

/// `none`, `median`, `gaussian:SIGMA`, `bilateral` or `bilateral:SIGMA_S,SIGMA_R`.
impl FromStr for Denoiser {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let nums: Vec<f64> = if args.is_empty() {
            Vec::new()
        } else {
            args.split(',')
                .map(|a| a.trim().parse::<f64>().map_err(|_| Error::arg(format!("bad denoiser parameter `{a}`"))))
                .collect::<Result<_>>()?
        };
        let d = match (name, nums.as_slice()) {
            ("none", []) => Denoiser::None,
            ("median" | "median3", []) => Denoiser::Median,
            ("gaussian", [sigma]) => Denoiser::Gaussian { sigma: *sigma },
            ("bilateral", []) => Denoiser::default(),
            ("bilateral", [sigma_s, sigma_r]) => Denoiser::Bilateral {
                sigma_s: *sigma_s,
                sigma_r: *sigma_r,
            },
            _ => return Err(Error::arg(format!("unrecognized denoiser `{s}`"))),
        };
        d.validate()?;
        Ok(d)
    }
}

fn median3(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dims();
    GrayImage::from_fn(w, h, |x, y| {
        let mut win = [0.0; 9];
        for dy in 0..3 {
            for dx in 0..3 {
                win[dy * 3 + dx] = img.get_reflect(x as isize + dx as isize - 1, y as isize + dy as isize - 1);
            }
        }
        win.sort_by(f64::total_cmp);
        win[4]
    })
    .expect("same dims as input")
}

/// Spatial support radius of the bilateral filter: ⌈2σ_s⌉.
pub fn bilateral_radius(sigma_s: f64) -> usize {
    (2.0 * sigma_s).ceil().max(1.0) as usize
}

fn bilateral(img: &GrayImage, sigma_s: f64, sigma_r: f64) -> GrayImage {
    let (w, h) = img.dims();
    let r = bilateral_radius(sigma_s) as isize;
    let side = (2 * r + 1) as usize;
    let spatial: Vec<f64> = (0..side * side)
        .map(|i| {
            let dx = (i % side) as isize - r;
            let dy = (i / side) as isize - r;
            (-((dx * dx + dy * dy) as f64) / (2.0 * sigma_s * sigma_s)).exp()
        })
        .collect();
    let range_k = -1.0 / (2.0 * sigma_r * sigma_r);
    let cols: Vec<Vec<usize>> = (0..w)
        .map(|x| (-r..=r).map(|d| reflect(x as isize + d, w)).collect())
        .collect();
    let data = img.data();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let rows: Vec<usize> = (-r..=r).map(|d| reflect(y as isize + d, h)).collect();
        for x in 0..w {
            let center = data[y * w + x];
            let (mut num, mut den) = (0.0, 0.0);
            for (j, &sy) in rows.iter().enumerate() {
                let row = &data[sy * w..(sy + 1) * w];
                for (i, &sx) in cols[x].iter().enumerate() {
                    let v = row[sx];
                    let d = v - center;
                    let wt = spatial[j * side + i] * (range_k * d * d).exp();
                    num += wt * v;
                    den += wt;
                }
            }
            out[y * w + x] = num / den;
        }
    }
    GrayImage::new(w, h, out).expect("finite weighted means")
}

pub fn denoise(img: &GrayImage, d: &Denoiser) -> Result<GrayImage> {
    d.validate()?;
    match *d {
        Denoiser::None => Ok(img.clone()),
        Denoiser::Gaussian { sigma } => gaussian_blur(img, sigma),
        Denoiser::Median => Ok(median3(img)),
        Denoiser::Bilateral { sigma_s, sigma_r } => Ok(bilateral(img, sigma_s, sigma_r)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestoreConfig {
    pub backend: Backend,
    #[serde(default)]
    pub denoiser: Denoiser,
    /// Tile side for the rrdb backend; `None` runs the whole image at once.
    #[serde(default)]
    pub tile: Option<usize>,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Bicubic,
            denoiser: Denoiser::default(),
            tile: None,
        }
    }
}

impl RestoreConfig {
    pub fn new(backend: Backend, denoiser: Denoiser) -> Self {
        Self {
            backend,
            denoiser,
            tile: None,
        }
    }
}

#[derive(Debug, Clone)]
enum Upscaler {
    Resample(ResampleFilter),
    Generator { graph: NetworkGraph, weights: WeightStore },
}

/// A restore configuration with any model already loaded and validated.
#[derive(Debug, Clone)]
pub struct Restorer {
    upscaler: Upscaler,
    denoiser: Denoiser,
    tile: Option<usize>,
}

impl Restorer {
    pub fn new(cfg: &RestoreConfig) -> Result<Self> {
        cfg.denoiser.validate()?;
        let upscaler = match &cfg.backend {
            Backend::Rrdb { manifest, weights } => {
                let graph = NetworkGraph::load(manifest)?;
                let weights = WeightStore::load(weights)?;
                graph.validate(&weights)?;
                Upscaler::Generator { graph, weights }
            }
            b => Upscaler::Resample(b.filter().expect("classical backend")),
        };
        Ok(Self {
            upscaler,
            denoiser: cfg.denoiser,
            tile: cfg.tile,
        })
    }

    /// Generator backend from an in-memory model.
    pub fn with_model(graph: NetworkGraph, weights: WeightStore, denoiser: Denoiser) -> Result<Self> {
        denoiser.validate()?;
        graph.validate(&weights)?;
        Ok(Self {
            upscaler: Upscaler::Generator { graph, weights },
            denoiser,
            tile: None,
        })
    }

    pub fn with_tile(mut self, tile: Option<usize>) -> Self {
        self.tile = tile;
        self
    }

    /// Upscales `img` to exactly `width`×`height`, then denoises.
    pub fn restore_image(&self, img: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
        let (w, h) = img.dims();
        if width < w || height < h {
            return Err(Error::arg(format!(
                "restore target {width}x{height} is smaller than the decoded {w}x{h}"
            )));
        }
        let up = match &self.upscaler {
            Upscaler::Resample(f) => resize(img, width, height, *f)?,
            Upscaler::Generator { graph, weights } => {
                let sr = run_generator(graph, weights, img, self.tile)?;
                if sr.dims() == (width, height) {
                    sr
                } else {
                    resize(&sr, width, height, ResampleFilter::Bicubic)?
                }
            }
        };
        denoise(&up, &self.denoiser)
    }

    pub fn restore(&self, p: &CompressedPayload) -> Result<GrayImage> {
        let decoded = decode_payload(p)?;
        let (w, h) = p.original_dims();
        self.restore_image(&decoded, w, h)
    }
}

pub fn restore(p: &CompressedPayload, cfg: &RestoreConfig) -> Result<GrayImage> {
    Restorer::new(cfg)?.restore(p)
}
