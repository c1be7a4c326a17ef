//! Sender side: optional enhancement of noisy inputs, downscaling to the
//! transmission resolution and quality selection under a byte budget.

use serde::{Deserialize, Serialize};

use crate::codec;
use crate::error::{Error, Result};
use crate::imaging::{edge_preserve_enhance, resize, GrayImage, ResampleFilter};
use crate::numerics::check_quality;

pub const PAYLOAD_MAGIC: &[u8; 4] = b"XRCP";
pub const PAYLOAD_VERSION: u8 = 1;
/// Fixed bytes around the packed coefficients: 4+1+8+1+1+4 header, 4 crc.
pub const PAYLOAD_OVERHEAD: usize = 23;

const FLAG_PREPROCESSED: u8 = 0b01;
const FLAG_OVER_BUDGET: u8 = 0b10;

/// Blind noise estimate (Immerkær): `√(π/2) / (6(W−2)(H−2)) · Σ|img ⊗ L|`
/// over interior pixels, `L = [1 −2 1; −2 4 −2; 1 −2 1]`.
pub fn estimate_noise_sigma(img: &GrayImage) -> Result<f64> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::arg(format!("noise estimate needs at least 3x3, got {w}x{h}")));
    }
    const MASK: [[f64; 3]; 3] = [[1.0, -2.0, 1.0], [-2.0, 4.0, -2.0], [1.0, -2.0, 1.0]];
    let mut total = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let mut acc = 0.0;
            for (dy, row) in MASK.iter().enumerate() {
                for (dx, m) in row.iter().enumerate() {
                    acc += m * img.get(x + dx - 1, y + dy - 1);
                }
            }
            total += acc.abs();
        }
    }
    Ok((std::f64::consts::FRAC_PI_2).sqrt() / (6.0 * (w - 2) as f64 * (h - 2) as f64) * total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressConfig {
    /// Transmission resolution `(W_s, H_s)`.
    pub target: (usize, usize),
    pub quality_range: (u8, u8),
    /// Maximum packed coefficient bytes, if any.
    pub size_budget: Option<usize>,
    /// Noise estimate above which enhancement runs before downscaling.
    pub preprocess_threshold: f64,
    pub preprocess_alpha: f64,
}

impl Default for CompressConfig {
    fn default() -> Self {
        Self {
            target: (128, 128),
            quality_range: (50, 75),
            size_budget: None,
            preprocess_threshold: 0.02,
            preprocess_alpha: 0.5,
        }
    }
}

impl CompressConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.quality_range;
        check_quality(lo)?;
        check_quality(hi)?;
        if lo > hi {
            return Err(Error::arg(format!("quality range {lo}..{hi} is inverted")));
        }
        if self.target.0 < 8 || self.target.1 < 8 {
            return Err(Error::arg(format!(
                "target resolution must be at least 8x8, got {}x{}",
                self.target.0, self.target.1
            )));
        }
        if !(self.preprocess_threshold >= 0.0) || !(self.preprocess_alpha >= 0.0) {
            return Err(Error::arg("preprocessing threshold and gain must be >= 0"));
        }
        Ok(())
    }
}

/// Result of [`choose_quality`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QualityChoice {
    pub quality: u8,
    pub over_budget: bool,
}

/// Largest quality in range whose packed size fits the budget (binary search);
/// the top of the range when there is no budget.
pub fn choose_quality(img: &GrayImage, cfg: &CompressConfig) -> Result<QualityChoice> {
    cfg.validate()?;
    let (lo, hi) = cfg.quality_range;
    let Some(budget) = cfg.size_budget else {
        return Ok(QualityChoice {
            quality: hi,
            over_budget: false,
        });
    };
    let size = |q: u8| codec::encode(img, q).map(|b| b.len());
    if size(lo)? > budget {
        return Ok(QualityChoice {
            quality: lo,
            over_budget: true,
        });
    }
    // invariant: size(good) <= budget; answer in [good, bad)
    let (mut good, mut bad) = (lo as u16, hi as u16 + 1);
    while bad - good > 1 {
        let mid = (good + bad) / 2;
        if size(mid as u8)? <= budget {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(QualityChoice {
        quality: good as u8,
        over_budget: false,
    })
}

/// Encoded image plus what the receiver needs to rebuild it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedPayload {
    pub original: (u16, u16),
    pub downscaled: (u16, u16),
    pub quality: u8,
    pub preprocessed: bool,
    pub over_budget: bool,
    pub packed: Vec<u8>,
}

impl CompressedPayload {
    pub fn crc(&self) -> u32 {
        crc32fast::hash(&self.packed)
    }

    /// Serialized size in bytes.
    pub fn byte_len(&self) -> usize {
        PAYLOAD_OVERHEAD + self.packed.len()
    }

    pub fn original_dims(&self) -> (usize, usize) {
        (self.original.0 as usize, self.original.1 as usize)
    }

    pub fn downscaled_dims(&self) -> (usize, usize) {
        (self.downscaled.0 as usize, self.downscaled.1 as usize)
    }

    /// Size of the original image stored raw at 8 bits per sample.
    pub fn raw_bytes(&self) -> usize {
        self.original.0 as usize * self.original.1 as usize
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        out.extend_from_slice(PAYLOAD_MAGIC);
        out.push(PAYLOAD_VERSION);
        for v in [self.original.0, self.original.1, self.downscaled.0, self.downscaled.1] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.quality);
        let mut flags = 0;
        if self.preprocessed {
            flags |= FLAG_PREPROCESSED;
        }
        if self.over_budget {
            flags |= FLAG_OVER_BUDGET;
        }
        out.push(flags);
        out.extend_from_slice(&(self.packed.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.packed);
        out.extend_from_slice(&self.crc().to_le_bytes());
        out
    }

    /// Parses and verifies the serialized layout, including the crc.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = |at: usize| Error::Parse {
            offset: at,
            reason: "truncated payload".into(),
        };
        if bytes.len() < PAYLOAD_OVERHEAD {
            return Err(short(bytes.len()));
        }
        if &bytes[..4] != PAYLOAD_MAGIC {
            return Err(Error::Parse {
                offset: 0,
                reason: "bad payload magic".into(),
            });
        }
        if bytes[4] != PAYLOAD_VERSION {
            return Err(Error::Parse {
                offset: 4,
                reason: format!("unsupported payload version {}", bytes[4]),
            });
        }
        let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
        let original = (u16_at(5), u16_at(7));
        let downscaled = (u16_at(9), u16_at(11));
        let quality = bytes[13];
        let flags = bytes[14];
        if flags & !(FLAG_PREPROCESSED | FLAG_OVER_BUDGET) != 0 {
            return Err(Error::Parse {
                offset: 14,
                reason: format!("unknown flag bits {flags:#04x}"),
            });
        }
        let len = u32::from_le_bytes(bytes[15..19].try_into().unwrap()) as usize;
        let end = 19usize.checked_add(len).ok_or_else(|| short(15))?;
        if bytes.len() < end + 4 {
            return Err(short(bytes.len()));
        }
        if bytes.len() > end + 4 {
            return Err(Error::Parse {
                offset: end + 4,
                reason: "trailing bytes after payload".into(),
            });
        }
        let packed = bytes[19..end].to_vec();
        let stored = u32::from_le_bytes(bytes[end..end + 4].try_into().unwrap());
        let payload = Self {
            original,
            downscaled,
            quality,
            preprocessed: flags & FLAG_PREPROCESSED != 0,
            over_budget: flags & FLAG_OVER_BUDGET != 0,
            packed,
        };
        let actual = payload.crc();
        if actual != stored {
            return Err(Error::Integrity(format!(
                "payload crc {actual:#010x} does not match stored {stored:#010x}"
            )));
        }
        payload.validate()?;
        Ok(payload)
    }

    pub fn validate(&self) -> Result<()> {
        check_quality(self.quality)?;
        if self.packed.is_empty() {
            return Err(Error::arg("payload carries no coefficient bytes"));
        }
        if self.downscaled.0 == 0 || self.downscaled.1 == 0 || self.original.0 == 0 || self.original.1 == 0 {
            return Err(Error::arg("payload dimensions must be non-zero"));
        }
        Ok(())
    }
}

/// Enhance-if-noisy, area downscale to the target, pick `q`, encode.
pub fn compress(img: &GrayImage, cfg: &CompressConfig) -> Result<CompressedPayload> {
    cfg.validate()?;
    let (w, h) = img.dims();
    let (tw, th) = cfg.target;
    if tw > w || th > h {
        return Err(Error::arg(format!(
            "target {tw}x{th} exceeds input {w}x{h}; compression never upscales"
        )));
    }
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::arg(format!("input {w}x{h} exceeds the payload's 16-bit dimensions")));
    }
    let sigma = estimate_noise_sigma(img)?;
    let preprocessed = sigma > cfg.preprocess_threshold;
    let source = if preprocessed {
        edge_preserve_enhance(img, cfg.preprocess_alpha)?
    } else {
        img.clone()
    };
    let small = resize(&source, tw, th, ResampleFilter::Area)?;
    let choice = choose_quality(&small, cfg)?;
    let packed = codec::encode(&small, choice.quality)?;
    Ok(CompressedPayload {
        original: (w as u16, h as u16),
        downscaled: (tw as u16, th as u16),
        quality: choice.quality,
        preprocessed,
        over_budget: choice.over_budget,
        packed,
    })
}

/// Decoded image at the transmission resolution.
pub fn decode_payload(p: &CompressedPayload) -> Result<GrayImage> {
    p.validate()?;
    let (w, h) = p.downscaled_dims();
    codec::decode(&p.packed, w, h, p.quality)
}
