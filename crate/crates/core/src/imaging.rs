//! Grayscale image container, PGM/PNG I/O, resampling and spatial filters.
//!
//! Samples are `f64` luminance values normalized to `[0, 1]` regardless of the
//! bit depth they were read from. Every border access uses reflect padding
//! (`dcb|abcd|cba`, the edge sample is not repeated).

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics;

/// Bits per sample of the file an image came from (or will be written to).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::arg(format!("unsupported bit depth {other}, expected 8 or 16"))),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    pub fn maxval(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Single-channel image, row-major, samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    source_depth: BitDepth,
}

impl GrayImage {
    /// Builds an image from raw samples. Samples are clamped to `[0, 1]`;
    /// non-finite samples are rejected.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg(format!("image dimensions must be non-zero, got {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::arg(format!(
                "sample count {} does not match {width}x{height}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite sample at index {i}")));
        }
        Ok(Self::from_clamped(width, height, data))
    }

    /// Clamps without the finiteness check; callers guarantee finite input.
    pub(crate) fn from_clamped(width: usize, height: usize, mut data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self {
            width,
            height,
            data,
            source_depth: BitDepth::Eight,
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn with_source_depth(mut self, depth: BitDepth) -> Self {
        self.source_depth = depth;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn source_depth(&self) -> BitDepth {
        self.source_depth
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Sample with reflect addressing for out-of-range coordinates.
    #[inline]
    pub fn get_reflect(&self, x: isize, y: isize) -> f64 {
        self.get(reflect(x, self.width), reflect(y, self.height))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Crops the `w`×`h` window starting at (`x0`, `y0`).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::arg(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            data,
            source_depth: self.source_depth,
        })
    }

    fn same_shape(&self, data: Vec<f64>) -> Self {
        Self::from_clamped(self.width, self.height, data).with_source_depth(self.source_depth)
    }
}

/// Reflect-101 index mapping, repeated until the index lands inside `0..n`.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Square convolution kernel with odd side length.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    size: usize,
    taps: Vec<f64>,
    normalized: bool,
}

impl Kernel2D {
    pub fn new(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::arg(format!("kernel side must be odd, got {size}")));
        }
        if taps.len() != size * size {
            return Err(Error::arg(format!(
                "kernel of side {size} needs {} taps, got {}",
                size * size,
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::arg("kernel taps must be finite"));
        }
        let normalized = (taps.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        Ok(Self {
            size,
            taps,
            normalized,
        })
    }

    /// Single centered unit tap.
    pub fn delta(size: usize) -> Result<Self> {
        let mut taps = vec![0.0; size * size];
        if size % 2 == 1 {
            taps[size * size / 2] = 1.0;
        }
        Self::new(size, taps)
    }

    /// Rescales the taps to sum to one.
    pub fn normalize(self) -> Result<Self> {
        let sum: f64 = self.taps.iter().sum();
        if sum.abs() < 1e-12 {
            return Err(Error::arg("kernel sums to zero and cannot be normalized"));
        }
        let taps = self.taps.into_iter().map(|t| t / sum).collect();
        Ok(Self {
            size: self.size,
            taps,
            normalized: true,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Tap at offset (`dx`, `dy`) from the center.
    pub fn tap(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius() as isize;
        self.taps[((dy + r) as usize) * self.size + (dx + r) as usize]
    }
}

/// Interpolation kernel used by [`resize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleFilter {
    Nearest,
    Bilinear,
    /// Catmull-Rom cubic, a = -0.5.
    Bicubic,
    Lanczos3,
    /// Box average weighted by pixel coverage.
    #[default]
    Area,
}

impl ResampleFilter {
    pub const ALL: [ResampleFilter; 5] = [
        ResampleFilter::Nearest,
        ResampleFilter::Bilinear,
        ResampleFilter::Bicubic,
        ResampleFilter::Lanczos3,
        ResampleFilter::Area,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ResampleFilter::Nearest => "nearest",
            ResampleFilter::Bilinear => "bilinear",
            ResampleFilter::Bicubic => "bicubic",
            ResampleFilter::Lanczos3 => "lanczos3",
            ResampleFilter::Area => "area",
        }
    }

    fn support(self) -> f64 {
        match self {
            ResampleFilter::Bilinear => 1.0,
            ResampleFilter::Bicubic => 2.0,
            ResampleFilter::Lanczos3 => 3.0,
            ResampleFilter::Nearest | ResampleFilter::Area => 0.5,
        }
    }

    fn eval(self, t: f64) -> f64 {
        let t = t.abs();
        match self {
            ResampleFilter::Bilinear => (1.0 - t).max(0.0),
            ResampleFilter::Bicubic => {
                const A: f64 = -0.5;
                if t < 1.0 {
                    ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
                } else if t < 2.0 {
                    ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
                } else {
                    0.0
                }
            }
            ResampleFilter::Lanczos3 => {
                if t < 3.0 {
                    sinc(t) * sinc(t / 3.0)
                } else {
                    0.0
                }
            }
            ResampleFilter::Nearest | ResampleFilter::Area => {
                if t < 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for ResampleFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ResampleFilter::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown resample filter `{s}`")))
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let a = std::f64::consts::PI * x;
        a.sin() / a
    }
}

/// Per-output-sample list of (source index, weight); weights sum to one.
fn axis_weights(n_in: usize, n_out: usize, filter: ResampleFilter) -> Vec<Vec<(usize, f64)>> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| match filter {
            ResampleFilter::Nearest => {
                let src = (((o as f64) + 0.5) * ratio).floor() as usize;
                vec![(src.min(n_in - 1), 1.0)]
            }
            ResampleFilter::Area => {
                let lo = o as f64 * ratio;
                let hi = lo + ratio;
                let first = lo.floor() as usize;
                let last = (hi.ceil() as usize).min(n_in);
                let mut taps: Vec<(usize, f64)> = (first..last)
                    .filter_map(|j| {
                        let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
                        (overlap > 0.0).then_some((j, overlap))
                    })
                    .collect();
                let sum: f64 = taps.iter().map(|t| t.1).sum();
                for t in &mut taps {
                    t.1 /= sum;
                }
                taps
            }
            _ => {
                let scale = ratio.max(1.0);
                let center = (o as f64 + 0.5) * ratio - 0.5;
                let support = filter.support() * scale;
                let first = (center - support).floor() as isize;
                let last = (center + support).ceil() as isize;
                let mut taps: Vec<(usize, f64)> = (first..=last)
                    .filter_map(|j| {
                        let w = filter.eval((j as f64 - center) / scale);
                        (w != 0.0).then(|| (reflect(j, n_in), w))
                    })
                    .collect();
                let sum: f64 = taps.iter().map(|t| t.1).sum();
                for t in &mut taps {
                    t.1 /= sum;
                }
                taps
            }
        })
        .collect()
}

/// Resamples `img` to exactly `out_w`×`out_h` with a separable filter.
pub fn resize(img: &GrayImage, out_w: usize, out_h: usize, filter: ResampleFilter) -> Result<GrayImage> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::arg(format!("output dimensions must be non-zero, got {out_w}x{out_h}")));
    }
    let (w, h) = img.dims();
    if (w, h) == (out_w, out_h) {
        return Ok(img.clone());
    }
    let xw = axis_weights(w, out_w, filter);
    let yw = axis_weights(h, out_h, filter);

    let mut horiz = vec![0.0; out_w * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        let out = &mut horiz[y * out_w..(y + 1) * out_w];
        for (o, taps) in out.iter_mut().zip(&xw) {
            *o = taps.iter().map(|&(j, wt)| row[j] * wt).sum();
        }
    }
    let mut out = vec![0.0; out_w * out_h];
    for (oy, taps) in yw.iter().enumerate() {
        let dst = &mut out[oy * out_w..(oy + 1) * out_w];
        for &(j, wt) in taps {
            let src = &horiz[j * out_w..(j + 1) * out_w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s * wt;
            }
        }
    }
    Ok(GrayImage::from_clamped(out_w, out_h, out).with_source_depth(img.source_depth))
}

/// Reflect-padded copy with `r` extra samples on each side.
fn pad_reflect(img: &GrayImage, r: usize) -> (Vec<f64>, usize) {
    let pw = img.width + 2 * r;
    let ph = img.height + 2 * r;
    let mut out = Vec::with_capacity(pw * ph);
    for py in 0..ph {
        let sy = reflect(py as isize - r as isize, img.height);
        for px in 0..pw {
            let sx = reflect(px as isize - r as isize, img.width);
            out.push(img.data[sy * img.width + sx]);
        }
    }
    (out, pw)
}

/// Correlation with reflect borders, without clamping the result.
pub fn convolve_raw(img: &GrayImage, k: &Kernel2D) -> Result<Vec<f64>> {
    let side = k.size();
    if side > img.width.min(img.height) {
        return Err(Error::arg(format!(
            "kernel side {side} exceeds image {}x{}",
            img.width, img.height
        )));
    }
    let r = k.radius();
    let (padded, pw) = pad_reflect(img, r);
    let (w, h) = img.dims();
    let mut out = vec![0.0; w * h];
    for ky in 0..side {
        for kx in 0..side {
            let t = k.taps[ky * side + kx];
            if t == 0.0 {
                continue;
            }
            for y in 0..h {
                let src = &padded[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                let dst = &mut out[y * w..(y + 1) * w];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += t * s;
                }
            }
        }
    }
    Ok(out)
}

/// Spatial correlation with `k` (reflect borders), clamped to `[0, 1]`.
pub fn convolve(img: &GrayImage, k: &Kernel2D) -> Result<GrayImage> {
    Ok(img.same_shape(convolve_raw(img, k)?))
}

/// Isotropic Gaussian blur; convenience over [`numerics::gaussian_kernel`].
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    convolve(img, &numerics::gaussian_kernel(sigma)?)
}

/// Scale that maps the largest possible Sobel magnitude on `[0,1]` input to 1.
pub const SOBEL_SCALE: f64 = 1.0 / (4.0 * std::f64::consts::SQRT_2);

/// Horizontal and vertical 3×3 Sobel responses, unscaled.
pub fn sobel_gradients(img: &GrayImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = img.dims();
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let p = |dx: isize, dy: isize| img.get_reflect(xi + dx, yi + dy);
            gx[y * w + x] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            gy[y * w + x] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        }
    }
    (gx, gy)
}

/// Gradient magnitude `sqrt(gx² + gy²) / (4√2)`, in `[0, 1]`.
pub fn sobel_magnitude(img: &GrayImage) -> GrayImage {
    let (gx, gy) = sobel_gradients(img);
    let data = gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| (a * a + b * b).sqrt() * SOBEL_SCALE)
        .collect();
    img.same_shape(data)
}

/// Unsharp-style enhancement gated by edge strength:
/// `img + alpha * sobel(img) * (img - blur_σ1(img))`.
pub fn edge_preserve_enhance(img: &GrayImage, alpha: f64) -> Result<GrayImage> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::arg(format!("enhancement gain must be finite and >= 0, got {alpha}")));
    }
    if alpha == 0.0 {
        return Ok(img.clone());
    }
    let blurred = gaussian_blur(img, 1.0)?;
    let mask = sobel_magnitude(img);
    let data = img
        .data
        .iter()
        .zip(&blurred.data)
        .zip(&mask.data)
        .map(|((&v, &b), &m)| v + alpha * m * (v - b))
        .collect();
    Ok(img.same_shape(data))
}

// ---------------------------------------------------------------------------
// File I/O

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        reason: reason.into(),
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_whitespace_and_comments();
        if self.pos >= self.bytes.len() {
            return Err(parse_err(self.pos, format!("unexpected end of header, expected {what}")));
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(start, format!("expected decimal {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(start, format!("{what} out of range")))
    }
}

/// Parses a binary (P5) PGM with maxval 255 or 65535.
pub fn read_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 {
        return Err(parse_err(bytes.len(), "truncated magic"));
    }
    if &bytes[..2] != b"P5" {
        return Err(parse_err(0, "not a binary PGM (expected `P5`)"));
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    cur.skip_whitespace_and_comments();
    let maxval_offset = cur.pos;
    let maxval = cur.number("maxval")?;
    let depth = match maxval {
        255 => BitDepth::Eight,
        65535 => BitDepth::Sixteen,
        other => return Err(parse_err(maxval_offset, format!("unsupported maxval {other}"))),
    };
    if width == 0 || height == 0 {
        return Err(parse_err(2, "zero image dimension"));
    }
    // exactly one whitespace byte separates the header from the raster
    if cur.pos >= bytes.len() {
        return Err(parse_err(cur.pos, "missing raster separator"));
    }
    if !bytes[cur.pos].is_ascii_whitespace() {
        return Err(parse_err(cur.pos, "expected whitespace after maxval"));
    }
    let start = cur.pos + 1;
    let bps = if depth == BitDepth::Eight { 1 } else { 2 };
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(bps))
        .ok_or_else(|| parse_err(2, "image dimensions overflow"))?;
    if bytes.len() < start + need {
        return Err(parse_err(bytes.len(), format!("truncated raster: need {need} bytes")));
    }
    let raster = &bytes[start..start + need];
    let scale = 1.0 / maxval as f64;
    let data = match depth {
        BitDepth::Eight => raster.iter().map(|&b| b as f64 * scale).collect(),
        BitDepth::Sixteen => raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect(),
    };
    Ok(GrayImage::from_clamped(width, height, data).with_source_depth(depth))
}

fn quantize_sample(v: f64, maxval: u32) -> u32 {
    // round half up
    ((v.clamp(0.0, 1.0) * maxval as f64 + 0.5).floor() as u32).min(maxval)
}

/// Integer samples at `depth`, round-half-up.
pub fn quantize(img: &GrayImage, depth: BitDepth) -> Vec<u32> {
    let maxval = depth.maxval();
    img.data.iter().map(|&v| quantize_sample(v, maxval)).collect()
}

/// Serializes as binary PGM. 16-bit samples are big-endian.
pub fn write_pgm(img: &GrayImage, depth: BitDepth) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, depth.maxval()).into_bytes();
    let q = quantize(img, depth);
    match depth {
        BitDepth::Eight => out.extend(q.iter().map(|&v| v as u8)),
        BitDepth::Sixteen => {
            for v in q {
                out.extend_from_slice(&(v as u16).to_be_bytes());
            }
        }
    }
    out
}

/// Decodes an 8- or 16-bit grayscale PNG with the same normalization as PGM.
pub fn read_png(bytes: &[u8]) -> Result<GrayImage> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| parse_err(0, format!("png: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(parse_err(0, format!("png: expected grayscale, got {:?}", info.color_type)));
    }
    let depth = match info.bit_depth {
        png::BitDepth::Eight => BitDepth::Eight,
        png::BitDepth::Sixteen => BitDepth::Sixteen,
        other => return Err(parse_err(0, format!("png: unsupported bit depth {other:?}"))),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| parse_err(0, "png: image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| parse_err(0, format!("png: {e}")))?;
    let buf = &buf[..frame.buffer_size()];
    let scale = 1.0 / depth.maxval() as f64;
    let data: Vec<f64> = match depth {
        BitDepth::Eight => buf.iter().map(|&b| b as f64 * scale).collect(),
        BitDepth::Sixteen => buf
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect(),
    };
    if data.len() != width * height {
        return Err(parse_err(0, "png: unexpected raster size"));
    }
    Ok(GrayImage::from_clamped(width, height, data).with_source_depth(depth))
}

pub fn write_png(img: &GrayImage, depth: BitDepth) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(match depth {
            BitDepth::Eight => png::BitDepth::Eight,
            BitDepth::Sixteen => png::BitDepth::Sixteen,
        });
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        let q = quantize(img, depth);
        let raster: Vec<u8> = match depth {
            BitDepth::Eight => q.iter().map(|&v| v as u8).collect(),
            BitDepth::Sixteen => q.iter().flat_map(|&v| (v as u16).to_be_bytes()).collect(),
        };
        writer
            .write_image_data(&raster)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    Ok(out)
}

/// Decodes PGM or PNG, chosen by signature.
pub fn decode_image(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.starts_with(b"\x89PNG") {
        read_png(bytes)
    } else {
        read_pgm(bytes)
    }
}

pub fn read_image(path: &Path) -> Result<GrayImage> {
    decode_image(&std::fs::read(path)?)
}

/// Writes PNG when the extension is `.png`, PGM otherwise.
pub fn write_image(path: &Path, img: &GrayImage, depth: BitDepth) -> Result<()> {
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { write_png(img, depth)? } else { write_pgm(img, depth) };
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_image;

    #[test]
    fn read_small_pgm() {
        let bytes = b"P5\n2 2\n255\n\x00\x80\xff\x40";
        let img = read_pgm(bytes).unwrap();
        let want = [0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0];
        for (a, b) in img.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((img.data()[1] - 0.50196).abs() < 1e-5);
        assert!((img.data()[3] - 0.25098).abs() < 1e-5);
        assert_eq!(img.source_depth(), BitDepth::Eight);

        let one = read_pgm(b"P5 1 1 255\n\xff").unwrap();
        assert_eq!(one.data(), &[1.0]);
    }

    #[test]
    fn pgm_errors_name_offsets() {
        match read_pgm(b"P5") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(read_pgm(b"P6 1 1 255\n\x00"), Err(Error::Parse { offset: 0, .. })));
        assert!(matches!(read_pgm(b"P5 1 1 1000\n\x00"), Err(Error::Parse { offset: 7, .. })));
        assert!(matches!(read_pgm(b"P5 2 2 255\n\x00"), Err(Error::Parse { .. })));
    }

    #[test]
    fn pgm_comments_and_16bit() {
        let bytes = b"P5\n# made by hand\n1 2\n65535\n\xff\xff\x80\x00";
        let img = read_pgm(bytes).unwrap();
        assert_eq!(img.dims(), (1, 2));
        assert_eq!(img.source_depth(), BitDepth::Sixteen);
        assert_eq!(img.data()[0], 1.0);
        assert!((img.data()[1] - 32768.0 / 65535.0).abs() < 1e-12);
    }

    #[test]
    fn write_rounding() {
        let one = GrayImage::constant(1, 1, 1.0).unwrap();
        assert_eq!(*write_pgm(&one, BitDepth::Eight).last().unwrap(), 255);
        let half = GrayImage::constant(1, 1, 0.5).unwrap();
        assert_eq!(*write_pgm(&half, BitDepth::Eight).last().unwrap(), 128);
    }

    #[test]
    fn pgm_round_trip_16bit() {
        let img = seeded_image(32, 32, 11);
        let back = read_pgm(&write_pgm(&img, BitDepth::Sixteen)).unwrap();
        let err = img
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.5 / 65535.0 + 1e-15, "err {err}");
    }

    #[test]
    fn png_round_trip() {
        let img = seeded_image(16, 9, 3);
        for depth in [BitDepth::Eight, BitDepth::Sixteen] {
            let back = read_png(&write_png(&img, depth).unwrap()).unwrap();
            assert_eq!(back.dims(), (16, 9));
            assert_eq!(back.source_depth(), depth);
            let tol = 0.5 / depth.maxval() as f64 + 1e-15;
            assert!(img.data().iter().zip(back.data()).all(|(a, b)| (a - b).abs() <= tol));
        }
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect(-7, 1), 0);
    }

    #[test]
    fn downscale_512_to_128() {
        let img = seeded_image(512, 512, 1);
        let small = resize(&img, 128, 128, ResampleFilter::Area).unwrap();
        assert_eq!(small.dims(), (128, 128));
        // integer-factor area is an exact 4x4 box mean
        let mut want = 0.0;
        for y in 0..4 {
            for x in 0..4 {
                want += img.get(x, y) / 16.0;
            }
        }
        assert!((small.get(0, 0) - want).abs() < 1e-12);
    }

    #[test]
    fn resize_preserves_constants() {
        let img = GrayImage::constant(64, 64, 0.7).unwrap();
        for f in ResampleFilter::ALL {
            for (w, h) in [(16, 16), (100, 37), (64, 65)] {
                let out = resize(&img, w, h, f).unwrap();
                assert_eq!(out.dims(), (w, h));
                assert!(out.data().iter().all(|v| (v - 0.7).abs() <= 1e-6), "{f:?}");
                let back = resize(&out, 64, 64, f).unwrap();
                assert!(back.data().iter().all(|v| (v - 0.7).abs() <= 1e-6), "{f:?}");
            }
        }
    }

    #[test]
    fn resize_rejects_zero() {
        let img = GrayImage::constant(8, 8, 0.1).unwrap();
        assert!(matches!(resize(&img, 0, 4, ResampleFilter::Area), Err(Error::Argument(_))));
    }

    #[test]
    fn bicubic_reproduces_ramp() {
        let f = |x: f64, y: f64| 0.1 + 0.01 * x + 0.005 * y;
        let img = GrayImage::from_fn(32, 32, |x, y| f(x as f64, y as f64)).unwrap();
        let up = resize(&img, 128, 128, ResampleFilter::Bicubic).unwrap();
        let mut worst: f64 = 0.0;
        // interior: away from the reflected border taps
        for y in 12..116 {
            for x in 12..116 {
                let sx = (x as f64 + 0.5) / 4.0 - 0.5;
                let sy = (y as f64 + 0.5) / 4.0 - 0.5;
                worst = worst.max((up.get(x, y) - f(sx, sy)).abs());
            }
        }
        assert!(worst <= 1e-3, "worst {worst}");
    }

    #[test]
    fn nearest_x4_replicates() {
        let img = seeded_image(8, 8, 5);
        let up = resize(&img, 32, 32, ResampleFilter::Nearest).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(up.get(x, y), img.get(x / 4, y / 4));
            }
        }
    }

    fn brute_convolve(img: &GrayImage, k: &Kernel2D) -> Vec<f64> {
        let r = k.radius() as isize;
        let mut out = Vec::new();
        for y in 0..img.height() as isize {
            for x in 0..img.width() as isize {
                let mut acc = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        acc += k.tap(dx, dy) * img.get_reflect(x + dx, y + dy);
                    }
                }
                out.push(acc.clamp(0.0, 1.0));
            }
        }
        out
    }

    fn gauss5(sigma: f64) -> Kernel2D {
        let mut taps = Vec::new();
        for y in -2i32..=2 {
            for x in -2i32..=2 {
                taps.push((-((x * x + y * y) as f64) / (2.0 * sigma * sigma)).exp());
            }
        }
        Kernel2D::new(5, taps).unwrap().normalize().unwrap()
    }

    #[test]
    fn convolve_identity_and_constant() {
        let img = seeded_image(32, 32, 2);
        let id = convolve(&img, &Kernel2D::delta(5).unwrap()).unwrap();
        assert_eq!(id.data(), img.data());

        let c = GrayImage::constant(32, 32, 0.3).unwrap();
        let out = convolve(&c, &gauss5(1.3)).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-6));
    }

    #[test]
    fn convolve_matches_brute_force() {
        let img = seeded_image(32, 32, 9);
        let k = gauss5(1.0);
        let fast = convolve(&img, &k).unwrap();
        let slow = brute_convolve(&img, &k);
        for (a, b) in fast.data().iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn convolve_rejects_oversized_kernel() {
        let img = GrayImage::constant(4, 8, 0.5).unwrap();
        assert!(matches!(convolve(&img, &gauss5(1.0)), Err(Error::Argument(_))));
    }

    #[test]
    fn convolve_is_linear() {
        let a = seeded_image(24, 24, 1);
        let b = seeded_image(24, 24, 2);
        let k = gauss5(0.8);
        let mix = GrayImage::new(
            24,
            24,
            a.data().iter().zip(b.data()).map(|(x, y)| 0.3 * x + 0.6 * y).collect(),
        )
        .unwrap();
        let lhs = convolve_raw(&mix, &k).unwrap();
        let ca = convolve_raw(&a, &k).unwrap();
        let cb = convolve_raw(&b, &k).unwrap();
        for i in 0..lhs.len() {
            assert!((lhs[i] - (0.3 * ca[i] + 0.6 * cb[i])).abs() <= 1e-6);
        }
    }

    #[test]
    fn sobel_on_ramps() {
        let c = GrayImage::constant(16, 16, 0.4).unwrap();
        assert!(sobel_magnitude(&c).data().iter().all(|&v| v == 0.0));

        let h = GrayImage::from_fn(16, 16, |x, _| x as f64 / 255.0).unwrap();
        let (gx, gy) = sobel_gradients(&h);
        for y in 1..15 {
            for x in 1..15 {
                assert!((gx[y * 16 + x].abs() - 8.0 / 255.0).abs() < 1e-12);
                assert!(gy[y * 16 + x].abs() < 1e-12);
            }
        }

        let v = GrayImage::from_fn(16, 16, |_, y| y as f64 / 255.0).unwrap();
        let mh = sobel_magnitude(&h);
        let mv = sobel_magnitude(&v);
        for y in 0..16 {
            for x in 0..16 {
                assert!((mh.get(x, y) - mv.get(y, x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn enhance_identity_cases() {
        let img = seeded_image(16, 16, 4);
        assert_eq!(edge_preserve_enhance(&img, 0.0).unwrap(), img);
        let c = GrayImage::constant(16, 16, 0.6).unwrap();
        assert_eq!(edge_preserve_enhance(&c, 3.0).unwrap().data(), c.data());
        assert!(matches!(edge_preserve_enhance(&img, -0.1), Err(Error::Argument(_))));
    }

    #[test]
    fn enhance_step_edge_matches_oracle() {
        let img = GrayImage::from_fn(32, 16, |x, _| if x < 16 { 0.2 } else { 0.8 }).unwrap();
        let out = edge_preserve_enhance(&img, 0.5).unwrap();

        // oracle: the formula written out with explicit loops
        let g = numerics::gaussian_kernel(1.0).unwrap();
        let blurred = brute_convolve(&img, &g);
        let r = 1isize;
        let mut worst: f64 = 0.0;
        for y in 0..16isize {
            for x in 0..32isize {
                let p = |dx: isize, dy: isize| img.get_reflect(x + dx, y + dy);
                let gx = p(r, -r) + 2.0 * p(r, 0) + p(r, r) - p(-r, -r) - 2.0 * p(-r, 0) - p(-r, r);
                let gy = p(-r, r) + 2.0 * p(0, r) + p(r, r) - p(-r, -r) - 2.0 * p(0, -r) - p(r, -r);
                let m = (gx * gx + gy * gy).sqrt() / (4.0 * 2f64.sqrt());
                let v = p(0, 0);
                let want = (v + 0.5 * m * (v - blurred[(y * 32 + x) as usize])).clamp(0.0, 1.0);
                worst = worst.max((out.get(x as usize, y as usize) - want).abs());
            }
        }
        assert!(worst <= 1e-6);
        // bright side overshoots, dark side undershoots
        assert!(out.get(16, 8) > 0.8);
        assert!(out.get(15, 8) < 0.2);
    }
}
