//! Forward-only tensor graph executor for the RRDB generator and the U-Net
//! discriminator.
//!
//! A [`NetworkGraph`] is an ordered layer list operating on one "current"
//! activation. Earlier activations are kept through named skips: a skip is
//! registered at a layer's output (or the graph input) and consumed later by
//! `concat` or `add`. Architecture lives in a JSON manifest, parameters in a
//! separate `NNW1` weight file.

use std::collections::HashMap;
use std::path::Path;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{reflect, GrayImage};

// ---------------------------------------------------------------------------
// Tensor

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(Error::arg(format!("tensor dims must be non-empty and >= 1, got {dims:?}")));
        }
        let count: usize = dims.iter().product();
        if count != data.len() {
            return Err(Error::arg(format!("tensor {dims:?} needs {count} values, got {}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("tensor values must be finite"));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self { dims, data: vec![0.0; n] }
    }

    pub fn from_image(img: &GrayImage) -> Self {
        Self {
            dims: vec![1, img.height(), img.width()],
            data: img.data().iter().map(|&v| v as f32).collect(),
        }
    }

    /// Single-channel tensor back to an image, clamped to `[0, 1]`.
    pub fn to_image(&self) -> Result<GrayImage> {
        let (c, h, w) = self.chw()?;
        if c != 1 {
            return Err(Error::Graph(format!("expected one output channel, got {c}")));
        }
        GrayImage::new(w, h, self.data.iter().map(|&v| v as f64).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.dims[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Graph(format!("expected a (C, H, W) activation, got {:?}", self.dims))),
        }
    }

    /// crc32 over the little-endian value bytes.
    pub fn checksum(&self) -> u32 {
        let mut hasher = crc32fast::Hasher::new();
        for v in &self.data {
            hasher.update(&v.to_le_bytes());
        }
        hasher.finalize()
    }
}

// ---------------------------------------------------------------------------
// Weight store and file format

pub const WEIGHT_MAGIC: &[u8; 4] = b"NNW1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightStore {
    tensors: IndexMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Load {
                tensor: name,
                reason: "duplicate tensor name".into(),
            });
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Serializes in insertion order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dims.len() as u8);
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        load_weights(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Random weights for every parameter of `shapes`, uniform in ±`scale / √fan_in`.
    pub fn random(shapes: &[ParamShape], seed: u64, scale: f32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::new();
        for p in shapes {
            let n: usize = p.dims.iter().product();
            let fan_in: usize = p.dims[1..].iter().product::<usize>().max(1);
            let bound = scale / (fan_in as f32).sqrt();
            let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
            store
                .insert(p.name.clone(), Tensor { dims: p.dims.clone(), data })
                .expect("builder emits unique names");
        }
        store
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parses an `NNW1` weight file.
pub fn load_weights(bytes: &[u8]) -> Result<WeightStore> {
    let header_err = |reason: &str| Error::Load {
        tensor: "<header>".into(),
        reason: reason.into(),
    };
    let mut rd = ByteReader { bytes, pos: 0 };
    if rd.take(4) != Some(WEIGHT_MAGIC.as_slice()) {
        return Err(header_err("bad magic, expected NNW1"));
    }
    let count = rd.u32().ok_or_else(|| header_err("truncated tensor count"))?;
    let mut store = WeightStore::new();
    for index in 0..count {
        let placeholder = format!("#{index}");
        let name_len = rd.u16().ok_or_else(|| Error::Load {
            tensor: placeholder.clone(),
            reason: "truncated name length".into(),
        })?;
        let name = rd
            .take(name_len as usize)
            .ok_or_else(|| Error::Load {
                tensor: placeholder.clone(),
                reason: "truncated name".into(),
            })
            .and_then(|b| {
                std::str::from_utf8(b).map(str::to_owned).map_err(|_| Error::Load {
                    tensor: placeholder.clone(),
                    reason: "name is not UTF-8".into(),
                })
            })?;
        let fail = |reason: String| Error::Load {
            tensor: name.clone(),
            reason,
        };
        let ndim = rd.u8().ok_or_else(|| fail("truncated rank".into()))? as usize;
        if ndim == 0 {
            return Err(fail("rank must be >= 1".into()));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = rd.u32().ok_or_else(|| fail("truncated dims".into()))? as usize;
            if d == 0 {
                return Err(fail("zero-sized dimension".into()));
            }
            dims.push(d);
        }
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= (bytes.len() - rd.pos) / 4)
            .ok_or_else(|| fail(format!("truncated values for dims {dims:?}")))?;
        let raw = rd.take(count * 4).expect("length checked above");
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(fail(format!("non-finite value at index {i}")));
        }
        if store.tensors.contains_key(&name) {
            return Err(fail("duplicate tensor name".into()));
        }
        store.tensors.insert(name.clone(), Tensor { dims, data });
    }
    if rd.pos != bytes.len() {
        return Err(header_err("trailing bytes after last tensor"));
    }
    Ok(store)
}

// ---------------------------------------------------------------------------
// Primitive ops

/// Same-size cross-correlation with reflect padding. `w` is `(out, in, k, k)`
/// with odd `k`; `bias` has one entry per output channel.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: &[f32]) -> Result<Tensor> {
    conv2d_impl(x, w, bias, true)
}

fn conv2d_impl(x: &Tensor, w: &Tensor, bias: &[f32], simd: bool) -> Result<Tensor> {
    let (c, h, wd) = x.chw()?;
    let [oc, ic, kh, kw] = w.dims[..] else {
        return Err(Error::Graph(format!("conv weight must be 4-D, got {:?}", w.dims)));
    };
    if ic != c {
        return Err(Error::Graph(format!("conv expects {ic} input channels, got {c}")));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Graph(format!("conv kernel must be square and odd, got {kh}x{kw}")));
    }
    if bias.len() != oc {
        return Err(Error::Graph(format!("bias has {} entries for {oc} outputs", bias.len())));
    }
    let k = kh;
    let r = k / 2;
    let (ph, pw) = (h + 2 * r, wd + 2 * r);
    let padded: Vec<f32> = if r == 0 {
        x.data.clone()
    } else {
        let mut p = Vec::with_capacity(c * ph * pw);
        for ch in 0..c {
            let plane = &x.data[ch * h * wd..(ch + 1) * h * wd];
            for py in 0..ph {
                let sy = reflect(py as isize - r as isize, h);
                let row = &plane[sy * wd..(sy + 1) * wd];
                for px in 0..pw {
                    p.push(row[reflect(px as isize - r as isize, wd)]);
                }
            }
        }
        p
    };
    let mut out = vec![0.0f32; oc * h * wd];
    let job = ConvJob {
        padded: &padded,
        weights: &w.data,
        bias,
        dims: (ic, k, h, wd),
    };
    #[cfg(target_arch = "x86_64")]
    if simd && std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2, checked just above.
        unsafe { conv_avx2(&job, &mut out) };
        return Ok(Tensor {
            dims: vec![oc, h, wd],
            data: out,
        });
    }
    conv_portable(&job, &mut out);
    Ok(Tensor {
        dims: vec![oc, h, wd],
        data: out,
    })
}

struct ConvJob<'a> {
    padded: &'a [f32],
    weights: &'a [f32],
    bias: &'a [f32],
    /// (in channels, kernel side, height, width)
    dims: (usize, usize, usize, usize),
}

// Same body compiled twice; without fast-math the vector build rounds exactly
// like the scalar one, so the dispatch never changes results.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn conv_avx2(job: &ConvJob, out: &mut [f32]) {
    use std::arch::x86_64::*;
    const G: usize = 8;
    let (ic, k, h, wd) = job.dims;
    let (ph, pw) = (h + k - 1, wd + k - 1);
    let oc = job.bias.len();
    let taps = ic * k * k;
    let full = wd / 8 * 8;
    let mut o0 = 0;
    while o0 + G <= oc {
        // tap-major weights so each tap's G values are adjacent
        let wt: Vec<f32> = (0..taps)
            .flat_map(|t| (0..G).map(move |g| (o0 + g) * taps + t))
            .map(|i| job.weights[i])
            .collect();
        for y in 0..h {
            for x0 in (0..full).step_by(8) {
                let mut acc = [_mm256_setzero_ps(); G];
                for (g, a) in acc.iter_mut().enumerate() {
                    *a = _mm256_set1_ps(job.bias[o0 + g]);
                }
                let mut wp = wt.as_ptr();
                for i in 0..ic {
                    let base = job.padded.as_ptr().add(i * ph * pw + y * pw + x0);
                    for ky in 0..k {
                        let row = base.add(ky * pw);
                        for kx in 0..k {
                            let s = _mm256_loadu_ps(row.add(kx));
                            for a in acc.iter_mut() {
                                *a = _mm256_add_ps(*a, _mm256_mul_ps(_mm256_broadcast_ss(&*wp), s));
                                wp = wp.add(1);
                            }
                        }
                    }
                }
                for (g, a) in acc.iter().enumerate() {
                    _mm256_storeu_ps(out.as_mut_ptr().add((o0 + g) * h * wd + y * wd + x0), *a);
                }
            }
        }
        if full < wd {
            conv_tail(job, o0, G, full, out);
        }
        o0 += G;
    }
    if o0 < oc {
        conv_tail(job, o0, oc - o0, 0, out);
    }
}

/// Scalar path for channels `o0..o0+n`, columns `x_from..`.
fn conv_tail(job: &ConvJob, o0: usize, n: usize, x_from: usize, out: &mut [f32]) {
    let (ic, k, h, wd) = job.dims;
    let (ph, pw) = (h + k - 1, wd + k - 1);
    let taps = ic * k * k;
    for o in o0..o0 + n {
        let w = &job.weights[o * taps..(o + 1) * taps];
        for y in 0..h {
            for x in x_from..wd {
                let mut acc = job.bias[o];
                let mut t = 0;
                for i in 0..ic {
                    for ky in 0..k {
                        let row = &job.padded[i * ph * pw + (y + ky) * pw..];
                        for kx in 0..k {
                            acc += w[t] * row[x + kx];
                            t += 1;
                        }
                    }
                }
                out[o * h * wd + y * wd + x] = acc;
            }
        }
    }
}

fn conv_portable(job: &ConvJob, out: &mut [f32]) {
    conv_body(job, out)
}

#[inline(always)]
fn conv_body(job: &ConvJob, out: &mut [f32]) {
    let oc = job.bias.len();
    let mut o0 = 0;
    while o0 + 4 <= oc {
        conv_channels::<4>(job, o0, out);
        o0 += 4;
    }
    while o0 < oc {
        conv_channels::<1>(job, o0, out);
        o0 += 1;
    }
}

/// Output channels `o0..o0+G`, eight pixels at a time with the accumulators
/// held in registers. Every pixel sums bias, then taps in (in, ky, kx) order.
#[inline(always)]
fn conv_channels<const G: usize>(job: &ConvJob, o0: usize, out: &mut [f32]) {
    const L: usize = 8;
    let (ic, k, h, wd) = job.dims;
    let (ph, pw) = (h + k - 1, wd + k - 1);
    let taps = ic * k * k;
    let wts: [&[f32]; G] = std::array::from_fn(|g| &job.weights[(o0 + g) * taps..(o0 + g + 1) * taps]);
    for y in 0..h {
        let mut x0 = 0;
        while x0 < wd {
            let lanes = (wd - x0).min(L);
            let mut acc = [[0.0f32; L]; G];
            for g in 0..G {
                acc[g] = [job.bias[o0 + g]; L];
            }
            let mut t = 0;
            for i in 0..ic {
                let src_plane = &job.padded[i * ph * pw..(i + 1) * ph * pw];
                for ky in 0..k {
                    let row = &src_plane[(y + ky) * pw..(y + ky + 1) * pw];
                    for kx in 0..k {
                        let mut s = [0.0f32; L];
                        if lanes == L {
                            s.copy_from_slice(&row[x0 + kx..x0 + kx + L]);
                        } else {
                            s[..lanes].copy_from_slice(&row[x0 + kx..x0 + kx + lanes]);
                        }
                        for g in 0..G {
                            let wv = wts[g][t];
                            for l in 0..L {
                                acc[g][l] += wv * s[l];
                            }
                        }
                        t += 1;
                    }
                }
            }
            for g in 0..G {
                let at = (o0 + g) * h * wd + y * wd + x0;
                out[at..at + lanes].copy_from_slice(&acc[g][..lanes]);
            }
            x0 += L;
        }
    }
}

fn leaky_relu(mut x: Tensor, slope: f32) -> Tensor {
    for v in &mut x.data {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    x
}

fn upsample_nearest2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            let row = &x.data[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            out.extend((0..ow).map(|xx| row[xx / 2]));
        }
    }
    Ok(Tensor {
        dims: vec![c, oh, ow],
        data: out,
    })
}

fn avgpool2(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    if h < 2 || w < 2 {
        return Err(Error::Graph(format!("avgpool needs at least 2x2, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let p = &x.data[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * w + 2 * xx;
                out.push(0.25 * (p[i] + p[i + 1] + p[i + w] + p[i + w + 1]));
            }
        }
    }
    Ok(Tensor {
        dims: vec![c, oh, ow],
        data: out,
    })
}

fn concat(skip: &Tensor, cur: &Tensor) -> Result<Tensor> {
    let (c1, h1, w1) = skip.chw()?;
    let (c2, h2, w2) = cur.chw()?;
    if (h1, w1) != (h2, w2) {
        return Err(Error::Graph(format!("concat of {h1}x{w1} with {h2}x{w2}")));
    }
    let mut data = Vec::with_capacity(skip.data.len() + cur.data.len());
    data.extend_from_slice(&skip.data);
    data.extend_from_slice(&cur.data);
    Ok(Tensor {
        dims: vec![c1 + c2, h1, w1],
        data,
    })
}

fn add_scaled(skip: &Tensor, cur: &Tensor, beta: f32) -> Result<Tensor> {
    if skip.dims != cur.dims {
        return Err(Error::Graph(format!("add of {:?} and {:?}", skip.dims, cur.dims)));
    }
    let data = skip.data.iter().zip(&cur.data).map(|(s, c)| s + beta * c).collect();
    Ok(Tensor {
        dims: skip.dims.clone(),
        data,
    })
}

/// Top-left crop to `(h, w)`, replicating the last row/column if smaller.
fn crop_to(cur: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, ch, cw) = cur.chw()?;
    if (ch, cw) == (h, w) {
        return Ok(cur.clone());
    }
    let mut data = Vec::with_capacity(c * h * w);
    for k in 0..c {
        for y in 0..h {
            let sy = y.min(ch - 1);
            for x in 0..w {
                data.push(cur.data[(k * ch + sy) * cw + x.min(cw - 1)]);
            }
        }
    }
    Ok(Tensor {
        dims: vec![c, h, w],
        data,
    })
}

// ---------------------------------------------------------------------------
// Graph

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum LayerKind {
    Conv3x3,
    Conv1x1,
    LeakyRelu { slope: f32 },
    NearestUpsample,
    Avgpool,
    Concat { skip: String },
    Add { skip: String, beta: f32 },
    CropTo { skip: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<String>,
}

/// Registers the output of layer `from` (`-1` = graph input) under `id`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkipDecl {
    pub id: String,
    pub from: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkGraph {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub skips: Vec<SkipDecl>,
    /// Output side / input side: 4 for the generator, 1 for the discriminator.
    pub scale: u32,
    /// Layer indices whose outputs serve as perceptual features.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<usize>,
}

/// Name and dims of one parameter a graph expects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamShape {
    pub name: String,
    pub dims: Vec<usize>,
}

impl NetworkGraph {
    pub fn from_json(text: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(text)?;
        g.check_structure()?;
        Ok(g)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes")
    }

    /// Structural checks that need no weights: skip ids unique, every
    /// reference points backwards, every skip consumed at most once.
    pub fn check_structure(&self) -> Result<()> {
        let mut decl: HashMap<&str, i64> = HashMap::new();
        for s in &self.skips {
            if s.from < -1 || s.from >= self.layers.len() as i64 {
                return Err(Error::Graph(format!("skip `{}` registered at invalid layer {}", s.id, s.from)));
            }
            if decl.insert(&s.id, s.from).is_some() {
                return Err(Error::Graph(format!("duplicate skip id `{}`", s.id)));
            }
        }
        let mut consumed: HashMap<&str, usize> = HashMap::new();
        for (i, l) in self.layers.iter().enumerate() {
            let (skip, consumes) = match &l.kind {
                LayerKind::Concat { skip } | LayerKind::Add { skip, .. } => (skip, true),
                LayerKind::CropTo { skip } => (skip, false),
                _ => continue,
            };
            let from = *decl
                .get(skip.as_str())
                .ok_or_else(|| Error::Graph(format!("layer {i} references unknown skip `{skip}`")))?;
            if from >= i as i64 {
                return Err(Error::Graph(format!("layer {i} references skip `{skip}` registered at layer {from}")));
            }
            if consumes {
                if let Some(prev) = consumed.insert(skip, i) {
                    return Err(Error::Graph(format!("skip `{skip}` consumed by layers {prev} and {i}")));
                }
            }
        }
        if let Some(&f) = self.features.iter().find(|&&f| f >= self.layers.len()) {
            return Err(Error::Graph(format!("feature tap {f} beyond last layer")));
        }
        if self.scale == 0 || !self.scale.is_power_of_two() {
            return Err(Error::Graph(format!("scale must be a power of two, got {}", self.scale)));
        }
        Ok(())
    }

    /// Full validation against a weight store: every tensor resolves and
    /// channel counts and resolutions line up. Returns output channels.
    pub fn validate(&self, w: &WeightStore) -> Result<usize> {
        self.check_structure()?;
        let mut saved: HashMap<usize, (usize, i32)> = HashMap::new();
        let skip_index: HashMap<&str, usize> = self.skips.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        let register = |saved: &mut HashMap<usize, (usize, i32)>, at: i64, state: (usize, i32)| {
            for (si, s) in self.skips.iter().enumerate() {
                if s.from == at {
                    saved.insert(si, state);
                }
            }
        };
        // (channels, log2 resolution relative to input)
        let mut state = (1usize, 0i32);
        register(&mut saved, -1, state);
        for (i, l) in self.layers.iter().enumerate() {
            state = match &l.kind {
                LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                    let k = if l.kind == LayerKind::Conv3x3 { 3 } else { 1 };
                    let (wt, bias) = self.conv_params(i, w)?;
                    if wt.dims.len() != 4 || wt.dims[1] != state.0 || wt.dims[2] != k || wt.dims[3] != k {
                        return Err(Error::Graph(format!(
                            "layer {i}: weight {:?} incompatible with {} input channels and {k}x{k} kernel",
                            wt.dims, state.0
                        )));
                    }
                    if bias.len() != wt.dims[0] {
                        return Err(Error::Graph(format!("layer {i}: bias length {} != {}", bias.len(), wt.dims[0])));
                    }
                    (wt.dims[0], state.1)
                }
                LayerKind::LeakyRelu { .. } => state,
                LayerKind::NearestUpsample => (state.0, state.1 + 1),
                LayerKind::Avgpool => (state.0, state.1 - 1),
                LayerKind::Concat { skip } => {
                    let s = saved[&skip_index[skip.as_str()]];
                    if s.1 != state.1 {
                        return Err(Error::Graph(format!("layer {i}: concat across resolutions")));
                    }
                    (s.0 + state.0, state.1)
                }
                LayerKind::Add { skip, .. } => {
                    let s = saved[&skip_index[skip.as_str()]];
                    if s != state {
                        return Err(Error::Graph(format!("layer {i}: add of {s:?} and {state:?}")));
                    }
                    state
                }
                LayerKind::CropTo { skip } => {
                    let s = saved[&skip_index[skip.as_str()]];
                    if s.1 != state.1 {
                        return Err(Error::Graph(format!("layer {i}: crop_to across resolutions")));
                    }
                    state
                }
            };
            register(&mut saved, i as i64, state);
        }
        if 1i64 << state.1.max(0) != self.scale as i64 || state.1 < 0 {
            return Err(Error::Graph(format!(
                "graph resamples by 2^{} but declares scale {}",
                state.1, self.scale
            )));
        }
        Ok(state.0)
    }

    fn conv_params<'w>(&self, i: usize, w: &'w WeightStore) -> Result<(&'w Tensor, &'w [f32])> {
        let l = &self.layers[i];
        let name = l
            .weight
            .as_deref()
            .ok_or_else(|| Error::Graph(format!("layer {i}: conv without weight name")))?;
        let wt = w
            .get(name)
            .ok_or_else(|| Error::Graph(format!("layer {i}: weight `{name}` not in store")))?;
        let bias = match l.bias.as_deref() {
            Some(b) => {
                let t = w
                    .get(b)
                    .ok_or_else(|| Error::Graph(format!("layer {i}: bias `{b}` not in store")))?;
                if t.dims.len() != 1 {
                    return Err(Error::Graph(format!("layer {i}: bias `{b}` must be 1-D")));
                }
                t.data.as_slice()
            }
            None => &[],
        };
        Ok((wt, bias))
    }

    /// Context (input pixels) a single output pixel depends on, per side.
    pub fn receptive_radius(&self) -> usize {
        let mut res = 1.0f64; // pixels per input pixel at the current layer
        let mut radius = 0.0f64;
        for l in &self.layers {
            match l.kind {
                LayerKind::Conv3x3 => radius += 1.0 / res,
                LayerKind::NearestUpsample => res *= 2.0,
                LayerKind::Avgpool => {
                    radius += 1.0 / res;
                    res /= 2.0;
                }
                _ => {}
            }
        }
        radius.ceil() as usize + 1
    }

    fn max_pool_depth(&self) -> u32 {
        let mut depth = 0i32;
        let mut max = 0;
        for l in &self.layers {
            match l.kind {
                LayerKind::Avgpool => {
                    depth += 1;
                    max = max.max(depth);
                }
                LayerKind::NearestUpsample => depth -= 1,
                _ => {}
            }
        }
        max as u32
    }
}

/// Executes the graph, returning the final activation and any requested taps.
fn execute<'g>(g: &'g NetworkGraph, w: &WeightStore, input: Tensor, taps: &[usize]) -> Result<(Tensor, Vec<Tensor>)> {
    let mut saved: HashMap<&'g str, Tensor> = HashMap::new();
    let save = |saved: &mut HashMap<&'g str, Tensor>, at: i64, t: &Tensor| {
        for s in g.skips.iter().filter(|s| s.from == at) {
            saved.insert(s.id.as_str(), t.clone());
        }
    };
    let mut features = Vec::new();
    let mut cur = input;
    save(&mut saved, -1, &cur);
    for (i, l) in g.layers.iter().enumerate() {
        let missing = |skip: &str| Error::Graph(format!("layer {i}: skip `{skip}` unavailable"));
        cur = match &l.kind {
            LayerKind::Conv3x3 | LayerKind::Conv1x1 => {
                let (wt, bias) = g.conv_params(i, w)?;
                let zero;
                let bias = if bias.is_empty() {
                    zero = vec![0.0; wt.dims[0]];
                    &zero[..]
                } else {
                    bias
                };
                conv2d(&cur, wt, bias)?
            }
            LayerKind::LeakyRelu { slope } => leaky_relu(cur, *slope),
            LayerKind::NearestUpsample => upsample_nearest2(&cur)?,
            LayerKind::Avgpool => avgpool2(&cur)?,
            LayerKind::Concat { skip } => {
                let s = saved.remove(skip.as_str()).ok_or_else(|| missing(skip))?;
                concat(&s, &cur)?
            }
            LayerKind::Add { skip, beta } => {
                let s = saved.remove(skip.as_str()).ok_or_else(|| missing(skip))?;
                add_scaled(&s, &cur, *beta)?
            }
            LayerKind::CropTo { skip } => {
                let s = saved.get(skip.as_str()).ok_or_else(|| missing(skip))?;
                let (_, h, wd) = s.chw()?;
                crop_to(&cur, h, wd)?
            }
        };
        if taps.contains(&i) {
            features.push(cur.clone());
        }
        save(&mut saved, i as i64, &cur);
    }
    Ok((cur, features))
}

/// Runs a validated graph on an arbitrary activation.
pub fn run_graph(g: &NetworkGraph, w: &WeightStore, input: Tensor) -> Result<Tensor> {
    Ok(execute(g, w, input, &[])?.0)
}

/// Activations at the graph's declared feature layers.
pub fn run_features(g: &NetworkGraph, w: &WeightStore, img: &GrayImage) -> Result<Vec<Tensor>> {
    g.check_structure()?;
    if g.features.is_empty() {
        return Err(Error::Graph("graph declares no feature layers".into()));
    }
    Ok(execute(g, w, Tensor::from_image(img), &g.features)?.1)
}

/// Minimum tile side accepted by [`run_generator`].
pub const MIN_TILE: usize = 32;
/// Overlap between neighbouring tiles, in input pixels.
pub const TILE_OVERLAP: usize = 8;

/// ×4 super-resolution of `img`. With `tile`, the input is processed in
/// overlapping tiles, each padded with enough context to cover the graph's
/// receptive field, so tiled output equals the untiled output.
pub fn run_generator(g: &NetworkGraph, w: &WeightStore, img: &GrayImage, tile: Option<usize>) -> Result<GrayImage> {
    if g.scale != 4 {
        return Err(Error::Graph(format!("generator must declare scale 4, got {}", g.scale)));
    }
    let out_ch = g.validate(w)?;
    if out_ch != 1 {
        return Err(Error::Graph(format!("generator must emit one channel, got {out_ch}")));
    }
    let (wd, ht) = img.dims();
    let Some(tile) = tile.filter(|&t| t < wd.max(ht)) else {
        return run_graph(g, w, Tensor::from_image(img))?.to_image();
    };
    if tile < MIN_TILE {
        return Err(Error::arg(format!("tile must be >= {MIN_TILE}, got {tile}")));
    }
    let s = g.scale as usize;
    let align = 1usize << g.max_pool_depth();
    let context = g.receptive_radius().next_multiple_of(align);
    let step = tile - TILE_OVERLAP;
    let starts = |n: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (0..).map(|k| k * step).take_while(|&p| p + tile < n).collect();
        v.push(n.saturating_sub(tile));
        v.dedup();
        v
    };
    let (ow, oh) = (wd * s, ht * s);
    let mut out = vec![0.0f64; ow * oh];
    let mut covered = vec![false; ow * oh];
    for &y0 in &starts(ht) {
        for &x0 in &starts(wd) {
            let (x1, y1) = ((x0 + tile).min(wd), (y0 + tile).min(ht));
            let cx0 = x0.saturating_sub(context) / align * align;
            let cy0 = y0.saturating_sub(context) / align * align;
            let cx1 = (x1 + context).min(wd);
            let cy1 = (y1 + context).min(ht);
            let crop = img.crop(cx0, cy0, cx1 - cx0, cy1 - cy0)?;
            let res = run_graph(g, w, Tensor::from_image(&crop))?;
            let (_, rh, rw) = res.chw()?;
            let ramp = (TILE_OVERLAP * s) as f64;
            for oy in y0 * s..y1 * s {
                for ox in x0 * s..x1 * s {
                    let v = res.data[(oy - cy0 * s) * rw + (ox - cx0 * s)] as f64;
                    let idx = oy * ow + ox;
                    if !covered[idx] {
                        out[idx] = v;
                        covered[idx] = true;
                        continue;
                    }
                    let wx = if x0 > 0 { ((ox - x0 * s) as f64 + 0.5) / ramp } else { 1.0 };
                    let wy = if y0 > 0 { ((oy - y0 * s) as f64 + 0.5) / ramp } else { 1.0 };
                    let a = wx.min(wy).clamp(0.0, 1.0);
                    // lerp form keeps identical contributions bit-exact
                    out[idx] += a * (v - out[idx]);
                }
            }
            debug_assert_eq!(rh, (cy1 - cy0) * s);
        }
    }
    GrayImage::new(ow, oh, out)
}

/// Per-pixel realness logits (`1 × H × W`) from a U-Net discriminator.
pub fn run_discriminator(d: &NetworkGraph, w: &WeightStore, img: &GrayImage) -> Result<Tensor> {
    if d.scale != 1 {
        return Err(Error::Graph(format!("discriminator must declare scale 1, got {}", d.scale)));
    }
    let out_ch = d.validate(w)?;
    if out_ch != 1 {
        return Err(Error::Graph(format!("discriminator must emit one channel, got {out_ch}")));
    }
    let out = run_graph(d, w, Tensor::from_image(img))?;
    let (_, h, wd) = out.chw()?;
    if (wd, h) != img.dims() {
        return Err(Error::Graph(format!(
            "realness map {wd}x{h} does not match input {}x{}",
            img.width(),
            img.height()
        )));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Builders

/// Accumulates layers, skips and parameter shapes while tracking channels.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    layers: Vec<LayerSpec>,
    skips: Vec<SkipDecl>,
    params: Vec<ParamShape>,
    channels: Vec<usize>,
    skip_channels: HashMap<String, usize>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self {
            channels: vec![1],
            ..Default::default()
        }
    }

    fn current(&self) -> usize {
        *self.channels.last().unwrap()
    }

    fn push(&mut self, kind: LayerKind, weight: Option<String>, bias: Option<String>, ch: usize) -> &mut Self {
        self.layers.push(LayerSpec { kind, weight, bias });
        self.channels.push(ch);
        self
    }

    /// Registers the current activation as skip `id`.
    pub fn save(&mut self, id: impl Into<String>) -> &mut Self {
        let id = id.into();
        self.skip_channels.insert(id.clone(), self.current());
        self.skips.push(SkipDecl {
            id,
            from: self.layers.len() as i64 - 1,
        });
        self
    }

    pub fn conv(&mut self, name: &str, k: usize, out: usize) -> &mut Self {
        let kind = if k == 3 { LayerKind::Conv3x3 } else { LayerKind::Conv1x1 };
        let (wn, bn) = (format!("{name}.weight"), format!("{name}.bias"));
        self.params.push(ParamShape {
            name: wn.clone(),
            dims: vec![out, self.current(), k, k],
        });
        self.params.push(ParamShape {
            name: bn.clone(),
            dims: vec![out],
        });
        self.push(kind, Some(wn), Some(bn), out)
    }

    pub fn lrelu(&mut self, slope: f32) -> &mut Self {
        let c = self.current();
        self.push(LayerKind::LeakyRelu { slope }, None, None, c)
    }

    pub fn upsample(&mut self) -> &mut Self {
        let c = self.current();
        self.push(LayerKind::NearestUpsample, None, None, c)
    }

    pub fn avgpool(&mut self) -> &mut Self {
        let c = self.current();
        self.push(LayerKind::Avgpool, None, None, c)
    }

    pub fn concat(&mut self, skip: &str) -> &mut Self {
        let c = self.current() + self.skip_channels[skip];
        self.push(LayerKind::Concat { skip: skip.into() }, None, None, c)
    }

    pub fn add(&mut self, skip: &str, beta: f32) -> &mut Self {
        let c = self.current();
        self.push(
            LayerKind::Add {
                skip: skip.into(),
                beta,
            },
            None,
            None,
            c,
        )
    }

    pub fn crop_to(&mut self, skip: &str) -> &mut Self {
        let c = self.current();
        self.push(LayerKind::CropTo { skip: skip.into() }, None, None, c)
    }

    pub fn feature(&mut self) -> usize {
        self.layers.len() - 1
    }

    pub fn finish(self, scale: u32, features: Vec<usize>) -> (NetworkGraph, Vec<ParamShape>) {
        (
            NetworkGraph {
                layers: self.layers,
                skips: self.skips,
                scale,
                features,
            },
            self.params,
        )
    }
}

/// Generator sizing. Defaults: 6 RRDB blocks, 32 features, β = 0.2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub blocks: usize,
    pub features: usize,
    /// Channels added by each dense-block convolution.
    pub growth: usize,
    pub beta: f32,
    pub slope: f32,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            blocks: 6,
            features: 32,
            growth: 16,
            beta: 0.2,
            slope: 0.2,
        }
    }
}

fn dense_block(b: &mut GraphBuilder, prefix: &str, cfg: &GeneratorConfig) {
    let nf = cfg.features;
    b.save(format!("{prefix}.res"));
    b.save(format!("{prefix}.cat0"));
    for k in 1..=4 {
        b.conv(&format!("{prefix}.conv{k}"), 3, cfg.growth).lrelu(cfg.slope);
        b.concat(&format!("{prefix}.cat{}", k - 1));
        if k < 4 {
            b.save(format!("{prefix}.cat{k}"));
        }
    }
    b.conv(&format!("{prefix}.conv5"), 3, nf);
    b.add(&format!("{prefix}.res"), cfg.beta);
}

/// Residual-in-residual dense block: three dense blocks inside a scaled
/// residual connection.
fn rrdb(b: &mut GraphBuilder, prefix: &str, cfg: &GeneratorConfig) {
    b.save(format!("{prefix}.res"));
    for j in 1..=3 {
        dense_block(b, &format!("{prefix}.rdb{j}"), cfg);
    }
    b.add(&format!("{prefix}.res"), cfg.beta);
}

/// RRDB generator: shallow conv, RRDB trunk with a long skip, two
/// nearest-upsample + conv stages (×4), and a reconstruction head.
pub fn rrdb_generator(cfg: &GeneratorConfig) -> (NetworkGraph, Vec<ParamShape>) {
    let nf = cfg.features;
    let mut b = GraphBuilder::new();
    b.conv("conv_first", 3, nf).save("trunk");
    for i in 0..cfg.blocks {
        rrdb(&mut b, &format!("body.{i}"), cfg);
    }
    b.conv("conv_body", 3, nf).add("trunk", 1.0);
    b.upsample().conv("conv_up1", 3, nf).lrelu(cfg.slope);
    b.upsample().conv("conv_up2", 3, nf).lrelu(cfg.slope);
    b.conv("conv_hr", 3, nf).lrelu(cfg.slope);
    b.conv("conv_last", 3, 1);
    b.finish(4, Vec::new())
}

/// Graph that reduces to nearest-neighbour ×4 when given [`identity_weights`].
pub fn collapse_generator() -> (NetworkGraph, Vec<ParamShape>) {
    let mut b = GraphBuilder::new();
    b.upsample().conv("id1", 3, 1).upsample().conv("id2", 3, 1);
    b.finish(4, Vec::new())
}

/// Delta kernels and zero biases for every parameter (square 1→1 convs only).
pub fn identity_weights(shapes: &[ParamShape]) -> Result<WeightStore> {
    let mut store = WeightStore::new();
    for p in shapes {
        let t = match p.dims[..] {
            [1, 1, k, _] => {
                let mut data = vec![0.0; k * k];
                data[k * k / 2] = 1.0;
                Tensor::new(p.dims.clone(), data)?
            }
            [_] => Tensor::zeros(p.dims.clone()),
            _ => return Err(Error::Graph(format!("no identity for `{}` with dims {:?}", p.name, p.dims))),
        };
        store.insert(p.name.clone(), t)?;
    }
    Ok(store)
}

/// U-Net discriminator: two avgpool stages down, nearest upsampling back,
/// skip concatenation at each level, one logit per pixel.
pub fn unet_discriminator(features: usize) -> (NetworkGraph, Vec<ParamShape>) {
    let nf = features;
    let slope = 0.2;
    let mut b = GraphBuilder::new();
    b.conv("d.conv0", 3, nf).lrelu(slope).save("e0").save("e0.size");
    b.avgpool().conv("d.conv1", 3, 2 * nf).lrelu(slope).save("e1").save("e1.size");
    b.avgpool().conv("d.conv2", 3, 4 * nf).lrelu(slope);
    b.upsample().crop_to("e1.size").concat("e1");
    b.conv("d.conv3", 3, 2 * nf).lrelu(slope);
    b.upsample().crop_to("e0.size").concat("e0");
    b.conv("d.conv4", 3, nf).lrelu(slope);
    b.conv("d.conv5", 3, nf).lrelu(slope);
    b.conv("d.out", 3, 1);
    b.finish(1, Vec::new())
}

/// Small convolutional feature extractor for the network perceptual loss.
pub fn feature_extractor(features: usize) -> (NetworkGraph, Vec<ParamShape>) {
    let mut b = GraphBuilder::new();
    b.conv("f.conv0", 3, features).lrelu(0.2);
    let f0 = b.feature();
    b.avgpool().conv("f.conv1", 3, 2 * features).lrelu(0.2);
    let f1 = b.feature();
    b.upsample().conv("f.out", 1, 1);
    b.finish(1, vec![f0, f1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{resize, ResampleFilter};
    use crate::rng::seeded_image;

    fn random_tensor(dims: Vec<usize>, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        Tensor::new(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Six nested loops, reflect indexing done per tap.
    fn conv_oracle(x: &Tensor, w: &Tensor, b: &[f32]) -> Vec<f64> {
        let (c, h, wd) = x.chw().unwrap();
        let (oc, k) = (w.dims()[0], w.dims()[2]);
        let r = (k / 2) as isize;
        let mut out = vec![0.0f64; oc * h * wd];
        for o in 0..oc {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b[o] as f64;
                    for i in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = reflect(y as isize + ky as isize - r, h);
                                let sx = reflect(xx as isize + kx as isize - r, wd);
                                acc += w.data()[((o * c + i) * k + ky) * k + kx] as f64
                                    * x.data()[(i * h + sy) * wd + sx] as f64;
                            }
                        }
                    }
                    out[(o * h + y) * wd + xx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_oracle() {
        let x = random_tensor(vec![4, 16, 16], 1);
        let w = random_tensor(vec![8, 4, 3, 3], 2);
        let b: Vec<f32> = (0..8).map(|i| i as f32 * 0.1 - 0.4).collect();
        let got = conv2d(&x, &w, &b).unwrap();
        let want = conv_oracle(&x, &w, &b);
        assert_eq!(got.dims(), &[8, 16, 16]);
        for (g, o) in got.data().iter().zip(&want) {
            assert!((*g as f64 - o).abs() <= 1e-5);
        }
    }

    #[test]
    fn vector_and_portable_convs_agree_bitwise() {
        for (c, oc, n, k) in [(3, 9, 13, 3), (4, 8, 16, 3), (1, 1, 7, 3), (5, 16, 11, 1)] {
            let x = random_tensor(vec![c, n, n + 2], c as u64);
            let w = random_tensor(vec![oc, c, k, k], oc as u64);
            let b: Vec<f32> = (0..oc).map(|i| i as f32 * 0.05).collect();
            let fast = conv2d_impl(&x, &w, &b, true).unwrap();
            let slow = conv2d_impl(&x, &w, &b, false).unwrap();
            assert!(fast.data().iter().zip(slow.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn conv_identity_and_affine() {
        let img = seeded_image(12, 9, 4);
        let x = Tensor::from_image(&img);
        let mut delta = vec![0.0; 9];
        delta[4] = 1.0;
        let w = Tensor::new(vec![1, 1, 3, 3], delta).unwrap();
        assert_eq!(conv2d(&x, &w, &[0.0]).unwrap(), x);

        let c = Tensor::from_image(&GrayImage::constant(8, 8, 0.5).unwrap());
        let w1 = Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let out = conv2d(&c, &w1, &[-0.5]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));

        let bad = Tensor::new(vec![1, 2, 3, 3], vec![0.0; 18]).unwrap();
        assert!(matches!(conv2d(&x, &bad, &[0.0]), Err(Error::Graph(_))));
    }

    #[test]
    fn weight_file_round_trip_and_errors() {
        let mut store = WeightStore::new();
        let mut delta = vec![0.0; 9];
        delta[4] = 1.0;
        store.insert("delta", Tensor::new(vec![1, 1, 3, 3], delta.clone()).unwrap()).unwrap();
        let bytes = store.to_bytes();
        let back = load_weights(&bytes).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.get("delta").unwrap().data(), &delta[..]);
        assert_eq!(back.to_bytes(), bytes);

        for cut in 8..bytes.len() {
            match load_weights(&bytes[..cut]) {
                Err(Error::Load { tensor, .. }) => assert!(tensor == "delta" || tensor == "#0", "{tensor}"),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
        assert!(matches!(load_weights(b"NNW0\0\0\0\0"), Err(Error::Load { .. })));

        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(load_weights(&nan), Err(Error::Load { tensor, .. }) if tensor == "delta"));

        let mut dup = store.clone();
        assert!(dup.insert("delta", Tensor::zeros(vec![1])).is_err());
        let mut twice = bytes.clone();
        twice[4] = 2;
        twice.extend_from_slice(&bytes[8..]);
        assert!(matches!(load_weights(&twice), Err(Error::Load { .. })));
    }

    #[test]
    fn large_store_reserializes_identically() {
        let shapes: Vec<ParamShape> = (0..10)
            .map(|i| ParamShape {
                name: format!("t{i}"),
                dims: vec![64, 64, 8, 8],
            })
            .collect();
        let store = WeightStore::random(&shapes, 9, 1.0);
        let bytes = store.to_bytes();
        assert!(bytes.len() > 10_000_000);
        assert_eq!(load_weights(&bytes).unwrap().to_bytes(), bytes);
    }

    #[test]
    fn graph_structure_checks() {
        let (g, shapes) = rrdb_generator(&GeneratorConfig {
            blocks: 1,
            features: 8,
            growth: 4,
            ..Default::default()
        });
        let w = WeightStore::random(&shapes, 1, 0.1);
        assert_eq!(g.validate(&w).unwrap(), 1);
        assert_eq!(NetworkGraph::from_json(&g.to_json()).unwrap(), g);

        let mut twice = g.clone();
        twice.layers.push(LayerSpec {
            kind: LayerKind::Add {
                skip: "trunk".into(),
                beta: 1.0,
            },
            weight: None,
            bias: None,
        });
        assert!(twice.check_structure().is_err());

        let mut missing = g.clone();
        missing.layers[0].weight = Some("nope".into());
        assert!(matches!(missing.validate(&w), Err(Error::Graph(_))));

        let bad_ref = NetworkGraph {
            layers: vec![LayerSpec {
                kind: LayerKind::Concat { skip: "later".into() },
                weight: None,
                bias: None,
            }],
            skips: vec![SkipDecl {
                id: "later".into(),
                from: 0,
            }],
            scale: 1,
            features: vec![],
        };
        assert!(bad_ref.check_structure().is_err());
    }

    #[test]
    fn manifest_json_shape() {
        let text = r#"{
            "layers": [
                {"kind": "nearest_upsample"},
                {"kind": "conv3x3", "weight": "a.weight", "bias": "a.bias"},
                {"kind": "leaky_relu", "params": {"slope": 0.2}},
                {"kind": "nearest_upsample"},
                {"kind": "add", "params": {"skip": "x", "beta": 0.0}}
            ],
            "skips": [{"id": "x", "from": 2}],
            "scale": 4
        }"#;
        let g = NetworkGraph::from_json(text).unwrap();
        assert_eq!(g.layers.len(), 5);
        assert_eq!(g.layers[2].kind, LayerKind::LeakyRelu { slope: 0.2 });
        // add across resolutions is caught at validation
        let mut w = WeightStore::new();
        w.insert("a.weight", Tensor::zeros(vec![1, 1, 3, 3])).unwrap();
        w.insert("a.bias", Tensor::zeros(vec![1])).unwrap();
        assert!(g.validate(&w).is_err());
    }

    #[test]
    fn collapse_equals_nearest() {
        let (g, shapes) = collapse_generator();
        let w = identity_weights(&shapes).unwrap();
        let img = seeded_image(16, 12, 3);
        let out = run_generator(&g, &w, &img, None).unwrap();
        let near = resize(&img, 64, 48, ResampleFilter::Nearest).unwrap();
        assert_eq!(out.dims(), (64, 48));
        for (a, b) in out.data().iter().zip(near.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn zero_beta_is_identity_path() {
        let cfg = GeneratorConfig {
            blocks: 1,
            features: 4,
            growth: 2,
            beta: 0.0,
            slope: 0.2,
        };
        let mut b = GraphBuilder::new();
        b.conv("in", 3, cfg.features);
        rrdb(&mut b, "blk", &cfg);
        let (g, shapes) = b.finish(1, Vec::new());
        let w = WeightStore::random(&shapes, 4, 1.0);
        let x = Tensor::from_image(&seeded_image(10, 10, 1));
        let out = run_graph(&g, &w, x.clone()).unwrap();
        let first = conv2d(&x, w.get("in.weight").unwrap(), w.get("in.bias").unwrap().data()).unwrap();
        assert_eq!(out, first);
    }

    #[test]
    fn generator_tiling_matches_full() {
        let cfg = GeneratorConfig {
            blocks: 1,
            features: 8,
            growth: 4,
            ..Default::default()
        };
        let (g, shapes) = rrdb_generator(&cfg);
        let w = WeightStore::random(&shapes, 77, 1.0);
        let img = seeded_image(72, 56, 2);
        let full = run_generator(&g, &w, &img, None).unwrap();
        assert_eq!(full.dims(), (288, 224));
        for tile in [32, 40] {
            let tiled = run_generator(&g, &w, &img, Some(tile)).unwrap();
            let worst = full
                .data()
                .iter()
                .zip(tiled.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-4, "tile {tile}: {worst}");
        }
        assert!(run_generator(&g, &w, &img, Some(16)).is_err());
    }

    #[test]
    fn discriminator_shapes_and_zero_weights() {
        let (d, shapes) = unet_discriminator(4);
        let w = WeightStore::random(&shapes, 3, 1.0);
        for n in [64, 96, 50] {
            let img = seeded_image(n, n + 6, n as u64);
            let logits = run_discriminator(&d, &w, &img).unwrap();
            assert_eq!(logits.dims(), &[1, n + 6, n]);
            assert!(logits.data().iter().all(|v| v.is_finite()));
        }
        let mut zero = WeightStore::new();
        for p in &shapes {
            let mut t = Tensor::zeros(p.dims.clone());
            if p.name == "d.out.bias" {
                t = Tensor::new(vec![1], vec![0.37]).unwrap();
            }
            zero.insert(p.name.clone(), t).unwrap();
        }
        let logits = run_discriminator(&d, &zero, &seeded_image(64, 64, 1)).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.37));

        let a = run_discriminator(&d, &w, &seeded_image(64, 64, 8)).unwrap();
        let b = run_discriminator(&d, &w, &seeded_image(64, 64, 8)).unwrap();
        assert_eq!(a.checksum(), b.checksum());
    }
}
