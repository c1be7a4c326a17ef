//! Scalar and block math: Bessel J1, kernel builders, the 8×8 orthonormal DCT,
//! quantization tables and the coefficient packing format.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::Kernel2D;

// ---------------------------------------------------------------------------
// Bessel J1

/// Below this |x| the power series is used, above it the Hankel expansion.
const J1_SERIES_LIMIT: f64 = 12.0;

/// Bessel function of the first kind, order one.
pub fn bessel_j1(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::arg(format!("bessel_j1 needs a finite argument, got {x}")));
    }
    let ax = x.abs();
    let v = if ax <= J1_SERIES_LIMIT { j1_series(ax) } else { j1_asymptotic(ax) };
    Ok(if x < 0.0 { -v } else { v })
}

fn j1_series(x: f64) -> f64 {
    // sum_m (-1)^m (x/2)^(2m+1) / (m! (m+1)!)
    let half = 0.5 * x;
    let q = half * half;
    let mut term = half;
    let mut sum = term;
    for m in 1..200 {
        let m = m as f64;
        term *= -q / (m * (m + 1.0));
        sum += term;
        if term.abs() <= 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn j1_asymptotic(x: f64) -> f64 {
    // Hankel expansion with mu = 4 nu^2 = 4:
    // J1(x) ~ sqrt(2/(pi x)) (P cos chi - Q sin chi), chi = x - 3pi/4
    const MU: f64 = 4.0;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let odd = (2 * k - 1) as f64;
        term *= (MU - odd * odd) / (k as f64 * 8.0 * x);
        if term.abs() >= last {
            break;
        }
        last = term.abs();
        // a_k / x^k alternates between Q (odd k) and P (even k) with sign (-1)^floor(k/2)
        let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 1 {
            q += sign * term;
        } else {
            p += sign * term;
        }
        if term.abs() < 1e-17 {
            break;
        }
    }
    let chi = x - 0.75 * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

// ---------------------------------------------------------------------------
// Kernels

/// Isotropic Gaussian of side `2·ceil(3σ)+1`, normalized to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Result<Kernel2D> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as isize;
    let side = (2 * r + 1) as usize;
    let mut taps = Vec::with_capacity(side * side);
    for y in -r..=r {
        for x in -r..=r {
            let d2 = (x * x + y * y) as f64;
            taps.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    Kernel2D::new(side, taps)?.normalize()
}

/// Circular low-pass parameters for ringing synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SincSpec {
    /// Cutoff in radians per sample, in `(0, π]`.
    pub eta: f64,
    /// Kernel half-width in pixels.
    pub radius: usize,
}

impl SincSpec {
    pub fn new(eta: f64, radius: usize) -> Result<Self> {
        let spec = Self { eta, radius };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= PI) {
            return Err(Error::arg(format!("sinc cutoff must lie in (0, pi], got {}", self.eta)));
        }
        if self.radius < 1 {
            return Err(Error::arg("sinc radius must be >= 1"));
        }
        Ok(())
    }
}

/// `h(p,q) = η J1(η r) / (2π r)` with `r = √(p²+q²)`; the center uses the
/// limit `η²/(4π)`. Taps are left unnormalized.
pub fn sinc_kernel_raw(spec: SincSpec) -> Result<Kernel2D> {
    spec.validate()?;
    let r = spec.radius as isize;
    let side = spec.radius * 2 + 1;
    let mut taps = Vec::with_capacity(side * side);
    for q in -r..=r {
        for p in -r..=r {
            let dist = ((p * p + q * q) as f64).sqrt();
            let v = if dist == 0.0 {
                spec.eta * spec.eta / (4.0 * PI)
            } else {
                spec.eta / (2.0 * PI * dist) * bessel_j1(spec.eta * dist)?
            };
            taps.push(v);
        }
    }
    Kernel2D::new(side, taps)
}

/// [`sinc_kernel_raw`] rescaled to unit sum.
pub fn sinc_kernel(spec: SincSpec) -> Result<Kernel2D> {
    sinc_kernel_raw(spec)?.normalize()
}

// ---------------------------------------------------------------------------
// 8x8 DCT

pub type Block = [f64; 64];

fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let c = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        m
    })
}

/// Orthonormal 2D DCT-II of a row-major 8×8 block.
pub fn dct8_forward(block: &Block) -> Block {
    let m = dct_basis();
    let mut tmp = [0.0; 64];
    // rows
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| m[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| m[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

/// Inverse of [`dct8_forward`].
pub fn dct8_inverse(coeffs: &Block) -> Block {
    let m = dct_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| m[u][x] * coeffs[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| m[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Quantization

/// Zigzag scan: position `i` of the scan reads natural (row-major) index `ZIGZAG[i]`.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

/// Standard JPEG luminance table, natural order.
const LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// 64 quantizer divisors in natural (row-major) order, each in `1..=255`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantTable([u16; 64]);

impl QuantTable {
    pub fn luminance() -> Self {
        Self(LUMA_BASE)
    }

    pub fn new(divisors: [u16; 64]) -> Result<Self> {
        if divisors.iter().any(|&d| !(1..=255).contains(&d)) {
            return Err(Error::arg("quantizer divisors must lie in 1..=255"));
        }
        Ok(Self(divisors))
    }

    pub fn divisors(&self) -> &[u16; 64] {
        &self.0
    }

    /// Divisors in zigzag scan order.
    pub fn zigzag(&self) -> [u16; 64] {
        std::array::from_fn(|i| self.0[ZIGZAG[i]])
    }
}

pub fn check_quality(q: u8) -> Result<()> {
    if (1..=100).contains(&q) {
        Ok(())
    } else {
        Err(Error::arg(format!("quality must lie in 1..=100, got {q}")))
    }
}

/// IJG quality scaling: `scale = q < 50 ? 5000/q : 200 - 2q`,
/// `divisor = clamp(round(base·scale/100), 1, 255)`.
pub fn quality_to_table(q: u8, base: &QuantTable) -> Result<QuantTable> {
    check_quality(q)?;
    let q = q as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    Ok(QuantTable(base.0.map(|b| {
        let d = (b as u32 * scale + 50) / 100;
        d.clamp(1, 255) as u16
    })))
}

// ---------------------------------------------------------------------------
// Coefficient packing
//
// Stream layout: varint block count, then per block (zigzag order) a list of
// `varint(run + 1), svarint(value)` pairs for each non-zero coefficient, where
// `run` counts the zeros skipped since the previous one, closed by a single
// `0x00` end-of-block byte.

pub type QuantBlock = [i32; 64];

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    while v >= 0x80 {
        out.push((v as u8 & 0x7f) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn zigzag_sign(v: i32) -> u64 {
    ((v << 1) ^ (v >> 31)) as u32 as u64
}

fn unzigzag_sign(v: u32) -> i32 {
    ((v >> 1) as i32) ^ -((v & 1) as i32)
}

/// Packs quantized blocks (natural order) into the compact token stream.
pub fn pack_coeffs(blocks: &[QuantBlock]) -> Vec<u8> {
    let mut out = Vec::with_capacity(blocks.len() * 4 + 4);
    put_varint(&mut out, blocks.len() as u64);
    for block in blocks {
        let mut run = 0u64;
        for &idx in &ZIGZAG {
            let c = block[idx];
            if c == 0 {
                run += 1;
            } else {
                put_varint(&mut out, run + 1);
                put_varint(&mut out, zigzag_sign(c));
                run = 0;
            }
        }
        out.push(0);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn varint(&mut self, max_bytes: usize) -> std::result::Result<u64, &'static str> {
        let mut v = 0u64;
        for i in 0..max_bytes {
            let Some(&b) = self.bytes.get(self.pos) else {
                return Err("truncated varint");
            };
            self.pos += 1;
            v |= ((b & 0x7f) as u64) << (7 * i);
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err("varint too long")
    }
}

/// Inverse of [`pack_coeffs`]; rejects truncated, overlong or non-canonical streams.
pub fn unpack_coeffs(bytes: &[u8]) -> Result<Vec<QuantBlock>> {
    let mut rd = Reader { bytes, pos: 0 };
    let count = rd.varint(10).map_err(|reason| Error::Decode {
        block: 0,
        reason: format!("block count: {reason}"),
    })?;
    // every block needs at least its end-of-block byte
    if count > bytes.len() as u64 {
        return Err(Error::Decode {
            block: 0,
            reason: format!("declared {count} blocks in a {}-byte stream", bytes.len()),
        });
    }
    let mut blocks = Vec::with_capacity(count as usize);
    for bi in 0..count as usize {
        let err = |reason: String| Error::Decode { block: bi, reason };
        let mut block = [0i32; 64];
        let mut pos = 0usize;
        loop {
            let token = rd.varint(2).map_err(|r| err(format!("run: {r}")))?;
            if token == 0 {
                break;
            }
            let run = (token - 1) as usize;
            if pos + run >= 64 {
                return Err(err(format!("run of {run} overflows block at position {pos}")));
            }
            pos += run;
            let raw = rd.varint(5).map_err(|r| err(format!("value: {r}")))?;
            let raw = u32::try_from(raw).map_err(|_| err("value exceeds 32 bits".into()))?;
            let value = unzigzag_sign(raw);
            if value == 0 {
                return Err(err("explicit zero coefficient".into()));
            }
            block[ZIGZAG[pos]] = value;
            pos += 1;
        }
        blocks.push(block);
    }
    if rd.pos != bytes.len() {
        return Err(Error::Decode {
            block: count as usize,
            reason: format!("{} trailing bytes", bytes.len() - rd.pos),
        });
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Power-series oracle, summed until the terms vanish.
    fn j1_oracle(x: f64) -> f64 {
        let mut sum = 0.0;
        let mut fact_m = 1.0;
        let mut fact_m1 = 1.0;
        for m in 0..120 {
            if m > 0 {
                fact_m *= m as f64;
            }
            fact_m1 *= (m + 1) as f64;
            let t = (x / 2.0).powi(2 * m + 1) / (fact_m * fact_m1);
            sum += if m % 2 == 0 { t } else { -t };
        }
        sum
    }

    /// Bessel's integral `J1(x) = (1/π) ∫₀^π cos(τ − x sin τ) dτ`; the
    /// trapezoid rule converges geometrically for this periodic integrand.
    fn j1_integral(x: f64) -> f64 {
        let n = 2048;
        let h = PI / n as f64;
        let f = |t: f64| (t - x * t.sin()).cos();
        let inner: f64 = (1..n).map(|i| f(i as f64 * h)).sum();
        (inner + 0.5 * (f(0.0) + f(PI))) * h / PI
    }

    #[test]
    fn j1_matches_integral_beyond_series_range() {
        for i in 0..=400 {
            let x = 0.15 * i as f64;
            assert!((bessel_j1(x).unwrap() - j1_integral(x)).abs() <= 1e-9, "x={x}");
        }
    }

    #[test]
    fn j1_known_values() {
        assert_eq!(bessel_j1(0.0).unwrap(), 0.0);
        assert!((bessel_j1(1.0).unwrap() - 0.440_050_585_744_933_5).abs() < 1e-12);
        assert!(bessel_j1(3.831_705_97).unwrap().abs() <= 1e-7);
        assert!(bessel_j1(f64::NAN).is_err());
        assert!(bessel_j1(f64::INFINITY).is_err());
    }

    #[test]
    fn j1_matches_series_on_both_branches() {
        for i in 0..=400 {
            let x = i as f64 * 0.05;
            let got = bessel_j1(x).unwrap();
            assert!((got - j1_oracle(x)).abs() <= 1e-8, "x={x}");
        }
        // continuity across the switch
        let lo = bessel_j1(J1_SERIES_LIMIT).unwrap();
        let hi = bessel_j1(J1_SERIES_LIMIT + 1e-9).unwrap();
        assert!((lo - hi).abs() < 1e-9);
        // large argument vs. asymptotic leading term sanity
        let x = 45.0;
        let lead = (2.0 / (PI * x)).sqrt() * (x - 0.75 * PI).cos();
        assert!((bessel_j1(x).unwrap() - lead).abs() < 5e-3);
    }

    proptest! {
        #[test]
        fn j1_is_odd(x in -50.0f64..50.0) {
            prop_assert_eq!(bessel_j1(-x).unwrap(), -bessel_j1(x).unwrap());
        }

        #[test]
        fn quality_tables_are_monotone(q1 in 1u8..=100, q2 in 1u8..=100) {
            let base = QuantTable::luminance();
            let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
            let a = quality_to_table(lo, &base).unwrap();
            let b = quality_to_table(hi, &base).unwrap();
            prop_assert!(a.divisors().iter().zip(b.divisors()).all(|(x, y)| x >= y));
        }
    }

    #[test]
    fn gaussian_kernel_shapes() {
        let k = gaussian_kernel(1.0).unwrap();
        assert_eq!(k.size(), 7);
        assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // oracle: separable 1D sums of exp(-x^2/2) over -3..=3
        let s: f64 = (-3..=3).map(|x: i32| (-(x * x) as f64 / 2.0).exp()).sum();
        assert!((k.tap(0, 0) - 1.0 / (s * s)).abs() < 1e-12);
        assert!((k.tap(0, 0) - 0.159_24).abs() < 1e-5);
        assert_eq!(gaussian_kernel(0.5).unwrap().size(), 5);
        assert!(gaussian_kernel(0.0).is_err());
        assert!(gaussian_kernel(-1.0).is_err());

        for sigma in [0.4, 1.0, 2.3] {
            let k = gaussian_kernel(sigma).unwrap();
            let r = k.radius() as isize;
            for y in -r..=r {
                for x in -r..=r {
                    assert_eq!(k.tap(x, y), k.tap(-y, x));
                }
            }
        }
    }

    #[test]
    fn sinc_kernel_center_and_taps() {
        let spec = SincSpec::new(PI, 10).unwrap();
        let raw = sinc_kernel_raw(spec).unwrap();
        assert_eq!(raw.size(), 21);
        assert!((raw.tap(0, 0) - PI * PI / (4.0 * PI)).abs() < 1e-15);
        for q in -10isize..=10 {
            for p in -10isize..=10 {
                if p == 0 && q == 0 {
                    continue;
                }
                let r = ((p * p + q * q) as f64).sqrt();
                let want = PI / (2.0 * PI * r) * j1_integral(PI * r);
                assert!((raw.tap(p, q) - want).abs() <= 1e-9);
                assert_eq!(raw.tap(p, q), raw.tap(q, p));
                assert_eq!(raw.tap(p, q), raw.tap(-p, q));
            }
        }
        let k = sinc_kernel(spec).unwrap();
        assert!(k.is_normalized());
        assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(SincSpec::new(0.0, 3).is_err());
        assert!(SincSpec::new(3.5, 3).is_err());
        assert!(SincSpec::new(1.0, 0).is_err());
    }

    fn random_block(rng: &mut ChaCha8Rng) -> Block {
        std::array::from_fn(|_| rng.random_range(-128.0..128.0))
    }

    #[test]
    fn dct_constant_block() {
        let c = dct8_forward(&[128.0; 64]);
        assert!((c[0] - 1024.0).abs() < 1e-9);
        assert!(c[1..].iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn dct_round_trip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let b = random_block(&mut rng);
            let c = dct8_forward(&b);
            let back = dct8_inverse(&c);
            assert!(b.iter().zip(&back).all(|(x, y)| (x - y).abs() <= 1e-10));
            let es: f64 = b.iter().map(|v| v * v).sum();
            let ec: f64 = c.iter().map(|v| v * v).sum();
            assert!((es - ec).abs() <= 1e-9 * es.max(1.0));
        }
    }

    #[test]
    fn quality_scaling_rule() {
        let base = QuantTable::luminance();
        assert_eq!(quality_to_table(50, &base).unwrap(), base);
        let t100 = quality_to_table(100, &base).unwrap();
        assert!(t100.divisors().iter().all(|&d| d == 1));
        let t1 = quality_to_table(1, &base).unwrap();
        assert!(t1.divisors().iter().all(|&d| d == 255));
        // q = 75: scale 50 -> round(16*50/100) = 8
        assert_eq!(quality_to_table(75, &base).unwrap().divisors()[0], 8);
        assert!(quality_to_table(0, &base).is_err());
        assert!(quality_to_table(101, &base).is_err());
        assert_eq!(base.zigzag()[2], 12);
    }

    #[test]
    fn pack_all_zero_and_dc_only() {
        let zero = [0i32; 64];
        let bytes = pack_coeffs(&[zero]);
        assert_eq!(bytes, vec![1, 0]);
        assert_eq!(unpack_coeffs(&bytes).unwrap(), vec![zero]);

        let mut dc = [0i32; 64];
        dc[0] = 1024;
        assert_eq!(unpack_coeffs(&pack_coeffs(&[dc])).unwrap(), vec![dc]);

        let mut extreme = [0i32; 64];
        extreme[63] = i32::MAX;
        extreme[7] = -i32::MAX;
        assert_eq!(unpack_coeffs(&pack_coeffs(&[extreme])).unwrap(), vec![extreme]);
    }

    #[test]
    fn unpack_rejects_corruption() {
        let mut b = [0i32; 64];
        b[5] = -3;
        b[40] = 17;
        let stream = pack_coeffs(&[b, b, [0; 64]]);
        for cut in 0..stream.len() {
            assert!(unpack_coeffs(&stream[..cut]).is_err(), "prefix {cut} accepted");
        }
        let mut trailing = stream.clone();
        trailing.push(0);
        assert!(unpack_coeffs(&trailing).is_err());
        // run pointing past the block end
        match unpack_coeffs(&[1, 65, 2, 0]) {
            Err(Error::Decode { block, .. }) => assert_eq!(block, 0),
            other => panic!("{other:?}"),
        }
        // explicit zero value
        assert!(unpack_coeffs(&[1, 1, 0, 0]).is_err());
    }

    fn sparse_block(rng: &mut ChaCha8Rng) -> QuantBlock {
        let density = rng.random_range(0.0..1.0);
        std::array::from_fn(|_| {
            if rng.random_bool(density) {
                let mag: i32 = match rng.random_range(0..3) {
                    0 => rng.random_range(1..4),
                    1 => rng.random_range(1..300),
                    _ => rng.random_range(1..i32::MAX),
                };
                if rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            } else {
                0
            }
        })
    }

    #[test]
    fn pack_fuzz_round_trip_and_sparsity_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let blocks: Vec<QuantBlock> = (0..10_000).map(|_| sparse_block(&mut rng)).collect();
        assert_eq!(unpack_coeffs(&pack_coeffs(&blocks)).unwrap(), blocks);
        for b in blocks.iter().take(2000) {
            let mut sparser = *b;
            for c in sparser.iter_mut() {
                if rng.random_bool(0.3) {
                    *c = 0;
                }
            }
            assert!(pack_coeffs(&[sparser]).len() <= pack_coeffs(&[*b]).len());
        }
    }
}
