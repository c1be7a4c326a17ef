//! Synthetic chest-radiograph phantoms used as a deterministic test corpus.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::add_gaussian_noise;
use crate::error::{Error, Result};
use crate::imaging::GrayImage;

/// Default phantom side length.
pub const DEFAULT_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub size: usize,
    pub seed: u64,
    /// Std-dev of additive Gaussian noise, 0 for a clean phantom.
    pub noise: f64,
}

impl PhantomSpec {
    pub fn new(size: usize, seed: u64) -> Self {
        Self { size, seed, noise: 0.0 }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }
}

fn smoothstep(edge: f64, width: f64, d: f64) -> f64 {
    // 1 inside (d < edge), 0 outside, linear ramp of `width` across the edge
    ((edge - d) / width + 0.5).clamp(0.0, 1.0)
}

struct Layout {
    body_rx: f64,
    body_ry: f64,
    lung_dx: f64,
    lung_rx: f64,
    lung_ry: f64,
    lung_cy: f64,
    rib_count: usize,
    rib_spacing: f64,
    rib_top: f64,
    rib_bend: f64,
    rib_width: f64,
    spine_width: f64,
    gradient: f64,
}

impl Layout {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        Self {
            body_rx: rng.random_range(0.40..0.46),
            body_ry: rng.random_range(0.44..0.48),
            lung_dx: rng.random_range(0.17..0.21),
            lung_rx: rng.random_range(0.12..0.15),
            lung_ry: rng.random_range(0.26..0.31),
            lung_cy: rng.random_range(-0.04..0.02),
            rib_count: rng.random_range(6..9),
            rib_spacing: rng.random_range(0.075..0.09),
            rib_top: rng.random_range(-0.32..-0.26),
            rib_bend: rng.random_range(0.6..1.1),
            rib_width: rng.random_range(0.012..0.02),
            spine_width: rng.random_range(0.035..0.05),
            gradient: rng.random_range(0.05..0.15),
        }
    }

    /// Attenuation at normalized coordinates `u, v ∈ [-0.5, 0.5]`.
    fn sample(&self, u: f64, v: f64, aa: f64) -> f64 {
        let mut val = 0.06 + self.gradient * (v + 0.5);

        let body = ((u / self.body_rx).powi(2) + (v / self.body_ry).powi(2)).sqrt();
        let body_in = smoothstep(1.0, aa / self.body_rx, body);
        val += 0.42 * body_in;

        for side in [-1.0, 1.0] {
            let lu = (u - side * self.lung_dx) / self.lung_rx;
            let lv = (v - self.lung_cy) / self.lung_ry;
            let lung = (lu * lu + lv * lv).sqrt();
            val -= 0.3 * smoothstep(1.0, aa / self.lung_rx, lung) * body_in;
        }

        let spine = smoothstep(self.spine_width, aa, u.abs());
        val += 0.3 * spine * body_in;

        for k in 0..self.rib_count {
            let center = self.rib_top + k as f64 * self.rib_spacing;
            // ribs sag toward the flanks
            let y = center + self.rib_bend * u * u;
            let band = smoothstep(self.rib_width, aa, (v - y).abs());
            val += 0.28 * band * body_in * smoothstep(self.body_rx * 0.9, aa, u.abs());
        }
        val.clamp(0.0, 1.0)
    }
}

/// Renders one phantom.
pub fn phantom(spec: &PhantomSpec) -> Result<GrayImage> {
    if spec.size < 8 {
        return Err(Error::arg(format!("phantom size must be >= 8, got {}", spec.size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let layout = Layout::random(&mut rng);
    let n = spec.size as f64;
    let aa = 1.5 / n;
    let img = GrayImage::from_fn(spec.size, spec.size, |x, y| {
        let u = (x as f64 + 0.5) / n - 0.5;
        let v = (y as f64 + 0.5) / n - 0.5;
        layout.sample(u, v, aa)
    })?;
    if spec.noise > 0.0 {
        add_gaussian_noise(&img, spec.noise, spec.seed ^ 0x5eed)
    } else {
        Ok(img)
    }
}

/// `count` phantoms with seeds derived from `seed`.
pub fn corpus(count: usize, size: usize, seed: u64) -> Result<Vec<GrayImage>> {
    (0..count as u64)
        .map(|i| phantom(&PhantomSpec::new(size, seed.wrapping_add(i))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_contrasty() {
        let a = phantom(&PhantomSpec::new(DEFAULT_SIZE, 3)).unwrap();
        assert_eq!(a.dims(), (256, 256));
        assert_eq!(a, phantom(&PhantomSpec::new(256, 3)).unwrap());
        assert_ne!(a, phantom(&PhantomSpec::new(256, 4)).unwrap());
        for img in corpus(20, 128, 100).unwrap() {
            let (lo, hi) = img.min_max();
            assert!(hi - lo >= 0.5, "range {lo}..{hi}");
        }
    }

    #[test]
    fn noisy_variant_differs() {
        let clean = phantom(&PhantomSpec::new(64, 1)).unwrap();
        let noisy = phantom(&PhantomSpec::new(64, 1).with_noise(0.05)).unwrap();
        assert_ne!(clean, noisy);
        assert!(phantom(&PhantomSpec::new(4, 1)).is_err());
    }
}
