//! Blockwise DCT codec shared by the JPEG degradation stage and the payload
//! encoder.
//!
//! Samples are level-shifted into the `-128..128` range of an 8-bit JPEG,
//! transformed per 8×8 block, divided by the quality-scaled luminance table and
//! rounded. Images whose sides are not multiples of 8 are reflect-padded for
//! encoding and cropped back after decoding.

use crate::error::{Error, Result};
use crate::imaging::{reflect, GrayImage};
use crate::numerics::{
    dct8_forward, dct8_inverse, pack_coeffs, quality_to_table, unpack_coeffs, QuantBlock, QuantTable,
};

fn blocks_along(n: usize) -> usize {
    n.div_ceil(8)
}

pub fn block_count(width: usize, height: usize) -> usize {
    blocks_along(width) * blocks_along(height)
}

/// Quantized coefficient blocks in raster block order.
pub fn quantize_image(img: &GrayImage, q: u8) -> Result<Vec<QuantBlock>> {
    let table = quality_to_table(q, &QuantTable::luminance())?;
    let div = table.divisors();
    let (w, h) = img.dims();
    let (bw, bh) = (blocks_along(w), blocks_along(h));
    let mut blocks = Vec::with_capacity(bw * bh);
    for by in 0..bh {
        for bx in 0..bw {
            let mut samples = [0.0; 64];
            for y in 0..8 {
                let sy = reflect((by * 8 + y) as isize, h);
                for x in 0..8 {
                    let sx = reflect((bx * 8 + x) as isize, w);
                    samples[y * 8 + x] = img.get(sx, sy) * 255.0 - 128.0;
                }
            }
            let coeffs = dct8_forward(&samples);
            blocks.push(std::array::from_fn(|i| (coeffs[i] / div[i] as f64).round() as i32));
        }
    }
    Ok(blocks)
}

/// Reconstructs a `width`×`height` image from quantized blocks.
pub fn dequantize_image(blocks: &[QuantBlock], width: usize, height: usize, q: u8) -> Result<GrayImage> {
    let table = quality_to_table(q, &QuantTable::luminance())?;
    let div = table.divisors();
    let (bw, bh) = (blocks_along(width), blocks_along(height));
    if blocks.len() != bw * bh {
        return Err(Error::Decode {
            block: blocks.len().min(bw * bh),
            reason: format!("expected {} blocks for {width}x{height}, got {}", bw * bh, blocks.len()),
        });
    }
    let mut data = vec![0.0; width * height];
    for by in 0..bh {
        for bx in 0..bw {
            let block = &blocks[by * bw + bx];
            let coeffs = std::array::from_fn(|i| block[i] as f64 * div[i] as f64);
            let samples = dct8_inverse(&coeffs);
            for y in 0..8 {
                let py = by * 8 + y;
                if py >= height {
                    break;
                }
                for x in 0..8 {
                    let px = bx * 8 + x;
                    if px >= width {
                        break;
                    }
                    data[py * width + px] = (samples[y * 8 + x] + 128.0) / 255.0;
                }
            }
        }
    }
    GrayImage::new(width, height, data)
}

/// Packed coefficient stream for `img` at quality `q`.
pub fn encode(img: &GrayImage, q: u8) -> Result<Vec<u8>> {
    Ok(pack_coeffs(&quantize_image(img, q)?))
}

pub fn decode(packed: &[u8], width: usize, height: usize, q: u8) -> Result<GrayImage> {
    dequantize_image(&unpack_coeffs(packed)?, width, height, q)
}
