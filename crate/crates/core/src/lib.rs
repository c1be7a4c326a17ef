//! Desk-scale telemedicine pipeline for grayscale radiographs.
//!
//! The crate covers every step between a clean high-resolution image and a
//! scored reconstruction on the receiving side:
//!
//! - [`degrade`] synthesizes realistic low-quality inputs (blur, downsampling,
//!   Gaussian/Poisson noise, ringing, JPEG-style quantization), optionally in
//!   several rounds.
//! - [`compress`] is the sender: optional edge-preserving enhancement,
//!   downscaling and budget-aware quality selection into a [`compress::CompressedPayload`].
//! - [`transport`] frames payloads for the wire, moves them over TCP and models
//!   transfer time on a link.
//! - [`restore`] is the receiver: decode, upscale (classical filters or an RRDB
//!   generator run by [`inference`]), denoise.
//! - [`metrics`] scores results (PSNR, SSIM, L1, perceptual, adversarial and the
//!   weighted composite) and renders reports.
//!
//! Runnable walkthroughs for each capability live in the crate's `examples/`
//! directory (`cargo run --example <name>`); the `xraypipe` binary wires the
//! same calls behind subcommands.

pub mod cli;
pub mod codec;
pub mod compress;
pub mod degrade;
pub mod error;
pub mod imaging;
pub mod inference;
pub mod metrics;
pub mod numerics;
pub mod phantom;
pub mod report;
pub mod restore;
pub mod rng;
pub mod transport;

pub use error::{Error, Result};
pub use imaging::{GrayImage, Kernel2D, ResampleFilter};
