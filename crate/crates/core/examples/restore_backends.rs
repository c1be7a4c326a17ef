//! Restores one payload with every classical backend and a few denoisers,
//! printing PSNR and SSIM against the original.
//!
//! `cargo run --example restore_backends [OUT_DIR]`

use std::path::{Path, PathBuf};

use xraypipe::compress::{compress, CompressConfig};
use xraypipe::imaging::{write_image, BitDepth};
use xraypipe::metrics::{psnr, ssim};
use xraypipe::phantom::{phantom, PhantomSpec};
use xraypipe::restore::{Backend, Denoiser, RestoreConfig, Restorer};

pub fn run(out: &Path) -> xraypipe::Result<()> {
    std::fs::create_dir_all(out)?;
    let clean = phantom(&PhantomSpec::new(512, 8))?;
    let payload = compress(&clean, &CompressConfig::default())?;
    for backend in Backend::CLASSICAL {
        for name in ["none", "median", "bilateral:1.5,0.05"] {
            let d: Denoiser = name.parse()?;
            let restorer = Restorer::new(&RestoreConfig::new(backend.clone(), d))?;
            let img = restorer.restore(&payload)?;
            println!(
                "{:<9} {:<18} {:6.2} dB  ssim {:.4}",
                backend.name(),
                name,
                psnr(&img, &clean)?,
                ssim(&img, &clean)?
            );
            if d == Denoiser::None {
                write_image(&out.join(format!("restored_{}.png", backend.name())), &img, BitDepth::Eight)?;
            }
        }
    }
    Ok(())
}

fn main() -> xraypipe::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("xraypipe-restore"));
    run(&out)
}
