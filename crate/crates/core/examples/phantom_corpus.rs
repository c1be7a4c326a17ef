//! Generates a few synthetic chest phantoms and writes them as 8- and 16-bit
//! PNGs plus a PGM.
//!
//! `cargo run --example phantom_corpus [OUT_DIR]`

use std::path::{Path, PathBuf};

use xraypipe::imaging::{write_image, BitDepth};
use xraypipe::phantom::{corpus, phantom, PhantomSpec};

pub fn run(out: &Path) -> xraypipe::Result<()> {
    std::fs::create_dir_all(out)?;
    for (i, img) in corpus(3, 256, 11)?.iter().enumerate() {
        let (lo, hi) = img.min_max();
        println!("phantom {i}: {}x{} range [{lo:.3}, {hi:.3}]", img.width(), img.height());
        write_image(&out.join(format!("phantom_{i}.png")), img, BitDepth::Eight)?;
    }
    let noisy = phantom(&PhantomSpec::new(256, 11).with_noise(0.03))?;
    write_image(&out.join("phantom_noisy_16bit.png"), &noisy, BitDepth::Sixteen)?;
    write_image(&out.join("phantom_noisy.pgm"), &noisy, BitDepth::Eight)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> xraypipe::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("xraypipe-phantoms"));
    run(&out)
}
