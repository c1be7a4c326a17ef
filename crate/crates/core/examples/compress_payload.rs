//! Compresses a 512x512 phantom to a 128x128 payload, with and without a
//! size budget, and decodes it again.
//!
//! `cargo run --example compress_payload [OUT_DIR]`

use std::path::{Path, PathBuf};

use xraypipe::compress::{compress, decode_payload, CompressConfig, CompressedPayload};
use xraypipe::metrics::compression_ratio;
use xraypipe::phantom::{phantom, PhantomSpec};

pub fn run(out: &Path) -> xraypipe::Result<()> {
    std::fs::create_dir_all(out)?;
    let img = phantom(&PhantomSpec::new(512, 5))?;
    let raw = img.width() * img.height();

    let free = compress(&img, &CompressConfig::default())?;
    let budget = CompressConfig {
        size_budget: Some(free.packed.len() * 3 / 4),
        ..Default::default()
    };
    let tight = compress(&img, &budget)?;
    for (name, p) in [("unconstrained", &free), ("budgeted", &tight)] {
        println!(
            "{name}: q={} {} bytes, ratio {:.1}x, crc {:08x}{}",
            p.quality,
            p.byte_len(),
            compression_ratio(raw, p.byte_len()),
            p.crc(),
            if p.over_budget { " (over budget)" } else { "" }
        );
    }

    let path = out.join("phantom.xrcp");
    std::fs::write(&path, tight.to_bytes())?;
    let back = CompressedPayload::from_bytes(&std::fs::read(&path)?)?;
    let small = decode_payload(&back)?;
    println!("decoded {}x{} from {}", small.width(), small.height(), path.display());
    Ok(())
}

fn main() -> xraypipe::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("xraypipe-compress"));
    run(&out)
}
