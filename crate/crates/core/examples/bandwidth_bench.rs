//! Compares simulated raw and compressed transfer times over a few links
//! and writes the benchmark CSV and SVG chart for a small corpus.
//!
//! `cargo run --example bandwidth_bench [OUT_DIR]`

use std::path::{Path, PathBuf};

use xraypipe::cli::{cmd_bench, PhantomSet, RunConfig};
use xraypipe::transport::{simulate_transfer, LinkSpec};

pub fn run(out: &Path) -> xraypipe::Result<()> {
    let cfg = RunConfig {
        phantoms: PhantomSet {
            count: 4,
            ..Default::default()
        },
        output_dir: out.to_path_buf(),
        ..Default::default()
    };
    let rows = cmd_bench(&cfg, 1)?;
    let mean = rows.last().expect("aggregate row");
    println!(
        "mean payload {:.0} bytes of {:.0} raw, ratio {:.1}x",
        mean.payload_bytes, mean.raw_bytes, mean.ratio
    );
    for (name, link) in [
        ("rural 3G", LinkSpec::new(384e3, 0.3, 0)?),
        ("DSL", LinkSpec::new(8e6, 0.04, 0)?),
        ("fiber", LinkSpec::new(1e9, 0.005, 0)?),
    ] {
        let raw = simulate_transfer(mean.raw_bytes as u64, &link);
        let sent = simulate_transfer(mean.payload_bytes as u64, &link);
        println!("{name:<9} raw {raw:8.3} s  compressed {sent:8.3} s  saved {:5.1}%", 100.0 * (1.0 - sent / raw));
    }
    println!("wrote {}", out.join("bench.svg").display());
    Ok(())
}

fn main() -> xraypipe::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("xraypipe-bench"));
    run(&out)
}
