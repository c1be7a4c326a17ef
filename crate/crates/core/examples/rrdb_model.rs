//! Builds the residual-in-residual dense generator, exports its manifest and
//! a seeded random weight file, reloads both and runs a 4x upscale.
//! The exported pair can be passed to `xraypipe restore --backend rrdb`.
//!
//! `cargo run --example rrdb_model [OUT_DIR]`

use std::path::{Path, PathBuf};
use std::time::Instant;

use xraypipe::inference::{rrdb_generator, run_generator, GeneratorConfig, NetworkGraph, Tensor, WeightStore};
use xraypipe::phantom::{phantom, PhantomSpec};

pub fn run(out: &Path) -> xraypipe::Result<()> {
    std::fs::create_dir_all(out)?;
    let cfg = GeneratorConfig {
        blocks: 2,
        ..Default::default()
    };
    let (graph, shapes) = rrdb_generator(&cfg);
    let weights = WeightStore::random(&shapes, 2024, 0.5);
    let manifest = out.join("generator.json");
    let weight_file = out.join("generator.nnw");
    std::fs::write(&manifest, graph.to_json())?;
    weights.save(&weight_file)?;

    let graph = NetworkGraph::load(&manifest)?;
    let weights = WeightStore::load(&weight_file)?;
    graph.validate(&weights)?;
    let params: usize = weights.names().map(|n| weights.get(n).map_or(0, |t| t.data().len())).sum();
    println!(
        "{} layers, {} tensors, {params} parameters, receptive radius {}",
        graph.layers.len(),
        weights.len(),
        graph.receptive_radius()
    );

    let lr = phantom(&PhantomSpec::new(64, 1))?;
    let t = Instant::now();
    // pass Some(tile) to bound memory on large inputs; output is identical
    let sr = run_generator(&graph, &weights, &lr, None)?;
    println!(
        "{}x{} -> {}x{} in {:.2?}, checksum {:08x}",
        lr.width(),
        lr.height(),
        sr.width(),
        sr.height(),
        t.elapsed(),
        Tensor::from_image(&sr).checksum()
    );
    Ok(())
}

fn main() -> xraypipe::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("xraypipe-model"));
    run(&out)
}
