//! Runs the whole pipeline (degrade, compress, frame, link, restore, score)
//! on a small phantom corpus and prints the backend ranking table.
//!
//! `cargo run --example end_to_end [OUT_DIR]`

use std::path::{Path, PathBuf};

use xraypipe::cli::{cmd_pipeline, PhantomSet, RunConfig};
use xraypipe::degrade::DegradationPlan;

pub fn run(out: &Path) -> xraypipe::Result<()> {
    std::fs::create_dir_all(out)?;
    let plan = out.join("plan.json");
    std::fs::write(&plan, DegradationPlan::classical(1, 0.8, 1, 0.01, 90, 0).to_json())?;
    let cfg = RunConfig {
        phantoms: PhantomSet {
            count: 3,
            ..Default::default()
        },
        degradation_plan: Some(plan),
        output_dir: out.to_path_buf(),
        ..Default::default()
    };
    let outcome = cmd_pipeline(&cfg, 7)?;
    println!("{} rows written to {}", outcome.rows.len(), out.join("results.csv").display());
    print!("{}", std::fs::read_to_string(out.join("summary.txt"))?);
    Ok(())
}

fn main() -> xraypipe::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("xraypipe-pipeline"));
    run(&out)
}
