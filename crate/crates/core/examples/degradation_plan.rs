//! Builds a second-order degradation plan, round-trips it through JSON and
//! applies it to a phantom. Also shows the single-stage helpers.
//!
//! `cargo run --example degradation_plan [OUT_DIR]`

use std::path::{Path, PathBuf};

use xraypipe::degrade::{add_gaussian_noise, add_poisson_noise, apply_plan, jpeg_emulate, DegradationPlan};
use xraypipe::imaging::{write_image, BitDepth};
use xraypipe::metrics::psnr;
use xraypipe::phantom::{phantom, PhantomSpec};

pub fn run(out: &Path) -> xraypipe::Result<()> {
    std::fs::create_dir_all(out)?;
    let clean = phantom(&PhantomSpec::new(256, 3))?;

    let plan = DegradationPlan::classical(2, 1.2, 2, 0.02, 70, 99);
    let json = plan.to_json();
    std::fs::write(out.join("plan.json"), &json)?;
    let plan = DegradationPlan::from_json(&json)?;
    let degraded = apply_plan(&clean, &plan)?;
    println!(
        "order-{} plan: {}x{} -> {}x{}",
        plan.order(),
        clean.width(),
        clean.height(),
        degraded.width(),
        degraded.height()
    );
    write_image(&out.join("degraded.png"), &degraded, BitDepth::Eight)?;

    let gauss = add_gaussian_noise(&clean, 0.05, 1)?;
    let poisson = add_poisson_noise(&clean, 255.0, 1)?;
    let (jpeg, bytes) = jpeg_emulate(&clean, 50)?;
    println!("gaussian tau=0.05: {:.2} dB", psnr(&gauss, &clean)?);
    println!("poisson scale=255: {:.2} dB", psnr(&poisson, &clean)?);
    println!("jpeg q=50: {:.2} dB in {bytes} bytes", psnr(&jpeg, &clean)?);
    Ok(())
}

fn main() -> xraypipe::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("xraypipe-degrade"));
    run(&out)
}
