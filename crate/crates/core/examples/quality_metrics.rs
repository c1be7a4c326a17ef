//! Scores a degraded image with PSNR, SSIM, L1, the perceptual proxy and the
//! composite loss, including a discriminator realness map.
//!
//! `cargo run --example quality_metrics`

use xraypipe::degrade::add_gaussian_noise;
use xraypipe::imaging::gaussian_blur;
use xraypipe::inference::{run_discriminator, unet_discriminator, WeightStore};
use xraypipe::metrics::{
    adversarial_loss, composite_loss, l1_loss, perceptual_loss, psnr, ssim, LossWeights, PerceptualExtractor, Target,
};
use xraypipe::phantom::{phantom, PhantomSpec};

pub fn run() -> xraypipe::Result<()> {
    let clean = phantom(&PhantomSpec::new(128, 4))?;
    let proxy = PerceptualExtractor::PyramidProxy;
    for (name, img) in [
        ("blur 1.0", gaussian_blur(&clean, 1.0)?),
        ("blur 2.0", gaussian_blur(&clean, 2.0)?),
        ("noise 0.03", add_gaussian_noise(&clean, 0.03, 1)?),
    ] {
        println!(
            "{name:<10} psnr {:6.2}  ssim {:.4}  l1 {:.4}  perc {:.4}",
            psnr(&img, &clean)?,
            ssim(&img, &clean)?,
            l1_loss(&img, &clean)?,
            perceptual_loss(&img, &clean, &proxy)?
        );
    }

    let (disc, shapes) = unet_discriminator(8);
    let dw = WeightStore::random(&shapes, 9, 0.5);
    let blurred = gaussian_blur(&clean, 1.5)?;
    let logits = run_discriminator(&disc, &dw, &blurred)?;
    println!(
        "realness map {:?}, adversarial (real target) {:.4}, (fake target) {:.4}",
        logits.dims(),
        adversarial_loss(logits.data(), Target::Real)?,
        adversarial_loss(logits.data(), Target::Fake)?
    );
    let terms = composite_loss(&blurred, &clean, logits.data(), &LossWeights::default(), &proxy)?;
    println!(
        "composite {:.4} = l1 {:.4} + perc {:.4} + 0.1 * adv {:.4}",
        terms.composite, terms.l1, terms.perceptual, terms.adversarial
    );
    Ok(())
}

fn main() -> xraypipe::Result<()> {
    run()
}
