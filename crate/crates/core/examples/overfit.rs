//! Fits the default network to one fixed batch of four 20x20 synthetic patches.
//!
//! Run with `cargo run --release --example overfit`.

use std::time::Instant;

use hsrecon::blocks::{Model, ModelConfig};
use hsrecon::data::{generate_cube, CameraResponse, Sample, SynthSpec};
use hsrecon::tensor::Tensor;
use hsrecon::train::{evaluate, lr_at, TrainConfig, Trainer};

fn main() -> hsrecon::Result<()> {
    let spec = SynthSpec::new(4, 20, 20, 7);
    let resp = CameraResponse::default();
    let patches: Vec<Sample> = (0..4)
        .map(|i| Sample::from_cube(&generate_cube(&spec, i), &resp))
        .collect::<hsrecon::Result<_>>()?;
    let rgb = Tensor::stack(&patches.iter().map(|s| s.rgb.clone()).collect::<Vec<_>>())?;
    let cube = Tensor::stack(&patches.iter().map(|s| s.cube.clone()).collect::<Vec<_>>())?;

    let cfg = TrainConfig::default();
    let mut trainer = Trainer::new(Model::<f32>::build(&ModelConfig::default())?, &cfg);
    let start = Instant::now();
    for step in 0..cfg.epochs {
        let stats = trainer.step(&rgb, &cube, lr_at(step, &cfg))?;
        if (step + 1) % 50 == 0 {
            println!(
                "step={} loss={:.5} mrae={:.4}",
                step + 1,
                stats.loss,
                stats.mrae
            );
        }
    }
    let report = evaluate(&trainer.model, &patches)?;
    println!(
        "final mrae={:.4} one_minus_ssim={:.4} seconds={:.1}",
        report.mrae,
        1.0 - report.ssim,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
