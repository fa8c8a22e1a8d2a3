//! Trains a reduced-width network for a few epochs and compares validation
//! metrics before and after.
//!
//! `cargo run --release --example train_eval`

use hsrecon::blocks::{Model, ModelConfig};
use hsrecon::data::{generate_dataset, load_samples, CameraResponse, SynthSpec};
use hsrecon::train::{evaluate, split_samples, train_with, TrainConfig};

fn main() -> hsrecon::Result<()> {
    let dir = tempfile::tempdir()?;
    let manifest = generate_dataset(
        &SynthSpec::new(9, 32, 32, 3),
        &CameraResponse::default(),
        dir.path(),
    )?;
    let samples = load_samples(&manifest)?;

    let cfg = TrainConfig {
        epochs: 10,
        patches_per_epoch: 32,
        lr_end: 1e-4,
        ..TrainConfig::default()
    };
    let (train_set, val) = split_samples(&samples, &cfg);
    let model = Model::<f32>::build(&ModelConfig {
        stem_width: 16,
        rdab_growth: 8,
        dense_branch_growth: 8,
        attention_reduction: 4,
        ..ModelConfig::default()
    })?;
    println!(
        "{} parameters, {} train / {} val images",
        model.count_params(),
        train_set.len(),
        val.len()
    );

    let before = evaluate(&model, val)?;
    let (model, _) = train_with(model, train_set, val, &cfg, |e| println!("{e}"))?;
    let after = evaluate(&model, val)?;
    println!("val mrae {:.4} -> {:.4}", before.mrae, after.mrae);
    println!("val ssim {:.4} -> {:.4}", before.ssim, after.ssim);
    Ok(())
}
