//! Saves a model, reloads it and reconstructs a cube from an RGB image on disk.
//!
//! `cargo run --release --example reconstruct`

use hsrecon::blocks::{read_model, write_model, Model, ModelConfig};
use hsrecon::data::{
    generate_cube, project_rgb, read_cube, read_rgb, write_cube, write_rgb, CameraResponse, HSCube,
    SynthSpec,
};

fn main() -> hsrecon::Result<()> {
    let dir = tempfile::tempdir()?;
    let truth = generate_cube(&SynthSpec::new(1, 64, 64, 11), 0);
    let rgb_path = dir.path().join("scene.png");
    write_rgb(&project_rgb(&truth, &CameraResponse::default())?, &rgb_path)?;

    let model_path = dir.path().join("net.srnm");
    write_model(&Model::<f32>::build(&ModelConfig::default())?, &model_path)?;
    let model = read_model(&model_path)?;

    let rgb = read_rgb(&rgb_path)?;
    let pred = model.predict(&rgb.to_tensor())?;
    let cube = HSCube::from_tensor(&pred)?;
    let cube_path = dir.path().join("scene.hsc");
    write_cube(&cube, &cube_path)?;

    let reread = read_cube(&cube_path)?;
    println!(
        "reconstructed {}x{}x{} cube ({} bytes on disk), untrained output mean {:.4}",
        reread.bands,
        reread.height,
        reread.width,
        std::fs::metadata(&cube_path)?.len(),
        reread.data.iter().map(|&v| v as f64).sum::<f64>() / reread.data.len() as f64
    );
    Ok(())
}
