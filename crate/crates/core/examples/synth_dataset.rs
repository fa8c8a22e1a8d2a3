//! Generates a small synthetic dataset and inspects one pair.
//!
//! `cargo run --example synth_dataset -- [out_dir]`

use hsrecon::data::{
    generate_dataset, load_samples, read_cube, CameraResponse, Manifest, SynthSpec,
};

fn main() -> hsrecon::Result<()> {
    let scratch = tempfile::tempdir()?;
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| scratch.path().to_path_buf(), Into::into);

    let spec = SynthSpec::new(4, 32, 32, 42);
    let resp = CameraResponse::gaussian(spec.bands);
    let manifest_path = generate_dataset(&spec, &resp, &out)?;
    let manifest = Manifest::read(&manifest_path)?;
    println!(
        "wrote {} pairs to {}",
        manifest.entries.len(),
        out.display()
    );

    let first = &manifest.entries[0];
    let cube = read_cube(out.join(&first.cube))?;
    let spectrum = cube.spectrum(16, 16);
    let peak = spectrum
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(band, _)| band)
        .unwrap_or(0);
    println!(
        "{}: {} bands, centre pixel peaks at band {peak}",
        first.cube.display(),
        cube.bands
    );

    let samples = load_samples(&manifest_path)?;
    let rgb = &samples[0].rgb;
    println!(
        "{}: centre pixel rgb = ({:.3}, {:.3}, {:.3})",
        first.rgb.display(),
        rgb.at(0, 0, 16, 16),
        rgb.at(0, 1, 16, 16),
        rgb.at(0, 2, 16, 16)
    );
    Ok(())
}
