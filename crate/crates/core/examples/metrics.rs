//! Scores progressively degraded copies of a synthetic cube.
//!
//! `cargo run --example metrics`

use hsrecon::data::{generate_cube, SynthSpec};
use hsrecon::metrics::MetricReport;

fn main() -> hsrecon::Result<()> {
    let gt = generate_cube(&SynthSpec::new(1, 48, 48, 5), 0).to_tensor::<f64>();
    println!(
        "{:<14} {:>8} {:>8} {:>8}",
        "degradation", "mrae", "rmse", "ssim"
    );
    for gain in [1.0, 0.98, 0.9, 0.7] {
        let pred = gt.map(|v| (v * gain).clamp(0.0, 1.0));
        let r = MetricReport::compute(&pred, &gt)?;
        println!(
            "{:<14} {:>8.4} {:>8.4} {:>8.4}",
            format!("gain {gain}"),
            r.mrae,
            r.rmse,
            r.ssim
        );
    }
    // one-pixel misregistration
    let shifted = gt.crop(0, 1, 48, 47)?;
    let base = gt.crop(0, 0, 48, 47)?;
    let r = MetricReport::compute(&shifted, &base)?;
    println!(
        "{:<14} {:>8.4} {:>8.4} {:>8.4}",
        "shift 1px", r.mrae, r.rmse, r.ssim
    );
    Ok(())
}
