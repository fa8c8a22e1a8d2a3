//! Runs one residual dense attention block and summarises its attention maps.
//!
//! `cargo run --example attention`

use hsrecon::blocks::{rdab_forward, AttentionParams, ConvParams, RdabParams};
use hsrecon::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> hsrecon::Result<()> {
    let (width, growth, layers, hidden) = (8, 4, 3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::<f64>::new();
    let mut conv = |tape: &mut Tape<f64>, c_in: usize, c_out: usize, k: usize| {
        let bound = (3.0 / (c_in * k * k) as f64).sqrt();
        let w: Vec<f64> = (0..c_out * c_in * k * k)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let b: Vec<f64> = (0..c_out).map(|_| rng.random_range(0.0..0.2)).collect();
        ConvParams {
            weight: tape.constant(Tensor::from_vec([c_out, c_in, k, k], w).unwrap()),
            bias: tape.constant(Tensor::from_vec([1, c_out, 1, 1], b).unwrap()),
        }
    };
    let dense = (0..layers)
        .map(|q| conv(&mut tape, width + q * growth, growth, 3))
        .collect();
    let fusion = conv(&mut tape, width + layers * growth, width, 1);
    let attention = Some(AttentionParams {
        squeeze: conv(&mut tape, width, hidden, 1),
        excite: conv(&mut tape, hidden, width, 1),
        spatial: conv(&mut tape, 2, 1, 7),
    });
    let p = RdabParams {
        dense,
        fusion,
        attention,
    };

    // a bright square on a dark field
    let mut img = vec![0.1; width * 16 * 16];
    for c in 0..width {
        for y in 5..11 {
            for x in 5..11 {
                img[(c * 16 + y) * 16 + x] = 0.9;
            }
        }
    }
    let x = tape.constant(Tensor::from_vec([1, width, 16, 16], img)?);
    let out = rdab_forward(&mut tape, x, &p)?;
    let maps = out.attention.expect("attention enabled");

    let channel = tape.value(maps.channel_map).data();
    println!(
        "channel weights: {:?}",
        channel
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect::<Vec<_>>()
    );
    let spatial = tape.value(maps.spatial_map);
    println!(
        "spatial weight inside the square {:.3}, in the corner {:.3}",
        spatial.at(0, 0, 8, 8),
        spatial.at(0, 0, 0, 0)
    );
    println!("block output shape {}", tape.shape(out.output));
    Ok(())
}
