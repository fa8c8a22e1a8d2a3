//! Breaks the default network's parameters down by layer group and shows what
//! each ablation switch removes.
//!
//! `cargo run --example param_budget`

use std::collections::BTreeMap;

use hsrecon::blocks::{analytic_param_count, Model, ModelConfig, REFERENCE_PARAM_COUNT};

fn main() -> hsrecon::Result<()> {
    let cfg = ModelConfig::default();
    let model = Model::<f32>::build(&cfg)?;
    let mut groups: BTreeMap<String, usize> = BTreeMap::new();
    for (layer, count) in model.layer_param_counts() {
        let group = layer.split('.').next().unwrap_or(&layer).to_string();
        *groups.entry(group).or_default() += count;
    }
    for (group, count) in &groups {
        println!("{group:<8} {count:>7}");
    }
    let total = model.count_params();
    println!(
        "total    {total:>7}  (reference {REFERENCE_PARAM_COUNT}, ratio {:.3})",
        total as f64 / REFERENCE_PARAM_COUNT as f64
    );

    for (name, variant) in [
        (
            "no-coordconv",
            ModelConfig {
                use_coordconv: false,
                ..cfg.clone()
            },
        ),
        (
            "no-cbam",
            ModelConfig {
                use_cbam: false,
                ..cfg.clone()
            },
        ),
    ] {
        println!(
            "{name:<13} {:>7} (-{})",
            analytic_param_count(&variant),
            total - analytic_param_count(&variant)
        );
    }
    Ok(())
}
