//! Checks analytic gradients against central differences, op by op and for
//! the full network.
//!
//! `cargo run --release --example gradcheck`

use hsrecon::cli::{gradcheck_suite, GRADCHECK_TOL};
use hsrecon::tensor::{grad_check, GradCheckOptions, Tensor};

fn main() -> hsrecon::Result<()> {
    // a hand-built expression: mean(sigmoid(x) * relu(x))
    let x = Tensor::from_vec([1, 1, 2, 3], vec![-1.5, -0.2, 0.3, 0.8, 1.1, 2.0])?.with_grad();
    let report = grad_check(
        |t, v| {
            let s = t.sigmoid(v[0]);
            let r = t.relu(v[0]);
            let p = t.mul(s, r)?;
            Ok(t.mean(p))
        },
        &[x],
        &GradCheckOptions::default(),
    )?;
    println!(
        "custom expression: max_rel_err={:.2e}",
        report.max_rel_err()
    );

    for r in gradcheck_suite(0)? {
        let verdict = if r.passed { "ok" } else { "FAILED" };
        println!(
            "{:<18} {:>9.2e} over {:>4} elements  {verdict}",
            r.name, r.max_rel_err, r.checked
        );
    }
    println!("tolerance {GRADCHECK_TOL:e}");
    Ok(())
}
