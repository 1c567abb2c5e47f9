// Find the rescaling under which the denoised point lands back on the sphere.

use nodi::scale_search::{find_scale, ScaleSearchConfig};

pub fn run_example() -> nodi::Result<f64> {
    let (r, abar) = (2.0, 0.9);
    // an estimator that predicts zero noise recovers |scale·y| / sqrt(abar)
    let zero = |y: &[f64]| Ok(vec![0.0; y.len()]);
    let y = [0.6, 0.8];
    let out = find_scale(&y, r, zero, abar, &ScaleSearchConfig::for_radius(r))?;
    println!(
        "scale {:.6} after {} iterations (err {:.2e}, bracketed {})",
        out.scale, out.iters, out.err, !out.no_bracket
    );
    for step in &out.trace {
        println!(
            "  s={:.5} r_t={:.5} in [{:.4}, {:.4}]",
            step.scale, step.recovered, step.lo, step.hi
        );
    }
    assert!((out.scale - r * abar.sqrt()).abs() < 1e-2);
    Ok(out.scale)
}

#[allow(dead_code)]
fn main() -> nodi::Result<()> {
    run_example().map(|_| ())
}
