// Closed-form noise estimate: small near the reference points, large away from them.

use std::f64::consts::SQRT_2;

use nodi::feature_store::l2_norm;
use nodi::schedule::linear_schedule;
use nodi::stable_point::{stable_noise, StablePointConfig};

pub fn run_example() -> nodi::Result<(f64, f64)> {
    let sched = linear_schedule(10, 1e-4, 1e-2)?;
    let abar = sched.alpha_bar_for_time(2)?;
    let points = vec![vec![2.0, 0.0], vec![0.0, 2.0], vec![SQRT_2, SQRT_2]];
    let cfg = StablePointConfig::default();

    let on = stable_noise(&[1.4, 1.4], &points, abar, &cfg)?;
    let off = stable_noise(&[-1.4, -1.4], &points, abar, &cfg)?;
    let (near, far) = (l2_norm(&on), l2_norm(&off));
    println!("near a reference point |eta| = {near:.3}");
    println!("opposite side          |eta| = {far:.3}");
    assert!(far > near);
    Ok((near, far))
}

#[allow(dead_code)]
fn main() -> nodi::Result<()> {
    run_example().map(|_| ())
}
