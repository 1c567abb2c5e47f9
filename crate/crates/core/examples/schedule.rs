// Linear noise schedule and the closed-form forward jump.

use nodi::schedule::{linear_schedule, perturb, DiffusionSchedule};

pub fn run_example() -> nodi::Result<DiffusionSchedule> {
    let sched = linear_schedule(10, 1e-4, 1e-2)?;
    for (s, abar) in sched.alpha_bar().iter().enumerate() {
        println!("step {s}: beta {:.5} alpha_bar {abar:.5}", sched.beta()[s]);
    }
    let x0 = [3.0, 4.0];
    let xt = perturb(&x0, 9, &[0.0, 0.0], &sched)?;
    println!("noise-free point shrinks to {xt:.4?}");
    Ok(sched)
}

#[allow(dead_code)]
fn main() -> nodi::Result<()> {
    run_example().map(|_| ())
}
