// Sweep preprocessing components, scoring step and class mode; emit CSV.

use nodi::pipeline::{run_ablation, write_csv, AblationGrid, AblationRow, Backend, Benchmark, EvalSettings, Evaluator};
use nodi::schedule::linear_schedule;
use nodi::synth::{generate, SynthSpec};

pub fn run_example() -> nodi::Result<Vec<AblationRow>> {
    let spec = SynthSpec {
        points_per_class: 80,
        test_per_class: 20,
        ood_per_split: 40,
        ..SynthSpec::default()
    };
    let bench: Benchmark = generate(&spec)?.into();
    let base = EvalSettings::new(7.0, 2, linear_schedule(10, 1e-4, 1e-2)?);
    let grid = AblationGrid {
        steps: vec![1, 5],
        ..AblationGrid::standard(10, vec![7.0, 10.5])
    };

    let rows = run_ablation(&mut Evaluator::new(&bench, Backend::Stable), &base, &grid)?;
    let mut csv = Vec::new();
    write_csv(&mut csv, &rows)?;
    print!("{}", String::from_utf8_lossy(&csv));
    Ok(rows)
}

#[allow(dead_code)]
fn main() -> nodi::Result<()> {
    run_example().map(|_| ())
}
