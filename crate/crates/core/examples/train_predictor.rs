// Train a small class-conditioned noise predictor and round-trip its checkpoint.

use nodi::feature_store::ingest_set;
use nodi::predictor::{checkpoint_bytes, checkpoint_from_bytes, loss_eval, train, ClassMode, TrainConfig};
use nodi::schedule::linear_schedule;
use nodi::synth::{generate, SynthSpec};

pub fn run_example() -> nodi::Result<Vec<f64>> {
    let spec = SynthSpec {
        dim: 8,
        classes: 3,
        points_per_class: 60,
        test_per_class: 1,
        ood_per_split: 1,
        ..SynthSpec::default()
    };
    let data = generate(&spec)?;
    let store = ingest_set(&data.id_train, data.head.as_ref(), 1.0)?;
    let sched = linear_schedule(10, 1e-4, 1e-2)?;
    let cfg = TrainConfig {
        epochs: 30,
        width: 32,
        depth: 2,
        batch_size: 32,
        ..TrainConfig::default()
    };

    let outcome = train(&store, &sched, &cfg)?;
    let (first, last) = (outcome.epoch_losses[0], *outcome.epoch_losses.last().unwrap());
    println!("loss {first:.4} -> {last:.4} over {} epochs", cfg.epochs);

    let (model, _) = checkpoint_from_bytes(&checkpoint_bytes(&outcome.model, &sched)?)?;
    assert_eq!(model.params(), outcome.model.params());
    let held = loss_eval(&model, &store, &sched, 1, 500, ClassMode::ClassWise)?;
    println!("Monte-Carlo loss {held:.4}");
    Ok(outcome.epoch_losses)
}

#[allow(dead_code)]
fn main() -> nodi::Result<()> {
    run_example().map(|_| ())
}
