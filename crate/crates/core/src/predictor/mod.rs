//! Trainable noise predictor and its diffusion training loop.
//!
//! The network projects the input to a hidden width, adds learned timestep
//! and class embeddings, runs pre-activation residual MLP blocks with SiLU,
//! and projects back. Gradients are computed by hand over a flat parameter
//! vector, which is also the checkpoint payload.

mod model;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use model::{BlockLayout, Hyper, InitMode, Layout, NoisePredictor, Tape};
pub use train::{loss_eval, train, train_on_classes, ClassMode, TrainConfig, TrainOutcome};

use crate::container::{self, DType, Writer};
use crate::error::{NodiError, Result};
use crate::schedule::DiffusionSchedule;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    hyper: Hyper,
    n_params: usize,
    dtype: DType,
    betas: Vec<f64>,
}

/// Serializes a model together with the schedule it was trained under.
pub fn checkpoint_bytes(model: &NoisePredictor, sched: &DiffusionSchedule) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        hyper: *model.hyper(),
        n_params: model.num_params(),
        dtype: DType::F64,
        betas: sched.beta().to_vec(),
    };
    let mut w = Writer::new(&header)?;
    w.reals(model.params(), DType::F64);
    Ok(w.into_bytes())
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(NoisePredictor, DiffusionSchedule)> {
    let (h, mut payload): (CheckpointHeader, _) = container::open(bytes)?;
    let at = payload.offset();
    let params = payload.reals(h.n_params, h.dtype, "parameters")?;
    payload.finish()?;
    let model = NoisePredictor::from_params(h.hyper, params).map_err(|e| NodiError::format(at, e.to_string()))?;
    let sched = DiffusionSchedule::from_betas(h.betas).map_err(|e| NodiError::format(8, e.to_string()))?;
    if sched.timesteps() != h.hyper.timesteps {
        return Err(NodiError::format(8, "schedule length disagrees with model timesteps"));
    }
    Ok((model, sched))
}

pub fn save_checkpoint(path: &Path, model: &NoisePredictor, sched: &DiffusionSchedule) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model, sched)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NoisePredictor, DiffusionSchedule)> {
    checkpoint_from_bytes(&container::read_file(path)?)
}
