use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{Hyper, InitMode, NoisePredictor, Tape};
use crate::error::{NodiError, Result};
use crate::estimator::{ClassToken, NoiseEstimator};
use crate::feature_store::NormalizedFeatureSet;
use crate::schedule::{perturb, DiffusionSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClassMode {
    /// Condition on each point's own class.
    #[default]
    ClassWise,
    /// Pool all classes under the agnostic token.
    Agnostic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_high: f64,
    pub lr_low: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub init_mode: InitMode,
    pub depth: usize,
    pub width: usize,
    pub class_mode: ClassMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 600,
            lr_high: 0.01,
            lr_low: 0.0001,
            batch_size: 256,
            seed: 0,
            init_mode: InitMode::SymmetricSmall,
            depth: 3,
            width: 256,
            class_mode: ClassMode::ClassWise,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_low > 0.0 && self.lr_high >= self.lr_low) {
            return Err(NodiError::Config(format!(
                "need lr_high >= lr_low > 0, got {} and {}",
                self.lr_high, self.lr_low
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NodiError::Config("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Cosine interpolation from `lr_high` at the first epoch to `lr_low` at the last.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        let progress = if self.epochs <= 1 {
            0.0
        } else {
            epoch as f64 / (self.epochs - 1) as f64
        };
        self.lr_low + 0.5 * (self.lr_high - self.lr_low) * (1.0 + (PI * progress).cos())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NoisePredictor,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub final_batch_loss: f64,
}

pub fn train(store: &NormalizedFeatureSet, sched: &DiffusionSchedule, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_on_classes(&store.per_class, store.dim, sched, cfg)
}

/// Trains on per-class point lists that need not lie on a sphere.
pub fn train_on_classes(
    per_class: &[Vec<Vec<f64>>],
    dim: usize,
    sched: &DiffusionSchedule,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples: Vec<(&[f64], ClassToken)> = per_class
        .iter()
        .enumerate()
        .flat_map(|(c, pts)| {
            pts.iter().map(move |p| {
                let token = match cfg.class_mode {
                    ClassMode::ClassWise => ClassToken::Class(c),
                    ClassMode::Agnostic => ClassToken::Agnostic,
                };
                (p.as_slice(), token)
            })
        })
        .collect();
    if samples.is_empty() {
        return Err(NodiError::Config("training store is empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hyper = Hyper::new(dim, sched.timesteps(), per_class.len()).with_size(cfg.depth, cfg.width);
    let mut model = NoisePredictor::init(hyper, cfg.init_mode, &mut rng)?;

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grad = vec![0.0; model.num_params()];
    let mut tape = Tape::default();
    let mut eps = vec![0.0; dim];
    let mut g_out = vec![0.0; dim];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut final_batch_loss = f64::NAN;

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate(epoch);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 2.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let (x0, token) = samples[i];
                let t = rng.random_range(0..sched.timesteps());
                eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
                let xt = perturb(x0, t, &eps, sched)?;
                model.forward_tape(&xt, t, token, &mut tape)?;
                for ((g, o), e) in g_out.iter_mut().zip(&tape.out).zip(&eps) {
                    let d = o - e;
                    batch_loss += d * d;
                    *g = scale * d;
                }
                model.backward(&tape, &g_out, &mut grad);
            }
            batch_loss /= batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(NodiError::TrainingDiverged { epoch });
            }
            for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            if !model.all_finite() {
                return Err(NodiError::TrainingDiverged { epoch });
            }
            epoch_loss += batch_loss;
            batches += 1;
            final_batch_loss = batch_loss;
        }
        epoch_losses.push(epoch_loss / batches as f64);
    }

    Ok(TrainOutcome {
        model,
        epoch_losses,
        final_batch_loss,
    })
}

/// Monte-Carlo estimate of `E‖η − ε‖²` over store points, uniform steps and
/// Gaussian noise, with a fixed seed.
pub fn loss_eval<E: NoiseEstimator + ?Sized>(
    model: &E,
    store: &NormalizedFeatureSet,
    sched: &DiffusionSchedule,
    seed: u64,
    n_samples: usize,
    class_mode: ClassMode,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(NodiError::Config("n_samples must be >= 1".into()));
    }
    let points: Vec<(&[f64], usize)> = store
        .per_class
        .iter()
        .enumerate()
        .flat_map(|(c, pts)| pts.iter().map(move |p| (p.as_slice(), c)))
        .collect();
    if points.is_empty() {
        return Err(NodiError::Config("store is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut eps = vec![0.0; store.dim];
    let mut total = 0.0;
    for _ in 0..n_samples {
        let (x0, c) = points[rng.random_range(0..points.len())];
        let t = rng.random_range(0..sched.timesteps());
        eps.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
        let xt = perturb(x0, t, &eps, sched)?;
        let token = match class_mode {
            ClassMode::ClassWise => ClassToken::Class(c),
            ClassMode::Agnostic => ClassToken::Agnostic,
        };
        let eta = model.estimate(&xt, t, token)?;
        total += eta.iter().zip(&eps).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total / n_samples as f64)
}
