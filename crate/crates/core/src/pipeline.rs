//! End-to-end evaluation on a benchmark and the ablation sweeps built on it.

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

use crate::bias_removal::{complete_head, ClassifierHead, CompletedHead, DEFAULT_RANK_TOL};
use crate::error::{NodiError, Result};
use crate::estimator::NoiseEstimator;
use crate::feature_store::{normalize, FeatureSet};
use crate::metrics::{report_at, MetricsReport};
use crate::predictor::{train_on_classes, ClassMode, NoisePredictor, TrainConfig};
use crate::scale_search::ScaleSearchConfig;
use crate::schedule::DiffusionSchedule;
use crate::scorer::{Scorer, ScorerConfig};
use crate::stable_point::{StablePointConfig, StablePointEstimator};
use crate::synth::SynthData;

/// Training split, optional head, ID test split and any number of OOD splits.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub train: FeatureSet,
    pub head: Option<ClassifierHead>,
    pub id_test: FeatureSet,
    pub ood: Vec<FeatureSet>,
}

impl From<SynthData> for Benchmark {
    fn from(d: SynthData) -> Self {
        Benchmark {
            train: d.id_train,
            head: d.head,
            id_test: d.id_test,
            ood: vec![d.ood_near, d.ood_far],
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub radius: f64,
    /// 1-based diffusion time.
    pub score_t: usize,
    pub schedule: DiffusionSchedule,
    pub scale: ScaleSearchConfig,
    pub class_mode: ClassMode,
    pub bias_removal: bool,
    pub normalize: bool,
    pub tpr: f64,
}

impl EvalSettings {
    pub fn new(radius: f64, score_t: usize, schedule: DiffusionSchedule) -> Self {
        EvalSettings {
            radius,
            score_t,
            schedule,
            scale: ScaleSearchConfig::for_radius(radius),
            class_mode: ClassMode::ClassWise,
            bias_removal: true,
            normalize: true,
            tpr: 0.95,
        }
    }

    /// Same settings at another radius; the scale-search threshold and bracket
    /// follow the radius.
    pub fn at_radius(&self, radius: f64) -> Self {
        let mut scale = ScaleSearchConfig::for_radius(radius).with_orientation(self.scale.orientation);
        scale.max_iters = self.scale.max_iters;
        EvalSettings {
            radius,
            scale,
            ..self.clone()
        }
    }

    pub fn scorer_config(&self) -> ScorerConfig {
        ScorerConfig {
            scale: self.scale,
            class_mode: self.class_mode,
            normalize: self.normalize,
            ..ScorerConfig::new(self.radius, self.score_t)
        }
    }
}

/// Reference points after the optional encoding and normalization.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub encoder: Option<CompletedHead>,
    pub per_class: Vec<Vec<Vec<f64>>>,
    pub dim: usize,
}

pub fn prepare(bench: &Benchmark, settings: &EvalSettings) -> Result<Prepared> {
    let encoder = match (&bench.head, settings.bias_removal) {
        (Some(h), true) => Some(complete_head(h, DEFAULT_RANK_TOL)?),
        _ => None,
    };
    let train = match &encoder {
        Some(enc) => bench.train.encoded(enc)?,
        None => bench.train.clone(),
    };
    let per_class = if settings.normalize {
        normalize(&train, settings.radius)?.per_class
    } else {
        train.by_class()
    };
    Ok(Prepared {
        encoder,
        dim: train.dim,
        per_class,
    })
}

fn scores_of<E: NoiseEstimator>(scorer: &Scorer<'_, E>, set: &FeatureSet) -> Result<Vec<f64>> {
    let out = scorer.score_set(set);
    if let Some((row, e)) = out.failures.into_iter().next() {
        return Err(NodiError::Config(format!("split {:?} row {row}: {e}", set.split_tag)));
    }
    Ok(out.records.iter().map(|r| r.score).collect())
}

/// Scores the ID test split and every OOD split with `estimator`, one report
/// per OOD split.
pub fn evaluate_with<E: NoiseEstimator>(
    estimator: E,
    encoder: Option<&CompletedHead>,
    bench: &Benchmark,
    settings: &EvalSettings,
) -> Result<Vec<MetricsReport>> {
    let scorer = Scorer::new(estimator, &settings.schedule, encoder, settings.scorer_config())?;
    let id = scores_of(&scorer, &bench.id_test)?;
    bench
        .ood
        .iter()
        .map(|set| {
            let ood = scores_of(&scorer, set)?;
            report_at(&set.split_tag, &id, &ood, settings.tpr)
        })
        .collect()
}

/// Stable-point backend evaluation.
pub fn evaluate_stable(bench: &Benchmark, settings: &EvalSettings) -> Result<Vec<MetricsReport>> {
    let prep = prepare(bench, settings)?;
    let cfg = StablePointConfig {
        score_t: settings.score_t,
        ..StablePointConfig::default()
    };
    cfg.validate(settings.schedule.timesteps())?;
    let est = StablePointEstimator::new(&prep.per_class, prep.dim, settings.schedule.clone(), cfg);
    evaluate_with(&est, prep.encoder.as_ref(), bench, settings)
}

/// Where noise estimates come from during an evaluation.
#[derive(Debug, Clone)]
pub enum Backend {
    Stable,
    /// A predictor trained per preprocessing setting; `class_mode` in the
    /// config is overridden by the evaluation settings.
    Model(TrainConfig),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct ModelKey {
    bias_removal: bool,
    normalize: bool,
    agnostic: bool,
    radius: u64,
    betas: Vec<u64>,
}

impl ModelKey {
    fn of(s: &EvalSettings) -> Self {
        ModelKey {
            bias_removal: s.bias_removal,
            normalize: s.normalize,
            agnostic: s.class_mode == ClassMode::Agnostic,
            radius: if s.normalize { s.radius.to_bits() } else { 0 },
            betas: s.schedule.beta().iter().map(|b| b.to_bits()).collect(),
        }
    }
}

/// Evaluates settings on one benchmark, training and caching a predictor per
/// distinct preprocessing when the backend is a model. Settings that differ
/// only in score time or scale search share a model.
pub struct Evaluator<'b> {
    bench: &'b Benchmark,
    backend: Backend,
    models: HashMap<ModelKey, (Prepared, NoisePredictor)>,
}

impl<'b> Evaluator<'b> {
    pub fn new(bench: &'b Benchmark, backend: Backend) -> Self {
        Evaluator {
            bench,
            backend,
            models: HashMap::new(),
        }
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    /// Trains (or fetches) the predictor for `settings`. Errors on the
    /// stable-point backend.
    pub fn model_for(&mut self, settings: &EvalSettings) -> Result<&(Prepared, NoisePredictor)> {
        let Backend::Model(cfg) = &self.backend else {
            return Err(NodiError::Config("stable-point backend has no model".into()));
        };
        let key = ModelKey::of(settings);
        if !self.models.contains_key(&key) {
            let prep = prepare(self.bench, settings)?;
            let cfg = TrainConfig {
                class_mode: settings.class_mode,
                ..cfg.clone()
            };
            let outcome = train_on_classes(&prep.per_class, prep.dim, &settings.schedule, &cfg)?;
            self.models.insert(key.clone(), (prep, outcome.model));
        }
        Ok(&self.models[&key])
    }

    pub fn evaluate(&mut self, settings: &EvalSettings) -> Result<Vec<MetricsReport>> {
        match self.backend {
            Backend::Stable => evaluate_stable(self.bench, settings),
            Backend::Model(_) => {
                let bench = self.bench;
                let (prep, model) = self.model_for(settings)?;
                evaluate_with(model, prep.encoder.as_ref(), bench, settings)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub setting: String,
    pub split: String,
    pub auroc: f64,
    pub fpr_at_95: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub radii: Vec<f64>,
    /// Zero-based schedule steps; step `k` scores at time `k + 1`.
    pub steps: Vec<usize>,
    pub components: bool,
    pub class_modes: bool,
}

impl AblationGrid {
    pub fn standard(timesteps: usize, radii: Vec<f64>) -> Self {
        AblationGrid {
            radii,
            steps: (0..timesteps).collect(),
            components: true,
            class_modes: true,
        }
    }
}

fn rows(setting: String, reports: Vec<MetricsReport>) -> impl Iterator<Item = AblationRow> {
    reports.into_iter().map(move |r| AblationRow {
        setting: setting.clone(),
        split: r.split_name,
        auroc: r.auroc,
        fpr_at_95: r.fpr_at_95,
    })
}

/// Runs the component, timestep, radius and class-mode sweeps around `base`.
pub fn run_ablation(eval: &mut Evaluator<'_>, base: &EvalSettings, grid: &AblationGrid) -> Result<Vec<AblationRow>> {
    let mut out = Vec::new();
    if grid.components {
        for (name, bias_removal, normalize) in [
            ("full", true, true),
            ("no-bias-removal", false, true),
            ("no-normalization", true, false),
            ("neither", false, false),
        ] {
            let s = EvalSettings {
                bias_removal,
                normalize,
                ..base.clone()
            };
            out.extend(rows(name.to_string(), eval.evaluate(&s)?));
        }
    }
    for &step in &grid.steps {
        let s = EvalSettings {
            score_t: step + 1,
            ..base.clone()
        };
        out.extend(rows(format!("t={step}"), eval.evaluate(&s)?));
    }
    for &r in &grid.radii {
        let wise = base.at_radius(r);
        out.extend(rows(format!("class-wise r={r}"), eval.evaluate(&wise)?));
        if grid.class_modes {
            let agnostic = EvalSettings {
                class_mode: ClassMode::Agnostic,
                ..wise
            };
            out.extend(rows(format!("class-agnostic r={r}"), eval.evaluate(&agnostic)?));
        }
    }
    Ok(out)
}

pub fn write_csv<W: Write>(writer: W, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row).map_err(|e| NodiError::Config(format!("csv: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

/// Looks up one row's AUROC.
pub fn auroc_of(rows: &[AblationRow], setting: &str, split: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.setting == setting && r.split == split)
        .map(|r| r.auroc)
}
