use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nodi::bias_removal::{complete_head, ClassifierHead, DEFAULT_RANK_TOL};
use nodi::feature_store::{default_radius, ingest, FeatureSet, NormalizedFeatureSet};
use nodi::metrics::report_at;
use nodi::pipeline::{
    run_ablation, write_csv, AblationGrid, Backend as EvalBackend, Benchmark, EvalSettings, Evaluator,
};
use nodi::predictor::{load_checkpoint, save_checkpoint, train, ClassMode, InitMode, TrainConfig};
use nodi::scale_search::{Orientation, ScaleSearchConfig};
use nodi::schedule::{
    linear_schedule_with, DiffusionSchedule, EndpointReading, DEFAULT_BETA_HI, DEFAULT_BETA_LO, DEFAULT_SCORE_T,
    DEFAULT_TIMESTEPS,
};
use nodi::scorer::{read_jsonl, write_jsonl, ScoreFileMeta, Scorer, ScorerConfig, SCORE_CONVENTION};
use nodi::stable_point::{StablePointConfig, StablePointEstimator};
use nodi::synth::{generate, SynthSpec};
use nodi::{NodiError, Result};

#[derive(Parser)]
#[command(
    name = "nodi",
    version,
    about = "Diffusion-based OOD detection over precomputed features"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Bias-remove and sphere-normalize a feature file into a store.
    Ingest {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
        /// Sphere radius; defaults from the head shape.
        #[arg(long = "r")]
        radius: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a noise predictor on a store.
    Train {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Score a feature file with the stable point or a trained model.
    Score {
        #[arg(long, value_enum, default_value = "stable")]
        backend: BackendArg,
        /// Store of reference points (stable backend; also supplies the radius).
        #[arg(long)]
        store: Option<PathBuf>,
        /// Model checkpoint (model backend).
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long = "r")]
        radius: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        scoring: ScoringArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// AUROC and FPR at a TPR target between two score files.
    Eval {
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        ood: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        tpr: f64,
    },
    /// Component, timestep, radius and class-mode sweeps to CSV.
    Ablate {
        /// Synthetic benchmark spec; used when no feature files are given.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        id: Option<PathBuf>,
        /// OOD feature files; repeatable.
        #[arg(long)]
        ood: Vec<PathBuf>,
        #[arg(long)]
        head: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "stable")]
        backend: BackendArg,
        #[arg(long = "r")]
        radius: Option<f64>,
        /// Radii for the class-mode sweep.
        #[arg(long, value_delimiter = ',')]
        radii: Vec<f64>,
        #[arg(long, default_value_t = 0.95)]
        tpr: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        scoring: ScoringArgs,
        #[command(flatten)]
        train_args: TrainArgs,
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Write a synthetic benchmark in the canonical file formats.
    Synth {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Stable,
    Model,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassModeArg {
    ClassWise,
    Agnostic,
}

impl From<ClassModeArg> for ClassMode {
    fn from(c: ClassModeArg) -> Self {
        match c {
            ClassModeArg::ClassWise => ClassMode::ClassWise,
            ClassModeArg::Agnostic => ClassMode::Agnostic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    SymmetricSmall,
    #[value(name = "uniform-0-1")]
    Uniform01,
}

#[derive(Args)]
struct ScheduleArgs {
    #[arg(long, default_value_t = DEFAULT_TIMESTEPS)]
    timesteps: usize,
    #[arg(long, default_value_t = DEFAULT_BETA_LO)]
    beta_lo: f64,
    #[arg(long, default_value_t = DEFAULT_BETA_HI)]
    beta_hi: f64,
    /// Read the endpoints as bounds on alpha rather than beta.
    #[arg(long)]
    alpha_literal: bool,
}

impl ScheduleArgs {
    fn build(&self) -> Result<DiffusionSchedule> {
        let reading = if self.alpha_literal {
            EndpointReading::AlphaLiteral
        } else {
            EndpointReading::Beta
        };
        linear_schedule_with(self.timesteps, self.beta_lo, self.beta_hi, reading)
    }
}

#[derive(Args)]
struct ScoringArgs {
    /// 1-based diffusion time used for scoring.
    #[arg(long, default_value_t = DEFAULT_SCORE_T)]
    score_t: usize,
    /// Absolute scale-search tolerance; defaults to 1e-3·r.
    #[arg(long)]
    scale_thr: Option<f64>,
    #[arg(long, default_value_t = 50)]
    scale_max_iters: usize,
    #[arg(long, default_value = "auto")]
    scale_orientation: Orientation,
    #[arg(long, value_enum, default_value = "class-wise")]
    class_mode: ClassModeArg,
}

impl ScoringArgs {
    fn scale(&self, radius: f64) -> ScaleSearchConfig {
        let mut cfg = ScaleSearchConfig::for_radius(radius).with_orientation(self.scale_orientation);
        cfg.max_iters = self.scale_max_iters;
        if let Some(thr) = self.scale_thr {
            cfg.thr = thr;
        }
        cfg
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 600)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr_high: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr_low: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "symmetric-small")]
    init_mode: InitArg,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
}

impl TrainArgs {
    fn config(&self, class_mode: ClassMode) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr_high: self.lr_high,
            lr_low: self.lr_low,
            batch_size: self.batch_size,
            seed: self.seed,
            init_mode: match self.init_mode {
                InitArg::SymmetricSmall => InitMode::SymmetricSmall,
                InitArg::Uniform01 => InitMode::Uniform01,
            },
            depth: self.depth,
            width: self.width,
            class_mode,
        }
    }
}

fn radius_for(explicit: Option<f64>, head: Option<&ClassifierHead>, features: &FeatureSet) -> f64 {
    explicit.unwrap_or_else(|| match head {
        Some(h) => default_radius(h.latent_dim(), h.num_classes()),
        None => default_radius(features.dim, features.num_classes),
    })
}

fn read_head(path: Option<&Path>) -> Result<Option<ClassifierHead>> {
    path.map(ClassifierHead::read).transpose()
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Ingest {
            features,
            head,
            radius,
            out,
        } => {
            let radius = match radius {
                Some(r) => r,
                None => radius_for(
                    None,
                    read_head(head.as_deref())?.as_ref(),
                    &FeatureSet::read(&features)?,
                ),
            };
            let store = ingest(&features, head.as_deref(), radius)?;
            store.write(&out)?;
            eprintln!(
                "wrote {} points in {} classes at r={radius}",
                store.len(),
                store.num_classes()
            );
        }
        Cmd::Train {
            store,
            out,
            train: args,
            schedule,
        } => {
            let store = NormalizedFeatureSet::read(&store)?;
            let sched = schedule.build()?;
            let outcome = train(&store, &sched, &args.config(ClassMode::ClassWise))?;
            for (epoch, loss) in outcome.epoch_losses.iter().enumerate() {
                eprintln!("epoch {epoch} loss {loss:.6}");
            }
            save_checkpoint(&out, &outcome.model, &sched)?;
        }
        Cmd::Score {
            backend,
            store,
            ckpt,
            features,
            head,
            radius,
            out,
            scoring,
            schedule,
        } => {
            let set = FeatureSet::read(&features)?;
            let head = read_head(head.as_deref())?;
            let completed = head.as_ref().map(|h| complete_head(h, DEFAULT_RANK_TOL)).transpose()?;
            let store = store.as_deref().map(NormalizedFeatureSet::read).transpose()?;
            let radius = radius
                .or(store.as_ref().map(|s| s.radius))
                .unwrap_or_else(|| radius_for(None, head.as_ref(), &set));
            let cfg = ScorerConfig {
                scale: scoring.scale(radius),
                class_mode: scoring.class_mode.into(),
                ..ScorerConfig::new(radius, scoring.score_t)
            };
            let (records, failures, name) = match backend {
                BackendArg::Stable => {
                    let store =
                        store.ok_or_else(|| NodiError::Config("--store is required for the stable backend".into()))?;
                    let sched = schedule.build()?;
                    let sp = StablePointConfig {
                        score_t: scoring.score_t,
                        ..StablePointConfig::default()
                    };
                    sp.validate(sched.timesteps())?;
                    let est = StablePointEstimator::new(&store.per_class, store.dim, sched.clone(), sp);
                    let out = Scorer::new(&est, &sched, completed.as_ref(), cfg)?.score_set(&set);
                    (out.records, out.failures, "stable")
                }
                BackendArg::Model => {
                    let ckpt =
                        ckpt.ok_or_else(|| NodiError::Config("--ckpt is required for the model backend".into()))?;
                    let (model, sched) = load_checkpoint(&ckpt)?;
                    let out = Scorer::new(&model, &sched, completed.as_ref(), cfg)?.score_set(&set);
                    (out.records, out.failures, "model")
                }
            };
            for (row, e) in &failures {
                eprintln!("row {row}: {e}");
            }
            let meta = ScoreFileMeta {
                convention: SCORE_CONVENTION.into(),
                backend: name.into(),
                split_tag: set.split_tag.clone(),
                radius,
                score_t: scoring.score_t,
            };
            write_jsonl(&out, &meta, &records)?;
            eprintln!("scored {} rows, {} failed", records.len(), failures.len());
        }
        Cmd::Eval { id, ood, tpr } => {
            let (_, id_rec) = read_jsonl(&id)?;
            let (ood_meta, ood_rec) = read_jsonl(&ood)?;
            let name = ood_meta
                .map(|m| m.split_tag)
                .unwrap_or_else(|| ood.display().to_string());
            let id_scores: Vec<f64> = id_rec.iter().map(|r| r.score).collect();
            let ood_scores: Vec<f64> = ood_rec.iter().map(|r| r.score).collect();
            let report = report_at(&name, &id_scores, &ood_scores, tpr)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Ablate {
            spec,
            train: train_file,
            id,
            ood,
            head,
            backend,
            radius,
            radii,
            tpr,
            out,
            scoring,
            train_args,
            schedule,
        } => {
            let bench = match (train_file, id) {
                (Some(train_file), Some(id)) => Benchmark {
                    train: FeatureSet::read(&train_file)?,
                    head: read_head(head.as_deref())?,
                    id_test: FeatureSet::read(&id)?,
                    ood: ood.iter().map(|p| FeatureSet::read(p)).collect::<Result<_>>()?,
                },
                (None, None) => generate(&load_spec(spec.as_deref())?)?.into(),
                _ => return Err(NodiError::Config("--train and --id go together".into())),
            };
            let radius = radius_for(radius, bench.head.as_ref(), &bench.train);
            let sched = schedule.build()?;
            let mut base = EvalSettings::new(radius, scoring.score_t, sched.clone());
            base.scale = scoring.scale(radius);
            base.class_mode = scoring.class_mode.into();
            base.tpr = tpr;
            let radii = if radii.is_empty() { vec![radius] } else { radii };
            let grid = AblationGrid::standard(sched.timesteps(), radii);
            let backend = match backend {
                BackendArg::Stable => EvalBackend::Stable,
                BackendArg::Model => EvalBackend::Model(train_args.config(ClassMode::ClassWise)),
            };
            let rows = run_ablation(&mut Evaluator::new(&bench, backend), &base, &grid)?;
            write_csv(std::fs::File::create(&out)?, &rows)?;
            eprintln!("wrote {} rows", rows.len());
        }
        Cmd::Synth { spec, out_dir } => {
            let data = generate(&load_spec(spec.as_deref())?)?;
            std::fs::create_dir_all(&out_dir)?;
            data.id_train.write(&out_dir.join("id_train.bin"))?;
            data.id_test.write(&out_dir.join("id_test.bin"))?;
            data.ood_near.write(&out_dir.join("ood_near.bin"))?;
            data.ood_far.write(&out_dir.join("ood_far.bin"))?;
            if let Some(head) = &data.head {
                head.write(&out_dir.join("head.bin"))?;
            }
            eprintln!("wrote benchmark to {}", out_dir.display());
        }
    }
    Ok(())
}

fn load_spec(path: Option<&Path>) -> Result<SynthSpec> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(SynthSpec::default()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
