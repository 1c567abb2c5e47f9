//! Per-sample OOD score: the smallest noise-vector magnitude over classes,
//! each evaluated at that class's searched test-time scale. Higher scores
//! mean more out-of-distribution.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias_removal::CompletedHead;
use crate::error::{NodiError, Result};
use crate::estimator::{ClassToken, NoiseEstimator};
use crate::feature_store::{l2_norm, FeatureSet};
use crate::predictor::ClassMode;
use crate::scale_search::{find_scale, ScaleSearchConfig};
use crate::schedule::DiffusionSchedule;

pub const SCORE_CONVENTION: &str = "higher-is-more-ood";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: usize,
    pub score: f64,
    /// `None` under class-agnostic scoring.
    pub argmin_class: Option<usize>,
    pub r_of_y: f64,
    pub scale_err: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_norms: Option<Vec<f64>>,
    /// Classes whose scale search found no bracket.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub no_bracket: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerConfig {
    pub radius: f64,
    /// 1-based diffusion time; reads `ᾱ_{t−1}`.
    pub score_t: usize,
    pub scale: ScaleSearchConfig,
    pub class_mode: ClassMode,
    /// When false the raw (encoded) query is scored as-is with no scale search.
    pub normalize: bool,
    pub keep_per_class: bool,
}

impl ScorerConfig {
    pub fn new(radius: f64, score_t: usize) -> Self {
        ScorerConfig {
            radius,
            score_t,
            scale: ScaleSearchConfig::for_radius(radius),
            class_mode: ClassMode::ClassWise,
            normalize: true,
            keep_per_class: false,
        }
    }
}

pub struct Scorer<'h, E> {
    estimator: E,
    encoder: Option<&'h CompletedHead>,
    cfg: ScorerConfig,
    step: usize,
    abar: f64,
}

impl<'h, E: NoiseEstimator> Scorer<'h, E> {
    pub fn new(
        estimator: E,
        sched: &DiffusionSchedule,
        encoder: Option<&'h CompletedHead>,
        cfg: ScorerConfig,
    ) -> Result<Self> {
        let abar = sched.alpha_bar_for_time(cfg.score_t)?;
        cfg.scale.validate()?;
        if let Some(enc) = encoder {
            crate::error::check_dim(estimator.dim(), enc.encoded_dim())?;
        }
        Ok(Scorer {
            estimator,
            encoder,
            step: cfg.score_t - 1,
            cfg,
            abar,
        })
    }

    pub fn config(&self) -> &ScorerConfig {
        &self.cfg
    }

    fn tokens(&self) -> Vec<ClassToken> {
        match self.cfg.class_mode {
            ClassMode::ClassWise => (0..self.estimator.num_classes())
                .filter(|&c| self.estimator.has_class(c))
                .map(ClassToken::Class)
                .collect(),
            ClassMode::Agnostic => vec![ClassToken::Agnostic],
        }
    }

    pub fn score_sample(&self, y_raw: &[f64], sample_id: usize) -> Result<ScoreRecord> {
        let y = match self.encoder {
            Some(enc) => enc.encode(y_raw)?,
            None => y_raw.to_vec(),
        };
        crate::error::check_dim(self.estimator.dim(), y.len())?;

        let direction = if self.cfg.normalize {
            let n = l2_norm(&y);
            if n == 0.0 {
                return Err(NodiError::DegenerateFeature { row: sample_id });
            }
            y.iter().map(|v| v / n).collect()
        } else {
            y
        };

        let tokens = self.tokens();
        let mut norms = Vec::with_capacity(tokens.len());
        let mut scales = Vec::with_capacity(tokens.len());
        let mut no_bracket = Vec::new();
        for token in &tokens {
            let noise_fn = |x: &[f64]| self.estimator.estimate(x, self.step, *token);
            let (query, scale, err) = if self.cfg.normalize {
                let outcome = find_scale(&direction, self.cfg.radius, noise_fn, self.abar, &self.cfg.scale)?;
                if outcome.no_bracket {
                    if let ClassToken::Class(c) = token {
                        no_bracket.push(*c);
                    }
                }
                let q: Vec<f64> = direction.iter().map(|v| v * outcome.scale).collect();
                (q, outcome.scale, outcome.err)
            } else {
                (direction.clone(), 1.0, 0.0)
            };
            let eta = self.estimator.estimate(&query, self.step, *token)?;
            norms.push(l2_norm(&eta));
            scales.push((scale, err));
        }

        let (best, &score) = norms
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .ok_or(NodiError::EmptyClass(0))?;
        let argmin_class = match tokens[best] {
            ClassToken::Class(c) => Some(c),
            ClassToken::Agnostic => None,
        };
        Ok(ScoreRecord {
            sample_id,
            score,
            argmin_class,
            r_of_y: scales[best].0,
            scale_err: scales[best].1,
            per_class_norms: self.cfg.keep_per_class.then_some(norms),
            no_bracket,
        })
    }

    /// Scores every row in parallel, preserving row order. Failed rows are
    /// collected rather than aborting the set.
    pub fn score_set(&self, features: &FeatureSet) -> ScoreSet {
        let results: Vec<Result<ScoreRecord>> = features
            .vectors
            .par_iter()
            .enumerate()
            .map(|(i, v)| self.score_sample(v, i))
            .collect();
        let mut out = ScoreSet::default();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(rec) => out.records.push(rec),
                Err(e) => out.failures.push((i, e)),
            }
        }
        out
    }
}

#[derive(Debug, Default)]
pub struct ScoreSet {
    pub records: Vec<ScoreRecord>,
    pub failures: Vec<(usize, NodiError)>,
}

impl ScoreSet {
    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }
}

/// First line of a score file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFileMeta {
    pub convention: String,
    pub backend: String,
    pub split_tag: String,
    pub radius: f64,
    pub score_t: usize,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: ScoreFileMeta,
}

pub fn write_jsonl(path: &Path, meta: &ScoreFileMeta, records: &[ScoreRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut w, &MetaLine { meta: meta.clone() })?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<(Option<ScoreFileMeta>, Vec<ScoreRecord>)> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut meta = None;
    let mut records = Vec::new();
    let mut offset = 0u64;
    for line in reader.lines() {
        let line = line?;
        let at = offset;
        offset += line.len() as u64 + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line.starts_with("{\"meta\"") {
            let m: MetaLine = serde_json::from_str(&line).map_err(|e| NodiError::format(at, e.to_string()))?;
            meta = Some(m.meta);
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| NodiError::format(at, e.to_string()))?);
    }
    Ok((meta, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::linear_schedule;
    use crate::stable_point::{StablePointConfig, StablePointEstimator};

    fn two_class_sets() -> Vec<Vec<Vec<f64>>> {
        let r = 2.0;
        let ring = |phase: f64| -> Vec<Vec<f64>> {
            (0..5)
                .map(|k| {
                    let a = phase + 0.15 * k as f64;
                    vec![r * a.cos(), r * a.sin(), 0.0]
                })
                .collect()
        };
        vec![ring(0.0), ring(2.5)]
    }

    #[test]
    fn single_class_score_is_its_norm() {
        let sets = two_class_sets();
        let one = vec![sets[0].clone()];
        let sched = linear_schedule(10, 1e-4, 1e-2).unwrap();
        let est = StablePointEstimator::new(&one, 3, sched.clone(), StablePointConfig::default());
        let cfg = ScorerConfig {
            keep_per_class: true,
            ..ScorerConfig::new(2.0, 2)
        };
        let scorer = Scorer::new(&est, &sched, None, cfg).unwrap();
        let rec = scorer.score_sample(&[0.3, 0.4, 0.5], 7).unwrap();
        assert_eq!(rec.sample_id, 7);
        assert_eq!(rec.per_class_norms.as_deref(), Some(&[rec.score][..]));
        assert_eq!(rec.argmin_class, Some(0));
    }

    #[test]
    fn two_classes_take_elementwise_min() {
        let sets = two_class_sets();
        let sched = linear_schedule(10, 1e-4, 1e-2).unwrap();
        let cfg = ScorerConfig {
            keep_per_class: true,
            ..ScorerConfig::new(2.0, 3)
        };
        let est = StablePointEstimator::new(&sets, 3, sched.clone(), StablePointConfig::default());
        let both = Scorer::new(&est, &sched, None, cfg.clone()).unwrap();
        let singles: Vec<_> = sets.iter().map(|s| vec![s.clone()]).collect();
        for y in [[0.3, 0.4, 0.5], [-1.0, 0.2, 0.1], [0.0, 0.0, 1.0]] {
            let rec = both.score_sample(&y, 0).unwrap();
            let independent: Vec<f64> = singles
                .iter()
                .map(|one| {
                    let e = StablePointEstimator::new(one, 3, sched.clone(), StablePointConfig::default());
                    Scorer::new(&e, &sched, None, cfg.clone())
                        .unwrap()
                        .score_sample(&y, 0)
                        .unwrap()
                        .score
                })
                .collect();
            assert_eq!(rec.per_class_norms.as_ref().unwrap(), &independent);
            assert_eq!(rec.score, independent[0].min(independent[1]));
        }
    }

    #[test]
    fn empty_and_permuted_sets() {
        let sets = two_class_sets();
        let sched = linear_schedule(10, 1e-4, 1e-2).unwrap();
        let est = StablePointEstimator::new(&sets, 3, sched.clone(), StablePointConfig::default());
        let scorer = Scorer::new(&est, &sched, None, ScorerConfig::new(2.0, 2)).unwrap();
        let empty = FeatureSet::new(3, 1, vec![], vec![], "ood:none").unwrap();
        assert!(scorer.score_set(&empty).records.is_empty());

        let rows = vec![vec![1.0, 0.1, 0.0], vec![0.0, 1.0, 0.2], vec![-0.5, 0.4, 0.3]];
        let fs = FeatureSet::new(3, 1, rows.clone(), vec![0; 3], "x").unwrap();
        let rev = FeatureSet::new(3, 1, rows.into_iter().rev().collect(), vec![0; 3], "x").unwrap();
        let a = scorer.score_set(&fs).scores();
        let mut b = scorer.score_set(&rev).scores();
        b.reverse();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_query_collected_as_failure() {
        let sets = two_class_sets();
        let sched = linear_schedule(10, 1e-4, 1e-2).unwrap();
        let est = StablePointEstimator::new(&sets, 3, sched.clone(), StablePointConfig::default());
        let scorer = Scorer::new(&est, &sched, None, ScorerConfig::new(2.0, 2)).unwrap();
        let fs = FeatureSet::new(3, 1, vec![vec![0.0; 3], vec![1.0, 0.0, 0.0]], vec![0, 0], "x").unwrap();
        let out = scorer.score_set(&fs);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].sample_id, 1);
        assert!(matches!(out.failures[0], (0, NodiError::DegenerateFeature { .. })));
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        let meta = ScoreFileMeta {
            convention: SCORE_CONVENTION.into(),
            backend: "stable".into(),
            split_tag: "id-test".into(),
            radius: 4.0,
            score_t: 2,
        };
        let recs = vec![ScoreRecord {
            sample_id: 0,
            score: 1.5,
            argmin_class: Some(2),
            r_of_y: 8.0,
            scale_err: 0.1,
            per_class_norms: None,
            no_bracket: vec![0, 2],
        }];
        write_jsonl(&path, &meta, &recs).unwrap();
        let (m, r) = read_jsonl(&path).unwrap();
        assert_eq!(m, Some(meta));
        assert_eq!(r, recs);
    }
}
