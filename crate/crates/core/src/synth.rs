//! Seeded synthetic benchmark: Gaussian class clusters plus near and far OOD
//! clusters, with a least-squares linear head fit on the training split.
//!
//! Every sample is drawn as `m·(μ + σ·n) + o` where `μ` is its cluster mean,
//! `m = exp(τ·g)` is a per-sample magnitude factor carrying no class
//! information, and `o` is an offset shared by all samples. ID means sit on
//! random unit directions at evenly spaced radii. Near-OOD means interpolate
//! between two ID means; far-OOD means sit on fresh random directions.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bias_removal::ClassifierHead;
use crate::error::{NodiError, Result};
use crate::feature_store::FeatureSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub dim: usize,
    pub classes: usize,
    pub points_per_class: usize,
    pub test_per_class: usize,
    pub ood_per_split: usize,
    /// Per-coordinate standard deviation `σ` around each mean.
    pub spread: f64,
    pub radius_lo: f64,
    pub radius_hi: f64,
    /// Interpolation weight between the two ID means of a near-OOD cluster.
    pub near_mix: f64,
    /// Far-OOD mean radius as a multiple of the mean ID radius.
    pub far_offset: f64,
    /// Log-scale standard deviation `τ` of the per-sample magnitude factor.
    pub magnitude_jitter: f64,
    /// Norm of the shared offset `o`.
    pub feature_offset: f64,
    /// Standard deviation of the random term added to the fitted head bias.
    pub bias_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dim: 16,
            classes: 4,
            points_per_class: 500,
            test_per_class: 125,
            ood_per_split: 500,
            spread: 0.35,
            radius_lo: 3.0,
            radius_hi: 5.0,
            near_mix: 0.5,
            far_offset: 1.0,
            magnitude_jitter: 0.3,
            feature_offset: 3.0,
            bias_scale: 0.05,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.classes < 1 || self.points_per_class < 1 {
            return Err(NodiError::Config(format!(
                "need dim >= 2, classes >= 1, points_per_class >= 1; got {}, {}, {}",
                self.dim, self.classes, self.points_per_class
            )));
        }
        if !(self.spread > 0.0) {
            return Err(NodiError::Config(format!("spread must be > 0, got {}", self.spread)));
        }
        if !(self.radius_lo > 0.0 && self.radius_hi >= self.radius_lo) {
            return Err(NodiError::Config("need 0 < radius_lo <= radius_hi".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub id_train: FeatureSet,
    pub id_test: FeatureSet,
    pub ood_near: FeatureSet,
    pub ood_far: FeatureSet,
    /// `None` when there are fewer than two classes.
    pub head: Option<ClassifierHead>,
    pub class_means: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, mean: &[f64], spec: &SynthSpec, offset: &[f64]) -> Vec<f64> {
    let m = (spec.magnitude_jitter * rng.sample::<f64, _>(StandardNormal)).exp();
    mean.iter()
        .zip(offset)
        .map(|(mu, o)| m * (mu + spec.spread * rng.sample::<f64, _>(StandardNormal)) + o)
        .collect()
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (d, c) = (spec.dim, spec.classes);

    let radii: Vec<f64> = (0..c)
        .map(|k| {
            if c == 1 {
                spec.radius_lo
            } else {
                spec.radius_lo + (spec.radius_hi - spec.radius_lo) * k as f64 / (c - 1) as f64
            }
        })
        .collect();
    let class_means: Vec<Vec<f64>> = radii
        .iter()
        .map(|r| unit(&mut rng, d).into_iter().map(|u| u * r).collect())
        .collect();
    let offset: Vec<f64> = unit(&mut rng, d).into_iter().map(|u| u * spec.feature_offset).collect();
    let mean_radius = radii.iter().sum::<f64>() / c as f64;

    let split = |per_class: usize, tag: &str, rng: &mut ChaCha8Rng| -> Result<FeatureSet> {
        let mut vectors = Vec::with_capacity(per_class * c);
        let mut labels = Vec::with_capacity(per_class * c);
        for (k, mu) in class_means.iter().enumerate() {
            for _ in 0..per_class {
                vectors.push(draw(rng, mu, spec, &offset));
                labels.push(k);
            }
        }
        FeatureSet::new(d, c, vectors, labels, tag)
    };
    let id_train = split(spec.points_per_class, "id-train", &mut rng)?;
    let id_test = split(spec.test_per_class, "id-test", &mut rng)?;

    // near-OOD: one cluster per unordered class pair (or one off-axis blend for C = 1)
    let near_means: Vec<Vec<f64>> = if c >= 2 {
        let mut out = Vec::new();
        for i in 0..c {
            for j in i + 1..c {
                out.push(
                    class_means[i]
                        .iter()
                        .zip(&class_means[j])
                        .map(|(a, b)| (1.0 - spec.near_mix) * a + spec.near_mix * b)
                        .collect(),
                );
            }
        }
        out
    } else {
        let other: Vec<f64> = unit(&mut rng, d).into_iter().map(|u| u * radii[0]).collect();
        vec![class_means[0]
            .iter()
            .zip(&other)
            .map(|(a, b)| (1.0 - spec.near_mix) * a + spec.near_mix * b)
            .collect()]
    };
    let far_means: Vec<Vec<f64>> = (0..c.max(2))
        .map(|_| {
            unit(&mut rng, d)
                .into_iter()
                .map(|u| u * spec.far_offset * mean_radius)
                .collect()
        })
        .collect();

    let ood = |means: &[Vec<f64>], tag: &str, rng: &mut ChaCha8Rng| -> Result<FeatureSet> {
        let vectors: Vec<Vec<f64>> = (0..spec.ood_per_split)
            .map(|i| draw(rng, &means[i % means.len()], spec, &offset))
            .collect();
        FeatureSet::new(d, c, vectors, vec![0; spec.ood_per_split], tag)
    };
    let ood_near = ood(&near_means, "ood:near", &mut rng)?;
    let ood_far = ood(&far_means, "ood:far", &mut rng)?;

    let head = if c >= 2 {
        Some(fit_head(&id_train, spec.bias_scale, &mut rng)?)
    } else {
        None
    };

    Ok(SynthData {
        id_train,
        id_test,
        ood_near,
        ood_far,
        head,
        class_means,
        offset,
    })
}

/// Least-squares affine map from features to one-hot labels, plus Gaussian
/// jitter on the bias.
fn fit_head(train: &FeatureSet, bias_scale: f64, rng: &mut ChaCha8Rng) -> Result<ClassifierHead> {
    let (n, d, c) = (train.len(), train.dim, train.num_classes);
    let design = DMatrix::from_fn(n, d + 1, |i, j| if j < d { train.vectors[i][j] } else { 1.0 });
    let targets = DMatrix::from_fn(n, c, |i, k| if train.labels[i] == k { 1.0 } else { 0.0 });
    let coef = design
        .svd(true, true)
        .solve(&targets, 1e-12)
        .map_err(|e| NodiError::InvalidHead(format!("least-squares fit failed: {e}")))?;
    let weight = coef.rows(0, d).into_owned();
    let bias = coef
        .row(d)
        .transpose()
        .map(|b| b + bias_scale * rng.sample::<f64, _>(StandardNormal));
    ClassifierHead::new(weight, bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias_removal::{complete_head, DEFAULT_RANK_TOL};

    fn small() -> SynthSpec {
        SynthSpec {
            points_per_class: 20,
            test_per_class: 5,
            ood_per_split: 10,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_by_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.id_train.to_bytes().unwrap(), b.id_train.to_bytes().unwrap());
        assert_eq!(a.ood_far.to_bytes().unwrap(), b.ood_far.to_bytes().unwrap());
        assert_eq!(
            a.head.as_ref().unwrap().to_bytes().unwrap(),
            b.head.as_ref().unwrap().to_bytes().unwrap()
        );
        let c = generate(&SynthSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a.id_train, c.id_train);
    }

    #[test]
    fn labels_are_balanced() {
        let data = generate(&small()).unwrap();
        for k in 0..4 {
            assert_eq!(data.id_train.labels.iter().filter(|&&l| l == k).count(), 20);
            assert_eq!(data.id_test.labels.iter().filter(|&&l| l == k).count(), 5);
        }
    }

    #[test]
    fn vanishing_spread_collapses_to_means() {
        let spec = SynthSpec {
            spread: 1e-300,
            magnitude_jitter: 0.0,
            ..small()
        };
        let data = generate(&spec).unwrap();
        for (v, &l) in data.id_train.vectors.iter().zip(&data.id_train.labels) {
            for ((x, mu), o) in v.iter().zip(&data.class_means[l]).zip(&data.offset) {
                assert_eq!(*x, mu + o);
            }
        }
    }

    #[test]
    fn narrow_head_is_rank_deficient() {
        let spec = SynthSpec {
            dim: 3,
            classes: 6,
            ..small()
        };
        let data = generate(&spec).unwrap();
        let head = data.head.unwrap();
        assert!(head.bias().iter().any(|b| *b != 0.0));
        let ch = complete_head(&head, DEFAULT_RANK_TOL).unwrap();
        assert_eq!(ch.numerical_rank(), 3);
        assert_eq!(ch.encoded_dim(), 6);
    }

    #[test]
    fn single_class_has_no_head() {
        let data = generate(&SynthSpec { classes: 1, ..small() }).unwrap();
        assert!(data.head.is_none());
        assert_eq!(data.ood_near.len(), 10);
    }

    #[test]
    fn rejects_invalid_spec() {
        assert!(generate(&SynthSpec { dim: 1, ..small() }).is_err());
        assert!(generate(&SynthSpec { spread: 0.0, ..small() }).is_err());
    }
}
