//! Closed-form noise estimate ("stable point").
//!
//! For a query `y` and reference points `x_i` of one class, each point
//! contributes the residual `ε_i = (y − √ᾱ·x_i)/√(1−ᾱ)` with Gaussian weight
//! `exp(−‖ε_i‖²/2)`. The estimate is the weighted mean of residuals, which is
//! the unique minimizer of the weighted squared loss [`loss_at`].

use crate::error::{check_dim, NodiError, Result};
use crate::estimator::{ClassToken, NoiseEstimator};
use crate::schedule::DiffusionSchedule;

/// Log-weights this far below the maximum are dropped; `exp(-745)` is the
/// smallest subnormal double.
pub const DEFAULT_LOG_WEIGHT_FLOOR: f64 = -745.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StablePointConfig {
    /// 1-based diffusion time; reads `ᾱ_{t−1}`.
    pub score_t: usize,
    pub log_weight_floor: f64,
}

impl Default for StablePointConfig {
    fn default() -> Self {
        StablePointConfig {
            score_t: crate::schedule::DEFAULT_SCORE_T,
            log_weight_floor: DEFAULT_LOG_WEIGHT_FLOOR,
        }
    }
}

impl StablePointConfig {
    pub fn validate(&self, timesteps: usize) -> Result<()> {
        if self.score_t < 1 || self.score_t > timesteps {
            return Err(NodiError::Step {
                step: self.score_t,
                max: timesteps + 1,
            });
        }
        Ok(())
    }
}

fn check_abar(abar: f64) -> Result<()> {
    if !(abar > 0.0 && abar < 1.0) {
        return Err(NodiError::Coefficient(abar));
    }
    Ok(())
}

pub fn residual(y: &[f64], x0: &[f64], abar: f64) -> Result<Vec<f64>> {
    check_abar(abar)?;
    check_dim(y.len(), x0.len())?;
    let (a, inv_s) = (abar.sqrt(), 1.0 / (1.0 - abar).sqrt());
    Ok(y.iter().zip(x0).map(|(yi, xi)| (yi - a * xi) * inv_s).collect())
}

fn residual_sq_norm(y: &[f64], x0: &[f64], a: f64, inv_var: f64) -> f64 {
    y.iter()
        .zip(x0)
        .map(|(yi, xi)| {
            let d = yi - a * xi;
            d * d
        })
        .sum::<f64>()
        * inv_var
}

/// Normalized weights `w_i / max_j w_j` computed in log space, zero below the floor.
fn shifted_weights(y: &[f64], points: &[Vec<f64>], abar: f64, floor: f64) -> Vec<f64> {
    let a = abar.sqrt();
    let inv_var = 1.0 / (1.0 - abar);
    let log_w: Vec<f64> = points
        .iter()
        .map(|x| -0.5 * residual_sq_norm(y, x, a, inv_var))
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    log_w
        .into_iter()
        .map(|lw| {
            let shifted = lw - max;
            if shifted < floor {
                0.0
            } else {
                shifted.exp()
            }
        })
        .collect()
}

fn check_points(y: &[f64], points: &[Vec<f64>]) -> Result<()> {
    if points.is_empty() {
        return Err(NodiError::EmptyClass(0));
    }
    points.iter().try_for_each(|p| check_dim(y.len(), p.len()))
}

pub fn stable_noise(y: &[f64], class_points: &[Vec<f64>], abar: f64, cfg: &StablePointConfig) -> Result<Vec<f64>> {
    check_abar(abar)?;
    check_points(y, class_points)?;
    let weights = shifted_weights(y, class_points, abar, cfg.log_weight_floor);
    let a = abar.sqrt();
    let inv_s = 1.0 / (1.0 - abar).sqrt();

    // Σ w_i ε_i = (y·Σw − √ᾱ·Σ w_i x_i)/√(1−ᾱ)
    let mut weighted_x = vec![0.0; y.len()];
    let mut total = 0.0;
    for (w, x) in weights.iter().zip(class_points) {
        if *w == 0.0 {
            continue;
        }
        total += w;
        for (acc, xi) in weighted_x.iter_mut().zip(x) {
            *acc += w * xi;
        }
    }
    Ok(y.iter()
        .zip(&weighted_x)
        .map(|(yi, wx)| (yi - a * wx / total) * inv_s)
        .collect())
}

/// `Σ w_i ‖eta − ε_i‖² / Σ w_i`.
pub fn loss_at(eta: &[f64], y: &[f64], class_points: &[Vec<f64>], abar: f64) -> Result<f64> {
    check_abar(abar)?;
    check_points(y, class_points)?;
    check_dim(y.len(), eta.len())?;
    let weights = shifted_weights(y, class_points, abar, DEFAULT_LOG_WEIGHT_FLOOR);
    let total: f64 = weights.iter().sum();
    let mut acc = 0.0;
    for (w, x) in weights.iter().zip(class_points) {
        if *w == 0.0 {
            continue;
        }
        let eps = residual(y, x, abar)?;
        let sq: f64 = eta.iter().zip(&eps).map(|(e, r)| (e - r) * (e - r)).sum();
        acc += w * sq;
    }
    Ok(acc / total)
}

/// Stable-point noise over per-class reference sets, usable wherever a
/// trained predictor is.
#[derive(Debug, Clone)]
pub struct StablePointEstimator<'a> {
    per_class: &'a [Vec<Vec<f64>>],
    pooled: Vec<Vec<f64>>,
    schedule: DiffusionSchedule,
    cfg: StablePointConfig,
    dim: usize,
}

impl<'a> StablePointEstimator<'a> {
    pub fn new(
        per_class: &'a [Vec<Vec<f64>>],
        dim: usize,
        schedule: DiffusionSchedule,
        cfg: StablePointConfig,
    ) -> Self {
        let pooled = per_class.iter().flatten().cloned().collect();
        StablePointEstimator {
            per_class,
            pooled,
            schedule,
            cfg,
            dim,
        }
    }

    pub fn schedule(&self) -> &DiffusionSchedule {
        &self.schedule
    }

    pub fn points(&self, class: ClassToken) -> Result<&[Vec<f64>]> {
        let pts: &[Vec<f64>] = match class {
            ClassToken::Agnostic => &self.pooled,
            ClassToken::Class(c) => self.per_class.get(c).ok_or(NodiError::Index {
                what: "class",
                index: c,
                len: self.per_class.len(),
            })?,
        };
        if pts.is_empty() {
            return Err(NodiError::EmptyClass(match class {
                ClassToken::Class(c) => c,
                ClassToken::Agnostic => 0,
            }));
        }
        Ok(pts)
    }
}

impl NoiseEstimator for StablePointEstimator<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.per_class.len()
    }

    fn estimate(&self, x: &[f64], step: usize, class: ClassToken) -> Result<Vec<f64>> {
        let abar = self.schedule.alpha_bar_at(step)?;
        stable_noise(x, self.points(class)?, abar, &self.cfg)
    }

    fn has_class(&self, c: usize) -> bool {
        self.per_class.get(c).is_some_and(|p| !p.is_empty())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cfg() -> StablePointConfig {
        StablePointConfig::default()
    }

    fn sphere_point(rng: &mut ChaCha8Rng, dim: usize, r: f64) -> Vec<f64> {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x * r / n).collect()
    }

    // Direct two-pass evaluation with unshifted weights.
    fn naive(y: &[f64], pts: &[Vec<f64>], abar: f64) -> Vec<f64> {
        let eps: Vec<Vec<f64>> = pts.iter().map(|x| residual(y, x, abar).unwrap()).collect();
        let w: Vec<f64> = eps
            .iter()
            .map(|e| (-0.5 * e.iter().map(|v| v * v).sum::<f64>()).exp())
            .collect();
        let total: f64 = w.iter().sum();
        (0..y.len())
            .map(|k| eps.iter().zip(&w).map(|(e, wi)| wi * e[k]).sum::<f64>() / total)
            .collect()
    }

    #[test]
    fn residual_examples() {
        let abar: f64 = 0.81;
        let x0 = [1.0, -2.0];
        let y: Vec<f64> = x0.iter().map(|x| abar.sqrt() * x).collect();
        assert!(residual(&y, &x0, abar).unwrap().iter().all(|v| v.abs() < 1e-15));

        let r = residual(&[3.0, 4.0], &[0.0, 0.0], abar).unwrap();
        assert!((r[0] - 3.0 / 0.19f64.sqrt()).abs() < 1e-12);

        let r = residual(&[1.0, 0.0], &[1.0, 0.0], 0.99).unwrap();
        let expected = (1.0 - 0.99f64.sqrt()) / 0.1;
        assert!((r[0] - expected).abs() < 1e-12);
        assert!((r[0] - 0.05013).abs() < 1e-5);
        assert_eq!(r[1], 0.0);

        assert!(matches!(residual(&[1.0], &[1.0], 1.0), Err(NodiError::Coefficient(_))));
        assert!(matches!(residual(&[1.0], &[1.0], 0.0), Err(NodiError::Coefficient(_))));
    }

    #[test]
    fn single_point_is_its_residual() {
        let y = [0.3, -1.2, 2.0];
        let x = vec![vec![1.0, 0.0, 0.0]];
        let eta = stable_noise(&y, &x, 0.9, &cfg()).unwrap();
        let eps = residual(&y, &x[0], 0.9).unwrap();
        for (a, b) in eta.iter().zip(&eps) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!(loss_at(&eps, &y, &x, 0.9).unwrap() < 1e-28);
    }

    #[test]
    fn symmetric_pair_cancels() {
        let r = 2.0;
        let pts = vec![vec![r, 0.0], vec![-r, 0.0]];
        let y = [0.0, 1.5];
        let abar = 0.95f64;
        let eta = stable_noise(&y, &pts, abar, &cfg()).unwrap();
        assert!(eta[0].abs() < 1e-14);
        assert!((eta[1] - 1.5 / (1.0 - abar).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matches_naive_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<Vec<f64>> = (0..5).map(|_| sphere_point(&mut rng, 4, 1.0)).collect();
        let y: Vec<f64> = (0..4).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
        let fast = stable_noise(&y, &pts, 0.95, &cfg()).unwrap();
        let slow = naive(&y, &pts, 0.95);
        let scale = slow.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn far_query_does_not_underflow() {
        // every unshifted weight underflows to zero here
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let y = [300.0, 1.0];
        let eta = stable_noise(&y, &pts, 0.999, &cfg()).unwrap();
        assert!(eta.iter().all(|v| v.is_finite()));
        let nearest = residual(&y, &pts[0], 0.999).unwrap();
        for (a, b) in eta.iter().zip(&nearest) {
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn minimizer_and_stationarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> = (0..8).map(|_| sphere_point(&mut rng, 3, 1.0)).collect();
        let y = [0.2, -0.1, 0.4];
        let abar = 0.9;
        let eta = stable_noise(&y, &pts, abar, &cfg()).unwrap();
        let base = loss_at(&eta, &y, &pts, abar).unwrap();
        for _ in 0..20 {
            let u = sphere_point(&mut rng, 3, 1e-2);
            let moved: Vec<f64> = eta.iter().zip(&u).map(|(a, b)| a + b).collect();
            assert!(base <= loss_at(&moved, &y, &pts, abar).unwrap());
        }
        let h = 1e-5;
        let grad: f64 = (0..3)
            .map(|k| {
                let mut p = eta.clone();
                let mut m = eta.clone();
                p[k] += h;
                m[k] -= h;
                let g = (loss_at(&p, &y, &pts, abar).unwrap() - loss_at(&m, &y, &pts, abar).unwrap()) / (2.0 * h);
                g * g
            })
            .sum::<f64>()
            .sqrt();
        assert!(grad < 1e-6, "gradient norm {grad}");
    }

    #[test]
    fn empty_class_and_bad_time() {
        assert!(matches!(
            stable_noise(&[1.0], &[], 0.5, &cfg()),
            Err(NodiError::EmptyClass(_))
        ));
        assert!(StablePointConfig { score_t: 0, ..cfg() }.validate(10).is_err());
        assert!(StablePointConfig { score_t: 11, ..cfg() }.validate(10).is_err());
        assert!(StablePointConfig { score_t: 10, ..cfg() }.validate(10).is_ok());
    }
}
