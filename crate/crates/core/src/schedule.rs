//! Forward diffusion coefficients.
//!
//! Arrays are zero-based: `alpha_bar[s] = Π_{i=0..=s} alpha[i]`. A user-facing
//! diffusion time `t` (1-based) reads `alpha_bar[t - 1]`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, NodiError, Result};

pub const DEFAULT_TIMESTEPS: usize = 10;
pub const DEFAULT_BETA_LO: f64 = 1e-4;
pub const DEFAULT_BETA_HI: f64 = 1e-2;
/// 1-based scoring time.
pub const DEFAULT_SCORE_T: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// How the linear endpoints are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EndpointReading {
    /// The endpoints bound the per-step noise variance `β = 1 − α`.
    #[default]
    Beta,
    /// The endpoints bound `α` itself.
    AlphaLiteral,
}

impl DiffusionSchedule {
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(NodiError::Schedule("need at least one step".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(NodiError::Schedule(format!("beta {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(DiffusionSchedule { beta, alpha, alpha_bar })
    }

    pub fn timesteps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_step(&self, step: usize) -> Result<()> {
        if step >= self.timesteps() {
            return Err(NodiError::Step {
                step,
                max: self.timesteps(),
            });
        }
        Ok(())
    }

    /// `ᾱ` at a zero-based step.
    pub fn alpha_bar_at(&self, step: usize) -> Result<f64> {
        self.check_step(step)?;
        Ok(self.alpha_bar[step])
    }

    /// `ᾱ_{t−1}` for a 1-based diffusion time `t`.
    pub fn alpha_bar_for_time(&self, t: usize) -> Result<f64> {
        if t == 0 || t > self.timesteps() {
            return Err(NodiError::Step {
                step: t,
                max: self.timesteps() + 1,
            });
        }
        Ok(self.alpha_bar[t - 1])
    }
}

pub fn linear_schedule(timesteps: usize, lo: f64, hi: f64) -> Result<DiffusionSchedule> {
    linear_schedule_with(timesteps, lo, hi, EndpointReading::Beta)
}

pub fn linear_schedule_with(timesteps: usize, lo: f64, hi: f64, reading: EndpointReading) -> Result<DiffusionSchedule> {
    if timesteps < 1 {
        return Err(NodiError::Schedule("T must be >= 1".into()));
    }
    if !(lo > 0.0 && lo < hi && hi < 1.0) {
        return Err(NodiError::Schedule(format!(
            "need 0 < lo < hi < 1, got lo={lo} hi={hi}"
        )));
    }
    let ramp: Vec<f64> = if timesteps == 1 {
        vec![lo]
    } else {
        let step = (hi - lo) / (timesteps - 1) as f64;
        (0..timesteps).map(|i| lo + i as f64 * step).collect()
    };
    let beta = match reading {
        EndpointReading::Beta => ramp,
        EndpointReading::AlphaLiteral => ramp.into_iter().map(|a| 1.0 - a).collect(),
    };
    DiffusionSchedule::from_betas(beta)
}

/// `√ᾱ_s·x0 + √(1−ᾱ_s)·eps` at zero-based step `s`.
pub fn perturb(x0: &[f64], step: usize, eps: &[f64], sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    check_dim(x0.len(), eps.len())?;
    let abar = sched.alpha_bar_at(step)?;
    let (a, s) = (abar.sqrt(), (1.0 - abar).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + s * e).collect())
}

/// Runs the single-step recursion `x ← √α_i·x + √(1−α_i)·ε_i` for
/// `i = 0..=step` with fresh Gaussian draws.
pub fn diffuse_iteratively<R: Rng + ?Sized>(
    x0: &[f64],
    step: usize,
    sched: &DiffusionSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    sched.check_step(step)?;
    let mut x = x0.to_vec();
    for &a in &sched.alpha[..=step] {
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        for v in x.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v = sa * *v + sn * e;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn default_schedule_endpoints() {
        let s = linear_schedule(10, 1e-4, 1e-2).unwrap();
        assert_eq!(s.timesteps(), 10);
        assert!((s.beta()[0] - 1e-4).abs() < 1e-18);
        assert!((s.beta()[1] - 1.2e-3).abs() < 1e-15);
        assert!((s.beta()[9] - 1e-2).abs() < 1e-15);
        // direct product over the ten (1 - β_i)
        let direct: f64 = (0..10).map(|i| 1.0 - (1e-4 + i as f64 * 1.1e-3)).product();
        assert!((s.alpha_bar()[9] - direct).abs() < 1e-12);
        assert!((s.alpha_bar()[9] - 0.9506).abs() < 1e-3);
    }

    #[test]
    fn single_step() {
        let s = linear_schedule(1, 0.02, 0.5).unwrap();
        assert_eq!(s.beta(), &[0.02]);
        assert!((s.alpha_bar()[0] - 0.98).abs() < 1e-15);
    }

    #[test]
    fn bounds_and_steps_validated() {
        assert!(matches!(linear_schedule(0, 0.1, 0.2), Err(NodiError::Schedule(_))));
        assert!(matches!(linear_schedule(3, 0.2, 0.1), Err(NodiError::Schedule(_))));
        assert!(matches!(linear_schedule(3, 0.0, 0.1), Err(NodiError::Schedule(_))));
        assert!(matches!(linear_schedule(3, 0.1, 1.0), Err(NodiError::Schedule(_))));
        let s = linear_schedule(3, 0.1, 0.2).unwrap();
        assert!(matches!(
            perturb(&[1.0], 3, &[0.0], &s),
            Err(NodiError::Step { step: 3, max: 3 })
        ));
        assert!(s.alpha_bar_for_time(0).is_err());
        assert_eq!(s.alpha_bar_for_time(3).unwrap(), s.alpha_bar()[2]);
    }

    #[test]
    fn alpha_literal_reading_flips_ramp() {
        let s = linear_schedule_with(3, 0.1, 0.3, EndpointReading::AlphaLiteral).unwrap();
        assert!((s.alpha()[0] - 0.1).abs() < 1e-15);
        assert!((s.alpha()[2] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn noiseless_perturb_and_first_step() {
        let s = linear_schedule(10, 1e-4, 1e-2).unwrap();
        let x0 = [1.0, -2.0, 0.5];
        let out = perturb(&x0, 4, &[0.0; 3], &s).unwrap();
        let a = s.alpha_bar()[4].sqrt();
        for (o, x) in out.iter().zip(x0) {
            assert_eq!(*o, a * x);
        }
        let eps = [0.3, 0.1, -0.2];
        let first = perturb(&x0, 0, &eps, &s).unwrap();
        let alpha0 = 1.0 - s.beta()[0];
        for ((o, x), e) in first.iter().zip(x0).zip(eps) {
            assert!((o - (alpha0.sqrt() * x + (1.0 - alpha0).sqrt() * e)).abs() < 1e-15);
        }
    }

    #[test]
    fn perturb_inverts_to_eps() {
        let s = linear_schedule(10, 1e-4, 1e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for step in 0..10 {
            let x0: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
            let eps: Vec<f64> = (0..5).map(|_| rng.sample(StandardNormal)).collect();
            let xt = perturb(&x0, step, &eps, &s).unwrap();
            let abar = s.alpha_bar()[step];
            for i in 0..5 {
                let back = (xt[i] - abar.sqrt() * x0[i]) / (1.0 - abar).sqrt();
                assert!((back - eps[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alpha_bar_strictly_decreasing_in_unit_interval() {
        let s = linear_schedule(25, 1e-3, 0.2).unwrap();
        assert!(s.alpha_bar().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar().iter().all(|a| *a > 0.0 && *a < 1.0));
        for t in 1..25 {
            assert_eq!(s.alpha_bar()[t], s.alpha_bar()[t - 1] * s.alpha()[t]);
        }
    }
}
