//! Reference oracles and random-instance builders shared by the integration tests.
#![allow(dead_code)]

use nodi::bias_removal::ClassifierHead;
use nodi::predictor::{Hyper, InitMode, NoisePredictor, Tape};
use nodi::scale_search::recovered_norm;
use nodi::ClassToken;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gaussian<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn sphere_point<R: Rng>(rng: &mut R, dim: usize, r: f64) -> Vec<f64> {
    let v = gaussian(rng, dim);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x * r / n).collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gaussian head; `rank` below `min(d, C)` is produced by a low-rank factorisation.
pub fn random_head<R: Rng>(rng: &mut R, d: usize, c: usize, rank: Option<usize>) -> ClassifierHead {
    let weight: Vec<f64> = match rank {
        None => gaussian(rng, d * c),
        Some(k) => {
            let (a, b) = (gaussian(rng, d * k), gaussian(rng, k * c));
            (0..d * c)
                .map(|ij| {
                    let (i, j) = (ij / c, ij % c);
                    (0..k).map(|m| a[i * k + m] * b[m * c + j]).sum()
                })
                .collect()
        }
    };
    let bias = gaussian(rng, c);
    ClassifierHead::from_row_major(d, c, &weight, &bias).unwrap()
}

/// Direct `Σ exp(−‖ε_i‖²/2)·ε_i / Σ exp(−‖ε_j‖²/2)` with no log-space shift.
pub fn naive_stable_noise(y: &[f64], points: &[Vec<f64>], abar: f64) -> Vec<f64> {
    let (a, s) = (abar.sqrt(), (1.0 - abar).sqrt());
    let mut num = vec![0.0; y.len()];
    let mut den = 0.0;
    for x in points {
        let eps: Vec<f64> = y.iter().zip(x).map(|(yi, xi)| (yi - a * xi) / s).collect();
        let w = (-0.5 * eps.iter().map(|e| e * e).sum::<f64>()).exp();
        den += w;
        for (n, e) in num.iter_mut().zip(&eps) {
            *n += w * e;
        }
    }
    assert!(den > 1e-250, "naive weights underflowed");
    num.into_iter().map(|n| n / den).collect()
}

/// Norm of the central-difference gradient of `f` at `x`.
pub fn fd_gradient_norm(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut p = x.to_vec();
    let mut sq = 0.0;
    for k in 0..x.len() {
        p[k] = x[k] + h;
        let up = f(&p);
        p[k] = x[k] - h;
        let down = f(&p);
        p[k] = x[k];
        let g = (up - down) / (2.0 * h);
        sq += g * g;
    }
    sq.sqrt()
}

/// Smallest `|r_t − r|` over `n` evenly spaced scales in `[r/2, 2r]`.
pub fn grid_scan_err<F>(y: &[f64], r: f64, noise_fn: F, abar: f64, n: usize) -> f64
where
    F: Fn(&[f64]) -> nodi::Result<Vec<f64>>,
{
    (0..n)
        .map(|i| {
            let s = 0.5 * r + 1.5 * r * i as f64 / (n - 1) as f64;
            (recovered_norm(y, s, &noise_fn, abar).unwrap() - r).abs()
        })
        .fold(f64::INFINITY, f64::min)
}

/// AUROC by counting every (ID, OOD) pair.
pub fn brute_auroc(id: &[f64], ood: &[f64]) -> f64 {
    let mut wins = 0.0;
    for o in ood {
        for i in id {
            if o > i {
                wins += 1.0;
            } else if o == i {
                wins += 0.5;
            }
        }
    }
    wins / (id.len() * ood.len()) as f64
}

/// Worst relative gap between analytic and central-difference gradients of
/// `g·M(y, t, c)` over `coords` random parameter coordinates.
pub fn predictor_gradient_gap<R: Rng>(rng: &mut R, width: usize, depth: usize, coords: usize) -> f64 {
    let (dim, timesteps, classes) = (5, 4, 3);
    let hyper = Hyper::new(dim, timesteps, classes).with_size(depth, width);
    let mut model = NoisePredictor::init(hyper, InitMode::SymmetricSmall, rng).unwrap();
    let y = gaussian(rng, dim);
    let g = gaussian(rng, dim);
    let (t, class) = (
        rng.random_range(0..timesteps),
        ClassToken::Class(rng.random_range(0..classes)),
    );

    let mut tape = Tape::default();
    model.forward_tape(&y, t, class, &mut tape).unwrap();
    let mut grad = vec![0.0; model.num_params()];
    model.backward(&tape, &g, &mut grad);

    let objective = |m: &NoisePredictor| -> f64 {
        let out = m.forward(&y, t, class).unwrap();
        out.iter().zip(&g).map(|(o, gi)| o * gi).sum()
    };
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let k = rng.random_range(0..model.num_params());
        let orig = model.params()[k];
        model.params_mut()[k] = orig + h;
        let up = objective(&model);
        model.params_mut()[k] = orig - h;
        let down = objective(&model);
        model.params_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        // coordinates the objective does not touch (unused embedding rows) must be exactly zero
        let gap = if grad[k] == 0.0 && numeric == 0.0 {
            0.0
        } else {
            (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(1e-6)
        };
        worst = worst.max(gap);
    }
    worst
}
