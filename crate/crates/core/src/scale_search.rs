//! Test-time scale search.
//!
//! A unit test direction `ŷ` is scaled by `s` so that the origin recovered
//! from the predicted noise, `(s·ŷ − √(1−ᾱ)·η(s·ŷ))/√ᾱ`, lands on the sphere
//! of radius `r`. The search bisects `s` inside `[lo·r, hi·r]`.
//!
//! Auto orientation probes both bracket ends first. When both already meet
//! the tolerance the recovery is flat across the bracket, and the search
//! resolves to the first midpoint as the verbatim loop would, rather than to
//! whichever end wins by rounding.

use serde::{Deserialize, Serialize};

use crate::error::{NodiError, Result};
use crate::feature_store::l2_norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Fixed branching: `r_t > r` raises the lower bound. Spelled `paper`.
    #[serde(rename = "paper")]
    Verbatim,
    /// Endpoints are evaluated first and the branch sense follows the bracket.
    #[default]
    Auto,
}

impl std::str::FromStr for Orientation {
    type Err = NodiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "verbatim" => Ok(Orientation::Verbatim),
            "auto" => Ok(Orientation::Auto),
            other => Err(NodiError::Config(format!("unknown orientation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleSearchConfig {
    /// Absolute tolerance on `|r_t − r|`.
    pub thr: f64,
    pub max_iters: usize,
    pub bracket_lo_factor: f64,
    pub bracket_hi_factor: f64,
    pub orientation: Orientation,
}

impl ScaleSearchConfig {
    /// Defaults for radius `r`: `thr = 1e-3·r`, 50 iterations, bracket `[r/2, 2r]`.
    pub fn for_radius(r: f64) -> Self {
        ScaleSearchConfig {
            thr: 1e-3 * r,
            max_iters: 50,
            bracket_lo_factor: 0.5,
            bracket_hi_factor: 2.0,
            orientation: Orientation::Auto,
        }
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.thr > 0.0) {
            return Err(NodiError::Config(format!("thr must be > 0, got {}", self.thr)));
        }
        if self.max_iters < 1 {
            return Err(NodiError::Config("max_iters must be >= 1".into()));
        }
        if !(self.bracket_lo_factor > 0.0 && self.bracket_lo_factor < self.bracket_hi_factor) {
            return Err(NodiError::Config(format!(
                "need 0 < lo_factor < hi_factor, got {} and {}",
                self.bracket_lo_factor, self.bracket_hi_factor
            )));
        }
        Ok(())
    }
}

/// One midpoint evaluation of the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleStep {
    pub scale: f64,
    pub recovered: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleOutcome {
    pub scale: f64,
    pub err: f64,
    /// Midpoint evaluations performed; endpoint probes are not counted.
    pub iters: usize,
    /// Set when neither bracket endpoint pair straddles `r`.
    pub no_bracket: bool,
    pub trace: Vec<ScaleStep>,
}

pub fn recovered_norm<F>(y: &[f64], scale: f64, noise_fn: F, abar: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(scale > 0.0) {
        return Err(NodiError::Config(format!("scale must be > 0, got {scale}")));
    }
    if !(abar > 0.0 && abar < 1.0) {
        return Err(NodiError::Coefficient(abar));
    }
    let scaled: Vec<f64> = y.iter().map(|v| v * scale).collect();
    let eta = noise_fn(&scaled)?;
    crate::error::check_dim(scaled.len(), eta.len())?;
    let (sn, inv_a) = ((1.0 - abar).sqrt(), 1.0 / abar.sqrt());
    let x0: Vec<f64> = scaled.iter().zip(&eta).map(|(s, e)| (s - sn * e) * inv_a).collect();
    Ok(l2_norm(&x0))
}

pub fn find_scale<F>(y: &[f64], r: f64, noise_fn: F, abar: f64, cfg: &ScaleSearchConfig) -> Result<ScaleOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    if !(r > 0.0) {
        return Err(NodiError::Config(format!("radius must be > 0, got {r}")));
    }
    let lo = cfg.bracket_lo_factor * r;
    let hi = cfg.bracket_hi_factor * r;
    let eval = |s: f64| recovered_norm(y, s, &noise_fn, abar);
    match cfg.orientation {
        Orientation::Verbatim => verbatim_search(r, lo, hi, eval, cfg),
        Orientation::Auto => auto_search(r, lo, hi, eval, cfg),
    }
}

fn verbatim_search(
    r: f64,
    mut lo: f64,
    mut hi: f64,
    eval: impl Fn(f64) -> Result<f64>,
    cfg: &ScaleSearchConfig,
) -> Result<ScaleOutcome> {
    let mut trace = Vec::new();
    let mut err = f64::INFINITY;
    let mut scale = 0.5 * (lo + hi);
    while err > cfg.thr && trace.len() < cfg.max_iters {
        scale = 0.5 * (lo + hi);
        let rt = eval(scale)?;
        err = (rt - r).abs();
        trace.push(ScaleStep {
            scale,
            recovered: rt,
            lo,
            hi,
        });
        if rt > r {
            lo = scale;
        } else {
            hi = scale;
        }
    }
    Ok(ScaleOutcome {
        scale,
        err,
        iters: trace.len(),
        no_bracket: false,
        trace,
    })
}

fn auto_search(
    r: f64,
    mut lo: f64,
    mut hi: f64,
    eval: impl Fn(f64) -> Result<f64>,
    cfg: &ScaleSearchConfig,
) -> Result<ScaleOutcome> {
    let mut f_lo = eval(lo)? - r;
    let f_hi = eval(hi)? - r;
    // both ends within tolerance: the whole bracket satisfies the constraint
    let flat = f_lo.abs() <= cfg.thr && f_hi.abs() <= cfg.thr;
    if f_lo * f_hi > 0.0 && !flat {
        let (scale, err) = if f_lo.abs() <= f_hi.abs() {
            (lo, f_lo.abs())
        } else {
            (hi, f_hi.abs())
        };
        return Ok(ScaleOutcome {
            scale,
            err,
            iters: 0,
            no_bracket: true,
            trace: Vec::new(),
        });
    }
    let mut trace = Vec::new();
    let mut scale = 0.5 * (lo + hi);
    let mut err = f64::INFINITY;
    while err > cfg.thr && trace.len() < cfg.max_iters {
        scale = 0.5 * (lo + hi);
        let rt = eval(scale)?;
        let f_mid = rt - r;
        err = f_mid.abs();
        trace.push(ScaleStep {
            scale,
            recovered: rt,
            lo,
            hi,
        });
        // keep the half whose endpoints still straddle r
        if (f_mid < 0.0) == (f_lo < 0.0) && f_lo != 0.0 {
            lo = scale;
            f_lo = f_mid;
        } else {
            hi = scale;
        }
    }
    Ok(ScaleOutcome {
        scale,
        err,
        iters: trace.len(),
        no_bracket: false,
        trace,
    })
}
