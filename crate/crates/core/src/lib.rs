//! Diffusion-based out-of-distribution detection over precomputed features.
//!
//! A query feature is optionally bias-removed through the classifier head,
//! projected to a sphere of radius `r`, rescaled by a per-class binary search,
//! and scored by the magnitude of the noise a diffusion model would remove
//! from it. The noise comes either from a closed-form Gaussian-weighted
//! estimate over the training points ([`stable_point`]) or from a trained
//! network ([`predictor`]). Larger scores mean more out-of-distribution.
//!
//! ```
//! use nodi::pipeline::{evaluate_stable, Benchmark, EvalSettings};
//! use nodi::schedule::linear_schedule;
//! use nodi::synth::{generate, SynthSpec};
//!
//! let spec = SynthSpec { points_per_class: 40, test_per_class: 10, ood_per_split: 20, ..SynthSpec::default() };
//! let bench: Benchmark = generate(&spec)?.into();
//! let settings = EvalSettings::new(2.0, 2, linear_schedule(10, 1e-4, 1e-2)?);
//! for report in evaluate_stable(&bench, &settings)? {
//!     assert!((0.0..=1.0).contains(&report.auroc));
//! }
//! # Ok::<(), nodi::NodiError>(())
//! ```

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bias_removal;
pub mod container;
pub mod error;
pub mod estimator;
pub mod feature_store;
pub mod metrics;
pub mod pipeline;
pub mod predictor;
pub mod scale_search;
pub mod schedule;
pub mod scorer;
pub mod stable_point;
pub mod synth;

pub use error::{NodiError, Result};
pub use estimator::{ClassToken, NoiseEstimator};
