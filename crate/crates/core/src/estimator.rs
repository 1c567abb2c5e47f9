//! Common interface over the closed-form estimate and the trained network.

use crate::error::Result;

/// Class conditioning: a specific class, or the pooled "agnostic" token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassToken {
    Class(usize),
    Agnostic,
}

/// Predicts the noise component of a point at a zero-based diffusion step.
pub trait NoiseEstimator: Sync {
    fn dim(&self) -> usize;

    fn num_classes(&self) -> usize;

    fn estimate(&self, x: &[f64], step: usize, class: ClassToken) -> Result<Vec<f64>>;

    /// Whether class `c` can be scored; empty reference classes cannot.
    fn has_class(&self, c: usize) -> bool {
        c < self.num_classes()
    }
}

impl<T: NoiseEstimator + ?Sized> NoiseEstimator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn estimate(&self, x: &[f64], step: usize, class: ClassToken) -> Result<Vec<f64>> {
        (**self).estimate(x, step, class)
    }

    fn has_class(&self, c: usize) -> bool {
        (**self).has_class(c)
    }
}
