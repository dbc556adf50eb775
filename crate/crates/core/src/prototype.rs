//! Fixed prototype mixture with non-overlapping binary class means.
//!
//! The mixture has one unit-covariance Gaussian component per class. Component
//! `c` is centered at a binary vector `m_c` that activates a contiguous block
//! of `p = K / C` coordinates, so the supports of different classes are
//! disjoint and together cover all `K` embedding dimensions.

use crate::error::{Error, Result};

/// The fixed multi-modal prototype distribution.
///
/// Immutable after construction; components all carry the identity covariance,
/// which is represented implicitly.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeDistribution {
    classes: usize,
    dim: usize,
    active_per_class: usize,
    means: Vec<Vec<f64>>,
}

impl PrototypeDistribution {
    /// Build the prototype for `classes` classes in a `dim`-dimensional
    /// embedding space.
    ///
    /// Component `c` has ones exactly on coordinates `[p*c, p*(c+1))` with
    /// `p = dim / classes`. Requires `dim >= classes` and `classes | dim`.
    pub fn build(classes: usize, dim: usize) -> Result<Self> {
        if classes < 1 {
            return Err(Error::Dimension("class count must be >= 1".into()));
        }
        if dim < classes {
            return Err(Error::Dimension(format!(
                "embedding dim {dim} smaller than class count {classes}"
            )));
        }
        if dim % classes != 0 {
            return Err(Error::Dimension(format!(
                "embedding dim {dim} not divisible by class count {classes}"
            )));
        }
        let p = dim / classes;
        let means = (0..classes)
            .map(|c| {
                (0..dim)
                    .map(|i| if i >= p * c && i < p * (c + 1) { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        Ok(Self { classes, dim, active_per_class: p, means })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Activated coordinates per class (`p`).
    pub fn active_per_class(&self) -> usize {
        self.active_per_class
    }

    /// The stored mean vector `m_c`.
    pub fn class_mean(&self, class: usize) -> Result<&[f64]> {
        self.means
            .get(class)
            .map(|m| m.as_slice())
            .ok_or_else(|| Error::Index(format!("class {class} out of range 0..{}", self.classes)))
    }

    /// Euclidean distance between two component means. The covariance term of
    /// the 2-Wasserstein distance vanishes because both components share the
    /// identity covariance, so this equals `sqrt(2p)` for distinct classes.
    pub fn component_distance(&self, c1: usize, c2: usize) -> Result<f64> {
        let a = self.class_mean(c1)?;
        let b = self.class_mean(c2)?;
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        Ok(sq.sqrt())
    }
}
