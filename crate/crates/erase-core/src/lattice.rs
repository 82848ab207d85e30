//! The randomly-phased quantization lattice.
//!
//! Centroids are snapped to `epsilon * Z^d + theta`. The random phase `theta`
//! is what makes deletion stability an event of probability ~ 1 - O(1/(eps n))
//! instead of an adversarial coin flip: a cluster mean is only fragile when it
//! happens to sit near a cell boundary, and the phase places boundaries
//! uniformly at random.
//!
//! Quantization is done in f64 per coordinate as `eps * round((x - t)/eps) + t`
//! with ties rounding half away from zero (`f64::round` semantics). The same
//! expression is used everywhere a centroid is produced — training, deletion
//! certificates, replay oracles — so equality checks can be bitwise.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which cell the phase is drawn from. Either way the stored `theta` is
/// reduced into `[0, epsilon)` per coordinate, which leaves the lattice
/// itself unchanged; the two options differ only in the induced distribution
/// over lattices (and hence in deletion-stability constants) when `1/epsilon`
/// is not an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseCell {
    /// `theta ~ Unif([0, epsilon)^d)` — one fundamental cell, the default.
    #[default]
    Fundamental,
    /// `theta ~ Unif([-1/2, 1/2)^d)`, reduced mod epsilon for storage.
    CenteredUnit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSpec {
    pub epsilon: f64,
    /// Per-coordinate phase, each component in `[0, epsilon)`.
    pub theta: Vec<f64>,
    pub dim: usize,
    /// Tag of the RNG substream that produced `theta` (provenance only).
    pub seed_tag: u64,
    pub cell: PhaseCell,
}

/// Draw a phase for a `dim`-dimensional lattice with spacing `epsilon`.
pub fn sample_phase(
    dim: usize,
    epsilon: f64,
    cell: PhaseCell,
    rng: &mut impl Rng,
    seed_tag: u64,
) -> Result<LatticeSpec> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be finite and > 0, got {epsilon}")));
    }
    if dim == 0 {
        return Err(Error::InvalidParameter("lattice dim must be >= 1".into()));
    }
    let theta = (0..dim)
        .map(|_| {
            let u: f64 = rng.random();
            match cell {
                PhaseCell::Fundamental => u * epsilon,
                PhaseCell::CenteredUnit => (u - 0.5).rem_euclid(epsilon),
            }
        })
        .collect();
    Ok(LatticeSpec { epsilon, theta, dim, seed_tag, cell })
}

impl LatticeSpec {
    /// Phase with every component zero — used by tests and replay fixtures.
    pub fn with_zero_phase(dim: usize, epsilon: f64) -> Self {
        LatticeSpec { epsilon, theta: vec![0.0; dim], dim, seed_tag: 0, cell: PhaseCell::Fundamental }
    }

    /// Snap one coordinate to the lattice.
    #[inline]
    pub fn quantize_coord(&self, x: f64, i: usize) -> f64 {
        let t = self.theta[i];
        self.epsilon * ((x - t) / self.epsilon).round() + t
    }

    /// Snap a point to the nearest lattice point (per coordinate, ties away
    /// from zero in the scaled coordinate). Errors on non-finite input.
    pub fn quantize(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.dim {
            return Err(Error::DimMismatch { id: 0, got: point.len(), expected: self.dim });
        }
        if point.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(point.iter().enumerate().map(|(i, &x)| self.quantize_coord(x, i)).collect())
    }
}
