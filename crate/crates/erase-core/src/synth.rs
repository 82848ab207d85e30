//! Seeded synthetic corpora for benchmarks and randomized oracles.
//!
//! Points are drawn from an isotropic Gaussian mixture: component centers from
//! `Normal(0, center_spread)` per coordinate, points from `Normal(center,
//! cluster_std)`, assigned round-robin so component sizes differ by at most
//! one. Everything is derived from the seed's substreams, so a (n, dim,
//! params, seed) tuple always produces the identical corpus.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Example};
use crate::rng::substream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub components: usize,
    pub center_spread: f64,
    pub cluster_std: f64,
}

impl Default for MixtureParams {
    fn default() -> Self {
        MixtureParams { components: 4, center_spread: 2.0, cluster_std: 0.15 }
    }
}

pub fn gaussian_mixture(n: usize, dim: usize, params: &MixtureParams, seed: u64) -> Result<Corpus> {
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    if dim == 0 || params.components == 0 {
        return Err(Error::InvalidParameter("dim and components must be >= 1".into()));
    }
    if !(params.center_spread.is_finite()
        && params.center_spread >= 0.0
        && params.cluster_std.is_finite()
        && params.cluster_std >= 0.0)
    {
        return Err(Error::InvalidParameter("mixture scales must be non-negative".into()));
    }
    let center_dist = Normal::new(0.0, params.center_spread.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let noise_dist = Normal::new(0.0, params.cluster_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let mut centers_rng = substream(seed, "synth:centers");
    let centers: Vec<Vec<f64>> = (0..params.components)
        .map(|_| (0..dim).map(|_| center_dist.sample(&mut centers_rng)).collect())
        .collect();

    let mut points_rng = substream(seed, "synth:points");
    let mut corpus = Corpus { examples: Default::default(), embeddings: Default::default(), dim };
    for i in 0..n {
        let id = (i + 1) as u64;
        let center = &centers[i % params.components];
        let point: Vec<f32> = center
            .iter()
            .map(|c| (c + noise_dist.sample(&mut points_rng)) as f32)
            .collect();
        corpus.examples.insert(
            id,
            Example {
                id,
                input: format!("synthetic point {id}"),
                output: format!("component {}", i % params.components),
                input_tokens: 3,
                output_tokens: 2,
            },
        );
        corpus.embeddings.insert(id, point);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_in_the_seed() {
        let p = MixtureParams::default();
        let a = gaussian_mixture(40, 8, &p, 7).unwrap();
        let b = gaussian_mixture(40, 8, &p, 7).unwrap();
        let c = gaussian_mixture(40, 8, &p, 8).unwrap();
        assert_eq!(a.embeddings, b.embeddings);
        assert_ne!(a.embeddings, c.embeddings);
        assert_eq!(a.ids(), (1..=40).collect::<Vec<u64>>());
        assert_eq!(a.dim, 8);
    }

    #[test]
    fn components_are_balanced_and_tight() {
        let p = MixtureParams { components: 4, center_spread: 5.0, cluster_std: 0.01 };
        let c = gaussian_mixture(100, 6, &p, 3).unwrap();
        // With tiny within-component noise, points of the same residue class
        // are much closer to each other than to other components.
        let emb = |id: u64| c.embedding(id).unwrap().to_vec();
        let d2 = |a: &[f32], b: &[f32]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
                .sum()
        };
        let same = d2(&emb(1), &emb(5)); // ids 1 and 5 share component 0
        let cross = d2(&emb(1), &emb(2));
        assert!(same < cross, "same-component {same} vs cross {cross}");
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let p = MixtureParams::default();
        assert!(gaussian_mixture(0, 4, &p, 1).is_err());
        assert!(gaussian_mixture(10, 0, &p, 1).is_err());
        let bad = MixtureParams { components: 0, ..p };
        assert!(gaussian_mixture(10, 4, &bad, 1).is_err());
        let nan = MixtureParams { cluster_std: f64::NAN, ..p };
        assert!(gaussian_mixture(10, 4, &nan, 1).is_err());
    }
}
