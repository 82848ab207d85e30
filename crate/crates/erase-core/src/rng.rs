//! Labeled RNG substreams.
//!
//! Every randomized operation takes a single root seed. Independent random
//! decisions (lattice phase, initial centroid choice, deletion stream, the
//! fresh seed for retrain number i) each read from their own substream,
//! derived by hashing the root seed together with a short label. This keeps
//! every command reproducible from one `--seed` while guaranteeing that, for
//! example, drawing a longer deletion stream does not perturb the phase.
//!
//! Documented labels: `"phase"`, `"seeds"`, `"stream"`, `"retrain:<i>"`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(root_seed: u64, label: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(root_seed.to_le_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

/// Deterministic substream for (root seed, label).
pub fn substream(root_seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(root_seed, label))
}

/// 64-bit tag identifying a substream, recorded in snapshots for provenance.
pub fn substream_tag(root_seed: u64, label: &str) -> u64 {
    let d = digest(root_seed, label);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}
