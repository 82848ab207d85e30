//! Quantized k-means with O(T·k·d) deletion certificates.
//!
//! Training is Lloyd's algorithm with two twists that buy cheap exact
//! deletion:
//!
//! 1. every centroid is snapped to the random-phase lattice before it is
//!    used, so small perturbations of a cluster mean usually round to the
//!    same point;
//! 2. the per-iteration mean is smoothed toward the previous quantized
//!    centroid, `(sum + gamma * prev) / (count + gamma)`, which both damps
//!    the influence of any single example and makes the empty-cluster case
//!    (`count == 0`) degrade gracefully to "keep the previous centroid".
//!
//! The model records everything needed to re-derive one example's influence
//! without touching the rest of the corpus: per-iteration sums/counts, the
//! per-example assignment trace, and the quantized centroids. A deletion
//! certificate replays only the victim's own contributions; when every
//! downdated mean still quantizes to the recorded centroid (bitwise), the
//! trained model is exactly what training on the surviving corpus with the
//! same phase and same seed examples would have produced.
//!
//! Initial centroids are k distinct examples drawn uniformly (not D²-weighted)
//! so that a deletion of a non-seed example provably cannot change the
//! initialization given the retained randomness.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore};

use crate::corpus::Corpus;
use crate::lattice::{sample_phase, LatticeSpec, PhaseCell};
use crate::rng::{substream, substream_tag};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    /// Smoothing weight toward the previous quantized centroid. Must be > 0.
    pub gamma: f64,
    pub cell: PhaseCell,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { gamma: 1.0, cell: PhaseCell::Fundamental }
    }
}

/// Per-cluster bookkeeping for one Lloyd iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterIterStats {
    /// Coordinate-wise sum (f64) of the embeddings assigned this iteration.
    /// Downdated in place when a stable deletion removes a member.
    pub sum: Vec<f64>,
    pub count: u64,
    /// Smoothed mean before quantization. Kept for inspection; deletions do
    /// not maintain it (certificates recompute the mean from `sum`).
    pub centroid_unquantized: Vec<f64>,
    pub centroid_quantized: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub id: u64,
    /// L2 distance to the final quantized centroid of the member's cluster.
    pub dist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QkmModel {
    pub spec: LatticeSpec,
    pub k: usize,
    pub iters: usize,
    pub gamma: f64,
    pub root_seed: u64,
    /// The k examples whose quantized embeddings seeded the centroids.
    pub seed_ids: Vec<u64>,
    /// Quantized seed embeddings (iteration-0 centroids).
    pub init_centroids: Vec<Vec<f64>>,
    /// `per_iter[t][j]`: stats for cluster j at iteration t (0-based).
    pub per_iter: Vec<Vec<ClusterIterStats>>,
    /// Example id -> cluster index per iteration; length `iters`.
    pub assign_trace: BTreeMap<u64, Vec<usize>>,
    /// Example id -> cluster under the final centroids.
    pub final_assign: BTreeMap<u64, usize>,
    /// Quantized centroids after the last iteration.
    pub final_centroids: Vec<Vec<f64>>,
    /// Per final cluster: members sorted ascending by (distance, id).
    pub sorted_members: Vec<Vec<Member>>,
    pub live_ids: BTreeSet<u64>,
    /// Cumulative d-dimensional distance evaluations performed by training
    /// and by deletions applied to this model.
    pub op_counter: u64,
}

/// Why a deletion did or did not require retraining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// Every downdated mean re-quantizes to the recorded centroid: the model
    /// is bitwise what training without the victim would have produced.
    Stable,
    /// The victim seeded a centroid; its influence cannot be subtracted.
    SeedHit,
    /// First iteration/cluster whose quantized centroid moves (0-based).
    CentroidShift { iter: usize, cluster: usize },
}

/// Outcome of applying one deletion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Model unchanged (minus the victim's bookkeeping); selection unchanged.
    Stable,
    /// Model centroids unchanged but the victim headed a cluster list, so the
    /// selected exemplars changed.
    ExemplarReplaced,
    /// Certificate failed (centroid shift); retrained with fresh randomness.
    Retrained,
    /// Victim was a seed example; retrained with fresh randomness.
    SeedHitRetrained,
}

impl OutcomeKind {
    pub fn is_retrain(self) -> bool {
        matches!(self, OutcomeKind::Retrained | OutcomeKind::SeedHitRetrained)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeletionStep {
    pub kind: OutcomeKind,
    pub certificate: Certificate,
    /// Distance evaluations spent on this request (certificate, plus the
    /// full retrain when one was needed).
    pub distance_evals: u64,
}

#[inline]
fn dist2(x: &[f32], c: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(c) {
        let d = f64::from(*a) - b;
        acc += d * d;
    }
    acc
}

/// Index of the nearest centroid (squared L2; ties keep the lower index)
/// plus that squared distance. Adds k to `evals`.
pub(crate) fn nearest(x: &[f32], centroids: &[Vec<f64>], evals: &mut u64) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        *evals += 1;
        let d = dist2(x, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    (best, best_d)
}

/// First k entries of a seeded Fisher–Yates shuffle of `ids`.
pub(crate) fn sample_distinct_prefix(ids: &[u64], k: usize, rng: &mut impl Rng) -> Vec<u64> {
    debug_assert!(k <= ids.len());
    let mut pool = ids.to_vec();
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

fn validate(corpus: &Corpus, k: usize, iters: usize, cfg: &TrainConfig) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if k == 0 {
        return Err(Error::InvalidK(0));
    }
    if k > corpus.len() {
        return Err(Error::TooFewExamples { needed: k, got: corpus.len() });
    }
    if iters == 0 {
        return Err(Error::InvalidParameter("iteration count must be >= 1".into()));
    }
    if !(cfg.gamma.is_finite() && cfg.gamma > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma must be finite and > 0, got {}", cfg.gamma)));
    }
    Ok(())
}

/// Train on every example in `corpus`, deriving the phase and the seed
/// examples from `root_seed` (substream labels `"phase"` and `"seeds"`).
pub fn train(
    corpus: &Corpus,
    k: usize,
    epsilon: f64,
    iters: usize,
    root_seed: u64,
    cfg: &TrainConfig,
) -> Result<QkmModel> {
    validate(corpus, k, iters, cfg)?;
    let mut phase_rng = substream(root_seed, "phase");
    let spec = sample_phase(corpus.dim, epsilon, cfg.cell, &mut phase_rng, substream_tag(root_seed, "phase"))?;
    let mut seeds_rng = substream(root_seed, "seeds");
    let seed_ids = sample_distinct_prefix(&corpus.ids(), k, &mut seeds_rng);
    train_with(corpus, k, spec, iters, root_seed, &seed_ids, cfg)
}

/// Train with the randomness pinned: an explicit lattice (phase included)
/// and explicit seed example ids. This is the entry point replay oracles use
/// to re-run training on a surviving corpus with retained randomness.
pub fn train_with(
    corpus: &Corpus,
    k: usize,
    spec: LatticeSpec,
    iters: usize,
    root_seed: u64,
    seed_ids: &[u64],
    cfg: &TrainConfig,
) -> Result<QkmModel> {
    validate(corpus, k, iters, cfg)?;
    if spec.dim != corpus.dim {
        return Err(Error::DimMismatch { id: 0, got: spec.dim, expected: corpus.dim });
    }
    if seed_ids.len() != k {
        return Err(Error::InvalidParameter(format!("need {k} seed ids, got {}", seed_ids.len())));
    }
    let distinct: BTreeSet<u64> = seed_ids.iter().copied().collect();
    if distinct.len() != k {
        return Err(Error::InvalidParameter("seed ids must be distinct".into()));
    }

    let ids = corpus.ids();
    let d = corpus.dim;
    let gamma = cfg.gamma;
    let mut op_counter = 0u64;

    let mut init_centroids = Vec::with_capacity(k);
    for &sid in seed_ids {
        let x = corpus.embedding(sid)?;
        let as_f64: Vec<f64> = x.iter().map(|v| f64::from(*v)).collect();
        init_centroids.push(spec.quantize(&as_f64)?);
    }

    let mut prev: Vec<Vec<f64>> = init_centroids.clone();
    let mut per_iter: Vec<Vec<ClusterIterStats>> = Vec::with_capacity(iters);
    let mut assign_trace: BTreeMap<u64, Vec<usize>> =
        ids.iter().map(|&id| (id, Vec::with_capacity(iters))).collect();

    for _t in 0..iters {
        let mut sums = vec![vec![0.0f64; d]; k];
        let mut counts = vec![0u64; k];
        for &id in &ids {
            let x = corpus.embedding(id)?;
            let (j, _) = nearest(x, &prev, &mut op_counter);
            assign_trace.get_mut(&id).unwrap().push(j);
            let s = &mut sums[j];
            for (si, xi) in s.iter_mut().zip(x) {
                *si += f64::from(*xi);
            }
            counts[j] += 1;
        }
        debug_assert_eq!(counts.iter().sum::<u64>() as usize, ids.len());

        let mut stats = Vec::with_capacity(k);
        let mut next = Vec::with_capacity(k);
        for j in 0..k {
            let cu: Vec<f64> = (0..d)
                .map(|i| (sums[j][i] + gamma * prev[j][i]) / (counts[j] as f64 + gamma))
                .collect();
            let cq = spec.quantize(&cu)?;
            next.push(cq.clone());
            stats.push(ClusterIterStats {
                sum: std::mem::take(&mut sums[j]),
                count: counts[j],
                centroid_unquantized: cu,
                centroid_quantized: cq,
            });
        }
        per_iter.push(stats);
        prev = next;
    }

    let final_centroids = prev;
    let mut final_assign = BTreeMap::new();
    let mut sorted_members: Vec<Vec<Member>> = vec![Vec::new(); k];
    for &id in &ids {
        let x = corpus.embedding(id)?;
        let (j, d2) = nearest(x, &final_centroids, &mut op_counter);
        final_assign.insert(id, j);
        sorted_members[j].push(Member { id, dist: d2.sqrt() });
    }
    for list in &mut sorted_members {
        list.sort_by(|a, b| a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id)));
    }

    Ok(QkmModel {
        spec,
        k,
        iters,
        gamma,
        root_seed,
        seed_ids: seed_ids.to_vec(),
        init_centroids,
        per_iter,
        assign_trace,
        final_assign,
        final_centroids,
        sorted_members,
        live_ids: ids.into_iter().collect(),
        op_counter,
    })
}

impl QkmModel {
    /// Quantized centroids entering iteration `t` (0-based).
    fn centroids_before(&self, t: usize) -> Vec<&Vec<f64>> {
        if t == 0 {
            self.init_centroids.iter().collect()
        } else {
            self.per_iter[t - 1].iter().map(|s| &s.centroid_quantized).collect()
        }
    }

    /// Head (nearest member) of each final cluster, if any.
    pub fn exemplar_heads(&self) -> Vec<Option<u64>> {
        self.sorted_members.iter().map(|l| l.first().map(|m| m.id)).collect()
    }
}

/// Decide whether deleting `victim` leaves the model bitwise intact.
///
/// Cost is independent of the corpus size: per iteration, k distance
/// evaluations re-derive the victim's recorded assignment, and one smoothed
/// mean is recomputed from the stored sum with the victim subtracted and
/// re-quantized. The first bitwise mismatch is returned as the shift point.
/// Returns the certificate plus the number of distance evaluations spent.
pub fn deletion_certificate(model: &QkmModel, corpus: &Corpus, victim: u64) -> Result<(Certificate, u64)> {
    if !model.live_ids.contains(&victim) {
        return Err(Error::UnknownId(victim));
    }
    if model.seed_ids.contains(&victim) {
        return Ok((Certificate::SeedHit, 0));
    }
    let x = corpus.embedding(victim)?;
    let trace = model
        .assign_trace
        .get(&victim)
        .ok_or(Error::UnknownId(victim))?;
    let gamma = model.gamma;
    let mut evals = 0u64;

    for (t, &j) in trace.iter().enumerate() {
        let prev = model.centroids_before(t);
        // The recorded assignment must be what the recorded centroids imply.
        // It always is for a model produced by `train`; a mismatch means the
        // snapshot was corrupted, and we conservatively force the retrain.
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (jj, c) in prev.iter().enumerate() {
            evals += 1;
            let dd = dist2(x, c.as_slice());
            if dd < best_d {
                best_d = dd;
                best = jj;
            }
        }
        if best != j {
            return Ok((Certificate::CentroidShift { iter: t, cluster: j }, evals));
        }

        let st = &model.per_iter[t][j];
        debug_assert!(st.count >= 1);
        let new_count = (st.count - 1) as f64 + gamma;
        let mut shifted = false;
        for i in 0..model.spec.dim {
            let cu = ((st.sum[i] - f64::from(x[i])) + gamma * prev[j][i]) / new_count;
            if !cu.is_finite() {
                return Err(Error::NonFiniteInput);
            }
            let cq = model.spec.quantize_coord(cu, i);
            if cq.to_bits() != st.centroid_quantized[i].to_bits() {
                shifted = true;
                break;
            }
        }
        if shifted {
            return Ok((Certificate::CentroidShift { iter: t, cluster: j }, evals));
        }
    }
    Ok((Certificate::Stable, evals))
}

/// Apply one deletion. Stable deletions edit the bookkeeping in place
/// (sums/counts downdated, victim dropped from traces and member lists,
/// centroids untouched); certificate failures retrain on the surviving
/// corpus with a fresh root seed drawn from `rng`.
pub fn apply_deletion(
    model: &QkmModel,
    corpus: &Corpus,
    victim: u64,
    rng: &mut impl RngCore,
) -> Result<(QkmModel, DeletionStep)> {
    let (certificate, cert_evals) = deletion_certificate(model, corpus, victim)?;

    if certificate != Certificate::Stable {
        let mut survivors = model.live_ids.clone();
        survivors.remove(&victim);
        let sub = restrict(corpus, &survivors);
        let fresh_seed = rng.next_u64();
        let cfg = TrainConfig { gamma: model.gamma, cell: model.spec.cell };
        let new_model = train(&sub, model.k, model.spec.epsilon, model.iters, fresh_seed, &cfg)?;
        let kind = match certificate {
            Certificate::SeedHit => OutcomeKind::SeedHitRetrained,
            _ => OutcomeKind::Retrained,
        };
        let distance_evals = cert_evals + new_model.op_counter;
        return Ok((new_model, DeletionStep { kind, certificate, distance_evals }));
    }

    let mut m = model.clone();
    let x = corpus.embedding(victim)?;
    let trace = m.assign_trace.remove(&victim).ok_or(Error::UnknownId(victim))?;
    for (t, &j) in trace.iter().enumerate() {
        let st = &mut m.per_iter[t][j];
        for (si, xi) in st.sum.iter_mut().zip(x) {
            *si -= f64::from(*xi);
        }
        st.count -= 1;
    }
    let jf = m.final_assign.remove(&victim).ok_or(Error::UnknownId(victim))?;
    let list = &mut m.sorted_members[jf];
    let pos = list
        .iter()
        .position(|mem| mem.id == victim)
        .ok_or(Error::UnknownId(victim))?;
    let was_head = pos == 0;
    list.remove(pos);
    m.live_ids.remove(&victim);
    m.op_counter += cert_evals;

    let kind = if was_head { OutcomeKind::ExemplarReplaced } else { OutcomeKind::Stable };
    Ok((m, DeletionStep { kind, certificate, distance_evals: cert_evals }))
}

/// Sub-corpus containing exactly `keep`.
pub fn restrict(corpus: &Corpus, keep: &BTreeSet<u64>) -> Corpus {
    Corpus {
        examples: corpus
            .examples
            .iter()
            .filter(|(id, _)| keep.contains(id))
            .map(|(id, ex)| (*id, ex.clone()))
            .collect(),
        embeddings: corpus
            .embeddings
            .iter()
            .filter(|(id, _)| keep.contains(id))
            .map(|(id, v)| (*id, v.clone()))
            .collect(),
        dim: corpus.dim,
    }
}

/// Bitwise comparison of everything a downstream consumer can observe:
/// lattice, quantized centroids at every iteration, counts, traces, member
/// lists (ids and distances), live set. Ignores op counters, provenance
/// seeds, and raw sums (which float-addition order perturbs harmlessly).
/// Returns a description of the first mismatch, if any.
pub fn observable_mismatch(a: &QkmModel, b: &QkmModel) -> Option<String> {
    fn bits_eq(x: &[f64], y: &[f64]) -> bool {
        x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits())
    }
    if a.spec.epsilon.to_bits() != b.spec.epsilon.to_bits()
        || !bits_eq(&a.spec.theta, &b.spec.theta)
        || a.spec.dim != b.spec.dim
        || a.spec.cell != b.spec.cell
    {
        return Some("lattice spec differs".into());
    }
    if a.k != b.k || a.iters != b.iters || a.gamma.to_bits() != b.gamma.to_bits() {
        return Some("hyperparameters differ".into());
    }
    if a.seed_ids != b.seed_ids {
        return Some(format!("seed ids differ: {:?} vs {:?}", a.seed_ids, b.seed_ids));
    }
    for (j, (p, q)) in a.init_centroids.iter().zip(&b.init_centroids).enumerate() {
        if !bits_eq(p, q) {
            return Some(format!("initial centroid {j} differs"));
        }
    }
    if a.per_iter.len() != b.per_iter.len() {
        return Some("iteration count differs".into());
    }
    for (t, (sa, sb)) in a.per_iter.iter().zip(&b.per_iter).enumerate() {
        for (j, (p, q)) in sa.iter().zip(sb).enumerate() {
            if p.count != q.count {
                return Some(format!("iter {t} cluster {j}: count {} vs {}", p.count, q.count));
            }
            if !bits_eq(&p.centroid_quantized, &q.centroid_quantized) {
                return Some(format!("iter {t} cluster {j}: quantized centroid differs"));
            }
        }
    }
    if a.assign_trace != b.assign_trace {
        return Some("assignment traces differ".into());
    }
    if a.final_assign != b.final_assign {
        return Some("final assignment differs".into());
    }
    for (j, (p, q)) in a.final_centroids.iter().zip(&b.final_centroids).enumerate() {
        if !bits_eq(p, q) {
            return Some(format!("final centroid {j} differs"));
        }
    }
    if a.sorted_members.len() != b.sorted_members.len() {
        return Some("cluster count differs".into());
    }
    for (j, (la, lb)) in a.sorted_members.iter().zip(&b.sorted_members).enumerate() {
        if la.len() != lb.len() {
            return Some(format!("cluster {j}: member count {} vs {}", la.len(), lb.len()));
        }
        for (p, q) in la.iter().zip(lb) {
            if p.id != q.id || p.dist.to_bits() != q.dist.to_bits() {
                return Some(format!("cluster {j}: member ({}, {}) vs ({}, {})", p.id, p.dist, q.id, q.dist));
            }
        }
    }
    if a.live_ids != b.live_ids {
        return Some("live id sets differ".into());
    }
    None
}
