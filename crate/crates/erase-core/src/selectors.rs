//! The three exemplar-selection strategies and their unlearning rules.
//!
//! - `erase`: quantized k-means ([`crate::qkmeans`]); deletions ride on the
//!   certificate and are usually free.
//! - `acot`: classic k-means++ seeding plus Lloyd iterations. Exact
//!   unlearning has no shortcut here — the D²-weighted seeding ties every
//!   centroid to every example — so any deletion is a full re-run with
//!   fresh randomness.
//! - `random`: a seeded uniform draw of k distinct ids. Deleting an
//!   unselected id changes nothing; deleting a selected id is repaired by
//!   resampling that slot once from the untouched remainder, which
//!   reproduces the selection distribution on the surviving corpus exactly.
//!
//! Exemplars for the clustering strategies are the nearest member of each
//! final cluster (ties broken by lower id). A cluster left empty by the
//! final assignment pass is backfilled with the nearest not-yet-selected
//! live example so a selection always has exactly k entries.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::qkmeans::{
    self, apply_deletion, restrict, sample_distinct_prefix, train, Certificate, Member, OutcomeKind,
    QkmModel, TrainConfig,
};
use crate::rng::substream;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Erase,
    Acot,
    Random,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Erase => "erase",
            Strategy::Acot => "acot",
            Strategy::Random => "random",
        })
    }
}

/// Plain k-means++ model (no quantization, no smoothing).
#[derive(Debug, Clone, PartialEq)]
pub struct AcotModel {
    pub k: usize,
    pub iters: usize,
    pub root_seed: u64,
    pub centroids: Vec<Vec<f64>>,
    /// Example id -> cluster under the final centroids.
    pub assignment: BTreeMap<u64, usize>,
    /// Per cluster: members sorted ascending by (distance, id).
    pub sorted_members: Vec<Vec<Member>>,
    pub live_ids: BTreeSet<u64>,
    pub op_counter: u64,
}

/// The random selector has no geometry; it only remembers its seed, the
/// ordered selection (held by [`SelectionModel`]) and which ids are live.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomState {
    pub root_seed: u64,
    pub live_ids: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectorState {
    Erase(QkmModel),
    Acot(AcotModel),
    Random(RandomState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionModel {
    pub strategy: Strategy,
    pub k: usize,
    /// Ordered: slot i is cluster i's exemplar (clustering strategies) or
    /// the i-th draw (random).
    pub selected: Vec<u64>,
    pub state: SelectorState,
}

impl SelectionModel {
    pub fn live_ids(&self) -> &BTreeSet<u64> {
        match &self.state {
            SelectorState::Erase(m) => &m.live_ids,
            SelectorState::Acot(m) => &m.live_ids,
            SelectorState::Random(m) => &m.live_ids,
        }
    }
}

/// What one unlearning request did to a selection model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnlearnStep {
    pub kind: OutcomeKind,
    /// Present for the erase strategy (the deletion certificate).
    pub certificate: Option<Certificate>,
    pub distance_evals: u64,
}

fn dist2(x: &[f32], c: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(c) {
        let d = f64::from(*a) - b;
        acc += d * d;
    }
    acc
}

/// Exemplars: head of every non-empty cluster, then nearest unselected live
/// example for each empty cluster (ascending cluster index). Infallible
/// while `live >= k`, which training and deletion both maintain.
///
/// Backfill distance evaluations are not charged to any deletion op counter:
/// deletion cost accounting tracks certificate and retrain work, and the
/// common case reads list heads only.
pub(crate) fn selection_from_clusters(
    sorted_members: &[Vec<Member>],
    centroids: &[Vec<f64>],
    corpus: &Corpus,
    live: &BTreeSet<u64>,
) -> Result<Vec<u64>> {
    let k = sorted_members.len();
    let mut selected: Vec<Option<u64>> = sorted_members.iter().map(|l| l.first().map(|m| m.id)).collect();
    let mut taken: BTreeSet<u64> = selected.iter().flatten().copied().collect();
    for j in 0..k {
        if selected[j].is_some() {
            continue;
        }
        let mut best: Option<(f64, u64)> = None;
        for &id in live {
            if taken.contains(&id) {
                continue;
            }
            let d = dist2(corpus.embedding(id)?, &centroids[j]);
            if best.is_none_or(|(bd, bid)| d < bd || (d == bd && id < bid)) {
                best = Some((d, id));
            }
        }
        let (_, id) = best.ok_or(Error::CannotReplace { victim: 0 })?;
        taken.insert(id);
        selected[j] = Some(id);
    }
    Ok(selected.into_iter().map(|s| s.expect("backfill filled every slot")).collect())
}

/// Quantized-k-means selection (defaults elsewhere: epsilon 0.05, 10 iters).
pub fn select_erase(
    corpus: &Corpus,
    k: usize,
    epsilon: f64,
    iters: usize,
    root_seed: u64,
    cfg: &TrainConfig,
) -> Result<SelectionModel> {
    let model = train(corpus, k, epsilon, iters, root_seed, cfg)?;
    let selected =
        selection_from_clusters(&model.sorted_members, &model.final_centroids, corpus, &model.live_ids)?;
    Ok(SelectionModel { strategy: Strategy::Erase, k, selected, state: SelectorState::Erase(model) })
}

fn acot_fit(corpus: &Corpus, k: usize, iters: usize, root_seed: u64) -> Result<AcotModel> {
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
    let ids = corpus.ids();
    let n = ids.len();
    let d = corpus.dim;
    let mut rng = substream(root_seed, "seeds");
    let mut op_counter = 0u64;

    // k-means++ seeding: first uniform, then D^2-weighted.
    let first = ids[rng.random_range(0..n)];
    let mut centroids: Vec<Vec<f64>> = vec![corpus.embedding(first)?.iter().map(|v| f64::from(*v)).collect()];
    let mut min_d2: BTreeMap<u64, f64> = BTreeMap::new();
    for &id in &ids {
        op_counter += 1;
        min_d2.insert(id, dist2(corpus.embedding(id)?, &centroids[0]));
    }
    let mut chosen: BTreeSet<u64> = BTreeSet::from([first]);
    while centroids.len() < k {
        let total: f64 = min_d2.values().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let r = rng.random::<f64>() * total;
            let mut cum = 0.0;
            let mut last_positive = None;
            let mut hit = None;
            for &id in &ids {
                let w = min_d2[&id];
                if w > 0.0 {
                    last_positive = Some(id);
                }
                cum += w;
                if cum > r {
                    hit = Some(id);
                    break;
                }
            }
            hit.or(last_positive).expect("total > 0 implies a positive weight")
        } else {
            // all remaining mass is zero (duplicate-heavy corpus): take the
            // lowest unchosen id so seeding stays deterministic and distinct
            *ids.iter().find(|id| !chosen.contains(id)).expect("k <= n")
        };
        chosen.insert(pick);
        let c: Vec<f64> = corpus.embedding(pick)?.iter().map(|v| f64::from(*v)).collect();
        for &id in &ids {
            op_counter += 1;
            let nd = dist2(corpus.embedding(id)?, &c);
            let e = min_d2.get_mut(&id).unwrap();
            if nd < *e {
                *e = nd;
            }
        }
        centroids.push(c);
    }

    // Lloyd iterations with plain means; empty clusters keep their centroid.
    for _ in 0..iters {
        let mut sums = vec![vec![0.0f64; d]; k];
        let mut counts = vec![0u64; k];
        for &id in &ids {
            let (j, _) = qkmeans::nearest(corpus.embedding(id)?, &centroids, &mut op_counter);
            for (si, xi) in sums[j].iter_mut().zip(corpus.embedding(id)?) {
                *si += f64::from(*xi);
            }
            counts[j] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
    }

    let mut assignment = BTreeMap::new();
    let mut sorted_members: Vec<Vec<Member>> = vec![Vec::new(); k];
    for &id in &ids {
        let (j, d2) = qkmeans::nearest(corpus.embedding(id)?, &centroids, &mut op_counter);
        assignment.insert(id, j);
        sorted_members[j].push(Member { id, dist: d2.sqrt() });
    }
    for list in &mut sorted_members {
        list.sort_by(|a, b| a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id)));
    }

    Ok(AcotModel {
        k,
        iters,
        root_seed,
        centroids,
        assignment,
        sorted_members,
        live_ids: ids.into_iter().collect(),
        op_counter,
    })
}

/// k-means++ baseline selection.
pub fn select_acot(corpus: &Corpus, k: usize, iters: usize, root_seed: u64) -> Result<SelectionModel> {
    let model = acot_fit(corpus, k, iters, root_seed)?;
    let selected =
        selection_from_clusters(&model.sorted_members, &model.centroids, corpus, &model.live_ids)?;
    Ok(SelectionModel { strategy: Strategy::Acot, k, selected, state: SelectorState::Acot(model) })
}

/// Uniform selection: the first k entries of a seeded Fisher–Yates shuffle.
pub fn select_random(corpus: &Corpus, k: usize, root_seed: u64) -> Result<SelectionModel> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if k == 0 {
        return Err(Error::InvalidK(0));
    }
    if k > corpus.len() {
        return Err(Error::TooFewExamples { needed: k, got: corpus.len() });
    }
    let mut rng = substream(root_seed, "seeds");
    let selected = sample_distinct_prefix(&corpus.ids(), k, &mut rng);
    Ok(SelectionModel {
        strategy: Strategy::Random,
        k,
        selected,
        state: SelectorState::Random(RandomState { root_seed, live_ids: corpus.ids().into_iter().collect() }),
    })
}

/// Remove `victim` from the selection model, preserving exactness.
///
/// `rng` supplies whatever fresh randomness the repair needs: the fresh root
/// seed for a retrain, or the one replacement draw for the random strategy.
pub fn unlearn_selection(
    model: &SelectionModel,
    corpus: &Corpus,
    victim: u64,
    rng: &mut impl Rng,
) -> Result<(SelectionModel, UnlearnStep)> {
    if !model.live_ids().contains(&victim) {
        return Err(Error::UnknownId(victim));
    }
    match &model.state {
        SelectorState::Random(st) => {
            let mut live = st.live_ids.clone();
            live.remove(&victim);
            let mut selected = model.selected.clone();
            let kind = if let Some(pos) = selected.iter().position(|&id| id == victim) {
                let pool: Vec<u64> =
                    live.iter().copied().filter(|id| !selected.contains(id)).collect();
                if pool.is_empty() {
                    return Err(Error::CannotReplace { victim });
                }
                selected[pos] = pool[rng.random_range(0..pool.len())];
                OutcomeKind::ExemplarReplaced
            } else {
                OutcomeKind::Stable
            };
            let state = SelectorState::Random(RandomState { root_seed: st.root_seed, live_ids: live });
            Ok((
                SelectionModel { strategy: Strategy::Random, k: model.k, selected, state },
                UnlearnStep { kind, certificate: None, distance_evals: 0 },
            ))
        }
        SelectorState::Acot(st) => {
            // No certificate exists for D^2-weighted seeding: every example
            // shaped the seed distribution, so the only exact repair is a
            // fresh re-run on the survivors.
            let mut survivors = st.live_ids.clone();
            survivors.remove(&victim);
            let fresh_seed = rng.next_u64();
            let new = select_acot(&restrict(corpus, &survivors), model.k, st.iters, fresh_seed)?;
            let evals = match &new.state {
                SelectorState::Acot(m) => m.op_counter,
                _ => unreachable!(),
            };
            Ok((new, UnlearnStep { kind: OutcomeKind::Retrained, certificate: None, distance_evals: evals }))
        }
        SelectorState::Erase(qkm) => {
            let (new_qkm, step) = apply_deletion(qkm, corpus, victim, rng)?;
            let selected = selection_from_clusters(
                &new_qkm.sorted_members,
                &new_qkm.final_centroids,
                corpus,
                &new_qkm.live_ids,
            )?;
            let kind = if step.kind.is_retrain() {
                step.kind
            } else if selected != model.selected {
                OutcomeKind::ExemplarReplaced
            } else {
                OutcomeKind::Stable
            };
            Ok((
                SelectionModel {
                    strategy: Strategy::Erase,
                    k: model.k,
                    selected,
                    state: SelectorState::Erase(new_qkm),
                },
                UnlearnStep { kind, certificate: Some(step.certificate), distance_evals: step.distance_evals },
            ))
        }
    }
}

/// Few-shot prompt assembly; one `Input: ... Output: ...` line per exemplar
/// in selection order, then the query with a trailing `Output:` cue. Under
/// whitespace tokenization each exemplar contributes its input and output
/// tokens plus a framing constant of 2.
pub fn format_prompt(corpus: &Corpus, selected: &[u64], query_input: &str) -> Result<String> {
    use std::fmt::Write;
    let mut s = String::new();
    for &id in selected {
        let ex = corpus.example(id)?;
        writeln!(s, "Input: {} Output: {}", ex.input, ex.output).expect("write to String");
    }
    write!(s, "Input: {query_input} Output:").expect("write to String");
    Ok(s)
}
