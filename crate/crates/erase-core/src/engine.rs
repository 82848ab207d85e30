//! Streaming deletion engine and exactness verification.
//!
//! `run_stream` applies an ordered list of deletion requests to a selection
//! model, producing one outcome record per request (certificate kind, distance
//! evaluations, modeled FLOPS, post-state hash) plus aggregate statistics.
//! Request index `i` draws its randomness from the `retrain:<i>` substream of
//! the stream seed, so replaying any prefix of a stream reproduces the same
//! intermediate states byte for byte.
//!
//! `verify_exactness` is the oracle side: for the clustering strategy it
//! audits every incremental post-state against a retrain-from-scratch replay
//! with the same coin flips; for the random strategy it checks the sampled
//! post-deletion selections against the exact uniform distribution over
//! k-subsets of the survivors with a chi-square goodness-of-fit test.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::corpus::Corpus;
use crate::costmodel::distance_eval_flops;
use crate::qkmeans::{restrict, train_with, Certificate, OutcomeKind};
use crate::rng::{substream, substream_tag};
use crate::selectors::{
    select_acot, select_erase, select_random, selection_from_clusters, unlearn_selection,
    SelectionModel, SelectorState, Strategy,
};
use crate::snapshot::model_hash;
use crate::{Error, Result};

pub const REPORT_VERSION: u32 = 1;

/// One ordered deletion request. `index` is the position in the stream and
/// pins the randomness substream used to serve the request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeletionRequest {
    pub id: u64,
    pub index: usize,
}

/// Read a JSONL deletion stream: one `{"op":"delete","id":N}` object per line.
pub fn load_stream(path: &Path) -> Result<Vec<DeletionRequest>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let op = v.get("op").and_then(|o| o.as_str()).ok_or(Error::Parse {
            line: lineno + 1,
            msg: "missing \"op\" field".into(),
        })?;
        if op != "delete" {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("unsupported op {op:?} (only \"delete\")"),
            });
        }
        let id = v.get("id").and_then(|i| i.as_u64()).ok_or(Error::Parse {
            line: lineno + 1,
            msg: "missing or non-integer \"id\" field".into(),
        })?;
        out.push(DeletionRequest { id, index: out.len() });
    }
    Ok(out)
}

pub fn save_stream(requests: &[DeletionRequest], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in requests {
        writeln!(f, "{}", serde_json::json!({"op": "delete", "id": r.id}))?;
    }
    f.flush()?;
    Ok(())
}

/// Sample `m` distinct victims uniformly from the corpus, in request order.
pub fn sample_uniform_stream(
    corpus: &Corpus,
    m: usize,
    rng: &mut impl rand::RngCore,
) -> Result<Vec<DeletionRequest>> {
    let ids = corpus.ids();
    sample_stream_from_ids(&ids, m, rng)
}

pub(crate) fn sample_stream_from_ids(
    ids: &[u64],
    m: usize,
    rng: &mut impl rand::RngCore,
) -> Result<Vec<DeletionRequest>> {
    if m > ids.len() {
        return Err(Error::StreamTooLong { requested: m, live: ids.len() });
    }
    let picked = crate::qkmeans::sample_distinct_prefix(ids, m, rng);
    Ok(picked
        .into_iter()
        .enumerate()
        .map(|(index, id)| DeletionRequest { id, index })
        .collect())
}

/// Per-request outcome record.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DeletionOutcome {
    pub index: usize,
    pub victim: u64,
    pub kind: OutcomeKind,
    pub certificate: Option<Certificate>,
    pub distance_evals: u64,
    /// Modeled arithmetic cost of the distance evaluations (3 FLOPS per
    /// coordinate: subtract, square, accumulate).
    pub wall_cost_model_flops: f64,
    pub snapshot_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct KindStats {
    pub count: u64,
    pub mean_distance_evals: f64,
    pub max_distance_evals: u64,
    pub mean_flops: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StreamReport {
    pub version: u32,
    pub strategy: Strategy,
    pub requests: usize,
    pub retrain_fraction: f64,
    pub stats: BTreeMap<String, KindStats>,
    pub final_live: usize,
    pub final_snapshot_hash: String,
    pub outcomes: Vec<DeletionOutcome>,
}

fn kind_key(kind: OutcomeKind) -> &'static str {
    match kind {
        OutcomeKind::Stable => "stable",
        OutcomeKind::ExemplarReplaced => "exemplar_replaced",
        OutcomeKind::Retrained => "retrained",
        OutcomeKind::SeedHitRetrained => "seed_hit_retrained",
    }
}

/// Serve an ordered deletion stream. Requests are applied strictly in order;
/// a request naming an id that is no longer live fails the whole stream with
/// `DeadVictim`.
pub fn run_stream(
    model: &SelectionModel,
    corpus: &Corpus,
    requests: &[DeletionRequest],
    stream_seed: u64,
) -> Result<(SelectionModel, StreamReport)> {
    let dim = corpus.dim;
    let mut current = model.clone();
    let mut outcomes = Vec::with_capacity(requests.len());
    for req in requests {
        let mut rng = substream(stream_seed, &format!("retrain:{}", req.index));
        let (next, step) = match unlearn_selection(&current, corpus, req.id, &mut rng) {
            Ok(v) => v,
            Err(Error::UnknownId(id)) => {
                return Err(Error::DeadVictim { id, index: req.index })
            }
            Err(e) => return Err(e),
        };
        outcomes.push(DeletionOutcome {
            index: req.index,
            victim: req.id,
            kind: step.kind,
            certificate: step.certificate,
            distance_evals: step.distance_evals,
            wall_cost_model_flops: step.distance_evals as f64 * distance_eval_flops(dim),
            snapshot_hash: model_hash(&next)?,
        });
        current = next;
    }

    let mut stats: BTreeMap<String, KindStats> = BTreeMap::new();
    let mut grouped: BTreeMap<&'static str, Vec<&DeletionOutcome>> = BTreeMap::new();
    for o in &outcomes {
        grouped.entry(kind_key(o.kind)).or_default().push(o);
    }
    for (key, group) in grouped {
        let count = group.len() as u64;
        let evals: Vec<u64> = group.iter().map(|o| o.distance_evals).collect();
        stats.insert(
            key.to_string(),
            KindStats {
                count,
                mean_distance_evals: evals.iter().sum::<u64>() as f64 / count as f64,
                max_distance_evals: evals.iter().copied().max().unwrap_or(0),
                mean_flops: group.iter().map(|o| o.wall_cost_model_flops).sum::<f64>()
                    / count as f64,
            },
        );
    }
    let retrains = outcomes.iter().filter(|o| o.kind.is_retrain()).count();
    let report = StreamReport {
        version: REPORT_VERSION,
        strategy: current.strategy,
        requests: outcomes.len(),
        retrain_fraction: if outcomes.is_empty() {
            0.0
        } else {
            retrains as f64 / outcomes.len() as f64
        },
        stats,
        final_live: current.live_ids().len(),
        final_snapshot_hash: model_hash(&current)?,
        outcomes,
    };
    Ok((current, report))
}

/// Chi-square goodness-of-fit: returns (statistic, degrees of freedom,
/// p-value). `expected` are expected counts (not probabilities).
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> Result<(f64, usize, f64)> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::InvalidParameter(
            "chi-square needs >= 2 equal-length categories".into(),
        ));
    }
    if expected.iter().any(|&e| !e.is_finite() || e <= 0.0) {
        return Err(Error::InvalidParameter("expected counts must be positive".into()));
    }
    let stat: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum();
    let df = observed.len() - 1;
    let dist = ChiSquared::new(df as f64)
        .map_err(|e| Error::InvalidParameter(format!("chi-square df: {e}")))?;
    let p = 1.0 - dist.cdf(stat);
    Ok((stat, df, p))
}

/// All k-element subsets of `ids` (ascending within each subset, lexicographic
/// overall). Intended for small verification instances; guarded by `limit`.
pub fn k_subsets(ids: &[u64], k: usize, limit: usize) -> Result<Vec<Vec<u64>>> {
    fn binomial(n: usize, k: usize) -> u128 {
        if k > n {
            return 0;
        }
        let k = k.min(n - k);
        let mut acc: u128 = 1;
        for i in 0..k {
            acc = acc * (n - i) as u128 / (i + 1) as u128;
        }
        acc
    }
    let total = binomial(ids.len(), k);
    if total > limit as u128 {
        return Err(Error::InvalidParameter(format!(
            "{} choose {k} = {total} categories exceeds limit {limit}",
            ids.len()
        )));
    }
    let mut out = Vec::with_capacity(total as usize);
    let mut cur = Vec::with_capacity(k);
    fn rec(ids: &[u64], k: usize, start: usize, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        let remaining = k - cur.len();
        for i in start..=ids.len().saturating_sub(remaining) {
            cur.push(ids[i]);
            rec(ids, k, i + 1, cur, out);
            cur.pop();
        }
    }
    if k <= ids.len() {
        rec(ids, k, 0, &mut cur, &mut out);
    }
    Ok(out)
}

/// Audit one claimed post-deletion state of the clustering strategy against a
/// retrain-from-scratch replay with the same recorded coin flips. Returns a
/// mismatch description, or `None` when the state is exactly what a full
/// retrain would produce.
pub fn audit_erase_post_state(
    after: &SelectionModel,
    corpus: &Corpus,
    victim: u64,
) -> Result<Option<String>> {
    let qkm = match &after.state {
        SelectorState::Erase(m) => m,
        _ => {
            return Err(Error::InvalidParameter(
                "replay audit applies to the clustering strategy only".into(),
            ))
        }
    };
    if qkm.live_ids.contains(&victim) {
        return Ok(Some(format!("victim {victim} still live after deletion")));
    }
    if let Some(seed) = qkm.seed_ids.iter().find(|s| !qkm.live_ids.contains(s)) {
        return Ok(Some(format!(
            "seed point {seed} is not live: a seed deletion must trigger a reseeded retrain"
        )));
    }
    let survivors = restrict(corpus, &qkm.live_ids);
    let cfg = crate::qkmeans::TrainConfig { gamma: qkm.gamma, cell: qkm.spec.cell };
    let replay = train_with(
        &survivors,
        qkm.k,
        qkm.spec.clone(),
        qkm.iters,
        qkm.root_seed,
        &qkm.seed_ids,
        &cfg,
    )?;
    if let Some(msg) = crate::qkmeans::observable_mismatch(qkm, &replay) {
        return Ok(Some(format!("replay mismatch: {msg}")));
    }
    let expected_selection = selection_from_clusters(
        &replay.sorted_members,
        &replay.final_centroids,
        &survivors,
        &replay.live_ids,
    )?;
    if expected_selection != after.selected {
        return Ok(Some(format!(
            "selection mismatch: state implies {expected_selection:?}, model says {:?}",
            after.selected
        )));
    }
    Ok(None)
}

/// Tally of an exhaustive single-deletion audit over one trained model.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ExhaustiveAudit {
    pub stable: u64,
    pub seed_hits: u64,
    pub shifts: u64,
    pub witnesses: Vec<String>,
}

/// Certificate soundness and completeness, checked against ground truth for
/// every live point of one model:
/// - `SeedHit` exactly for seed points;
/// - `Stable` iff a same-coins retrain on the survivors reproduces every
///   recorded quantized centroid, in which case the in-place deletion's
///   post-state must be observably identical to that retrain;
/// - `CentroidShift{iter, cluster}` must name exactly the first
///   (iteration, cluster) at which the retrain's quantized centroids diverge
///   from the recorded ones.
pub fn audit_certificate_exhaustive(
    model: &crate::qkmeans::QkmModel,
    corpus: &Corpus,
) -> Result<ExhaustiveAudit> {
    use crate::qkmeans::{apply_deletion, deletion_certificate, observable_mismatch};

    let mut audit = ExhaustiveAudit::default();
    let cfg = crate::qkmeans::TrainConfig { gamma: model.gamma, cell: model.spec.cell };
    for victim in model.live_ids.iter().copied().collect::<Vec<u64>>() {
        let (cert, _evals) = deletion_certificate(model, corpus, victim)?;
        if model.seed_ids.contains(&victim) != matches!(cert, Certificate::SeedHit) {
            audit.witnesses.push(format!(
                "victim {victim}: seed membership and SeedHit certificate disagree ({cert:?})"
            ));
            continue;
        }
        if matches!(cert, Certificate::SeedHit) {
            audit.seed_hits += 1;
            continue;
        }

        let mut survivors = model.live_ids.clone();
        survivors.remove(&victim);
        let replay = train_with(
            &restrict(corpus, &survivors),
            model.k,
            model.spec.clone(),
            model.iters,
            model.root_seed,
            &model.seed_ids,
            &cfg,
        )?;
        let mut first_div: Option<(usize, usize)> = None;
        'scan: for t in 0..model.iters {
            for j in 0..model.k {
                let a = &model.per_iter[t][j].centroid_quantized;
                let b = &replay.per_iter[t][j].centroid_quantized;
                if a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits()) {
                    first_div = Some((t, j));
                    break 'scan;
                }
            }
        }
        match (cert, first_div) {
            (Certificate::Stable, None) => {
                audit.stable += 1;
                let mut rng = substream(model.root_seed, "audit:unused");
                let (applied, step) = apply_deletion(model, corpus, victim, &mut rng)?;
                if step.kind.is_retrain() {
                    audit.witnesses.push(format!(
                        "victim {victim}: stable certificate but deletion retrained"
                    ));
                } else if let Some(msg) = observable_mismatch(&applied, &replay) {
                    audit.witnesses.push(format!(
                        "victim {victim}: in-place deletion differs from retrain: {msg}"
                    ));
                }
            }
            (Certificate::Stable, Some((t, j))) => audit.witnesses.push(format!(
                "victim {victim}: certificate says stable but retrain diverges at iteration {t}, cluster {j}"
            )),
            (Certificate::CentroidShift { iter, cluster }, Some((t, j))) => {
                audit.shifts += 1;
                if (iter, cluster) != (t, j) {
                    audit.witnesses.push(format!(
                        "victim {victim}: certificate pinpoints ({iter}, {cluster}) but retrain diverges first at ({t}, {j})"
                    ));
                }
            }
            (Certificate::CentroidShift { iter, cluster }, None) => audit.witnesses.push(format!(
                "victim {victim}: certificate claims a shift at ({iter}, {cluster}) but retrain is identical"
            )),
            (Certificate::SeedHit, _) => unreachable!("seed hits handled above"),
        }
    }
    Ok(audit)
}

/// Summary of a randomized certificate-oracle battery.
#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub instances: usize,
    pub deletions_checked: u64,
    pub stable: u64,
    pub seed_hits: u64,
    pub shifts: u64,
    pub witnesses: Vec<String>,
}

/// Run `audit_certificate_exhaustive` over `instances` randomized instances
/// (corpus size 20-200, dimension 2-8, k 2-5, lattice width cycling through
/// {0.02, 0.05, 0.2}; every even instance is small enough to make the
/// exhaustive audit cover corpora of at most 40 points). Deterministic in
/// `root_seed`.
pub fn certificate_oracle_battery(instances: usize, root_seed: u64) -> Result<OracleSummary> {
    use rand::{Rng, RngCore};

    let mut summary = OracleSummary {
        instances,
        deletions_checked: 0,
        stable: 0,
        seed_hits: 0,
        shifts: 0,
        witnesses: Vec::new(),
    };
    for i in 0..instances {
        let mut rng = substream(root_seed, &format!("oracle:{i}"));
        let n: usize =
            if i % 2 == 0 { rng.random_range(20..=40) } else { rng.random_range(41..=200) };
        let d: usize = rng.random_range(2..=8);
        let k: usize = rng.random_range(2..=5);
        let iters: usize = rng.random_range(4..=10);
        let epsilon = [0.02, 0.05, 0.2][i % 3];
        let params = crate::synth::MixtureParams {
            components: rng.random_range(1..=5),
            center_spread: 2.0,
            cluster_std: [0.05, 0.2, 0.8][rng.random_range(0..3)],
        };
        let corpus = crate::synth::gaussian_mixture(n, d, &params, rng.next_u64())?;
        let model = crate::qkmeans::train(
            &corpus,
            k,
            epsilon,
            iters,
            rng.next_u64(),
            &Default::default(),
        )?;
        let audit = audit_certificate_exhaustive(&model, &corpus)?;
        summary.deletions_checked += audit.stable + audit.seed_hits + audit.shifts;
        summary.stable += audit.stable;
        summary.seed_hits += audit.seed_hits;
        summary.shifts += audit.shifts;
        for w in audit.witnesses {
            summary.witnesses.push(format!("instance {i} (n={n} d={d} k={k} eps={epsilon}): {w}"));
        }
    }
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Witness {
    pub instance_seed: u64,
    pub request_index: usize,
    pub victim: u64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChiSquareSummary {
    pub trials: u64,
    pub categories: usize,
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct VerificationVerdict {
    pub version: u32,
    pub strategy: Strategy,
    pub pass: bool,
    pub deletions_checked: u64,
    pub failures: Vec<Witness>,
    pub chi_square: Option<ChiSquareSummary>,
    pub note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub epsilon: f64,
    pub iters: usize,
    pub root_seed: u64,
    /// Independent instances (clustering) or sampling trials (random).
    pub trials: usize,
    /// Deletions audited per instance for the clustering strategy.
    pub deletions_per_trial: usize,
}

impl VerifyConfig {
    pub fn new(strategy: Strategy, k: usize, root_seed: u64) -> Self {
        VerifyConfig {
            strategy,
            k,
            epsilon: 0.05,
            iters: 10,
            root_seed,
            trials: match strategy {
                Strategy::Random => 20_000,
                _ => 25,
            },
            deletions_per_trial: 3,
        }
    }
}

/// Run the exactness battery for one strategy over a corpus.
pub fn verify_exactness(corpus: &Corpus, cfg: &VerifyConfig) -> Result<VerificationVerdict> {
    match cfg.strategy {
        Strategy::Erase => verify_erase(corpus, cfg),
        Strategy::Random => verify_random(corpus, cfg),
        Strategy::Acot => verify_acot(corpus, cfg),
    }
}

fn verify_erase(corpus: &Corpus, cfg: &VerifyConfig) -> Result<VerificationVerdict> {
    let mut failures = Vec::new();
    let mut checked = 0u64;
    for t in 0..cfg.trials {
        let seed_t = substream_tag(cfg.root_seed, &format!("verify:{t}"));
        let model = select_erase(corpus, cfg.k, cfg.epsilon, cfg.iters, seed_t, &Default::default())?;
        let live = model.live_ids().len();
        let m = cfg.deletions_per_trial.min(live.saturating_sub(cfg.k));
        let ids: Vec<u64> = model.live_ids().iter().copied().collect();
        let mut stream_rng = substream(seed_t, "stream");
        let requests = sample_stream_from_ids(&ids, m, &mut stream_rng)?;
        let mut current = model;
        for req in &requests {
            let mut rng = substream(seed_t, &format!("retrain:{}", req.index));
            let (next, _step) = unlearn_selection(&current, corpus, req.id, &mut rng)?;
            checked += 1;
            if let Some(message) = audit_erase_post_state(&next, corpus, req.id)? {
                failures.push(Witness {
                    instance_seed: seed_t,
                    request_index: req.index,
                    victim: req.id,
                    message,
                });
            }
            current = next;
        }
    }
    Ok(VerificationVerdict {
        version: REPORT_VERSION,
        strategy: Strategy::Erase,
        pass: failures.is_empty(),
        deletions_checked: checked,
        failures,
        chi_square: None,
        note: Some("every audited post-state byte-matched a same-coins retrain".into()),
    })
}

fn verify_random(corpus: &Corpus, cfg: &VerifyConfig) -> Result<VerificationVerdict> {
    let ids = corpus.ids();
    if ids.len() < cfg.k + 2 {
        return Err(Error::TooFewExamples { needed: cfg.k + 2, got: ids.len() });
    }
    let victim = ids[0];
    let survivors: Vec<u64> = ids.iter().copied().filter(|&i| i != victim).collect();
    let categories = k_subsets(&survivors, cfg.k, 20_000)?;
    let index: BTreeMap<Vec<u64>, usize> =
        categories.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let mut observed = vec![0u64; categories.len()];
    for t in 0..cfg.trials {
        let seed_t = substream_tag(cfg.root_seed, &format!("trial:{t}"));
        let model = select_random(corpus, cfg.k, seed_t)?;
        let mut rng = substream(seed_t, "retrain:0");
        let (after, _) = unlearn_selection(&model, corpus, victim, &mut rng)?;
        let mut sel = after.selected.clone();
        sel.sort_unstable();
        let slot = index.get(&sel).ok_or_else(|| {
            Error::InvalidParameter(format!("selection {sel:?} is not a survivor subset"))
        })?;
        observed[*slot] += 1;
    }
    let expected = vec![cfg.trials as f64 / categories.len() as f64; categories.len()];
    let (statistic, df, p_value) = chi_square_gof(&observed, &expected)?;
    let pass = p_value > 0.01;
    Ok(VerificationVerdict {
        version: REPORT_VERSION,
        strategy: Strategy::Random,
        pass,
        deletions_checked: cfg.trials as u64,
        failures: if pass {
            Vec::new()
        } else {
            vec![Witness {
                instance_seed: cfg.root_seed,
                request_index: 0,
                victim,
                message: format!(
                    "post-deletion selections deviate from uniform over survivor subsets \
                     (chi2 = {statistic:.2}, df = {df}, p = {p_value:.6})"
                ),
            }]
        },
        chi_square: Some(ChiSquareSummary {
            trials: cfg.trials as u64,
            categories: categories.len(),
            statistic,
            df,
            p_value,
        }),
        note: None,
    })
}

fn verify_acot(corpus: &Corpus, cfg: &VerifyConfig) -> Result<VerificationVerdict> {
    let mut failures = Vec::new();
    let mut checked = 0u64;
    for t in 0..cfg.trials {
        let seed_t = substream_tag(cfg.root_seed, &format!("verify:{t}"));
        let model = select_acot(corpus, cfg.k, cfg.iters, seed_t)?;
        let ids: Vec<u64> = model.live_ids().iter().copied().collect();
        let mut stream_rng = substream(seed_t, "stream");
        let requests =
            sample_stream_from_ids(&ids, 1.min(ids.len().saturating_sub(cfg.k)), &mut stream_rng)?;
        for req in &requests {
            let run = |_: ()| -> Result<(SelectionModel, crate::selectors::UnlearnStep)> {
                let mut rng = substream(seed_t, &format!("retrain:{}", req.index));
                unlearn_selection(&model, corpus, req.id, &mut rng)
            };
            let (after, step) = run(())?;
            let (after2, _) = run(())?;
            checked += 1;
            let mut problems = Vec::new();
            if step.kind != OutcomeKind::Retrained {
                problems.push("deletion did not retrain".to_string());
            }
            if after.live_ids().contains(&req.id) {
                problems.push(format!("victim {} still live", req.id));
            }
            if !after.selected.iter().all(|s| after.live_ids().contains(s)) {
                problems.push("selection references a dead id".to_string());
            }
            if after2 != after {
                problems.push("same-seed deletion was not deterministic".to_string());
            }
            for message in problems {
                failures.push(Witness {
                    instance_seed: seed_t,
                    request_index: req.index,
                    victim: req.id,
                    message,
                });
            }
        }
    }
    Ok(VerificationVerdict {
        version: REPORT_VERSION,
        strategy: Strategy::Acot,
        pass: failures.is_empty(),
        deletions_checked: checked,
        failures,
        chi_square: None,
        note: Some(
            "strategy retrains from a fresh seed on every deletion; checked structure and determinism"
                .into(),
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{test_embed, Dataset, Example};
    use crate::qkmeans::TrainConfig;

    fn corpus(n: u64, dim: usize, seed: u64) -> Corpus {
        let mut ds = Dataset::default();
        for i in 0..n {
            ds.insert(Example {
                id: i + 1,
                input: format!("example text token run {i} alpha beta"),
                output: format!("out {}", i % 3),
                input_tokens: 7,
                output_tokens: 2,
            })
            .unwrap();
        }
        test_embed(&ds, dim, seed).unwrap()
    }

    #[test]
    fn chi_square_accepts_uniform_and_rejects_skew() {
        let expected = vec![100.0; 6];
        let (_, df, p_uniform) = chi_square_gof(&[101, 99, 102, 98, 100, 100], &expected).unwrap();
        assert_eq!(df, 5);
        assert!(p_uniform > 0.5, "p = {p_uniform}");
        let (_, _, p_skew) = chi_square_gof(&[300, 20, 70, 90, 60, 60], &expected).unwrap();
        assert!(p_skew < 1e-6, "p = {p_skew}");
        assert!(chi_square_gof(&[1], &[1.0]).is_err());
        assert!(chi_square_gof(&[1, 2], &[0.0, 3.0]).is_err());
    }

    #[test]
    fn k_subsets_enumerates_lexicographically() {
        let subs = k_subsets(&[1, 2, 3, 4], 2, 100).unwrap();
        assert_eq!(subs, vec![
            vec![1, 2], vec![1, 3], vec![1, 4],
            vec![2, 3], vec![2, 4], vec![3, 4],
        ]);
        assert!(k_subsets(&[1, 2, 3, 4, 5, 6, 7, 8], 4, 10).is_err());
    }

    #[test]
    fn stream_sampling_is_distinct_and_bounded() {
        let c = corpus(10, 4, 1);
        let mut rng = substream(7, "stream");
        let reqs = sample_uniform_stream(&c, 6, &mut rng).unwrap();
        assert_eq!(reqs.len(), 6);
        let mut ids: Vec<u64> = reqs.iter().map(|r| r.id).collect();
        assert_eq!(reqs.iter().map(|r| r.index).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 6);

        let mut rng2 = substream(7, "stream");
        let reqs2 = sample_uniform_stream(&c, 6, &mut rng2).unwrap();
        assert_eq!(reqs, reqs2);

        assert!(matches!(
            sample_uniform_stream(&c, 11, &mut rng),
            Err(Error::StreamTooLong { requested: 11, live: 10 })
        ));
    }

    #[test]
    fn stream_file_roundtrip_and_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stream.jsonl");
        let reqs = vec![
            DeletionRequest { id: 4, index: 0 },
            DeletionRequest { id: 9, index: 1 },
        ];
        save_stream(&reqs, &path).unwrap();
        assert_eq!(load_stream(&path).unwrap(), reqs);

        std::fs::write(&path, "{\"op\":\"insert\",\"id\":3}\n").unwrap();
        assert!(matches!(load_stream(&path), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&path, "{\"op\":\"delete\"}\n").unwrap();
        assert!(matches!(load_stream(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn run_stream_is_deterministic_and_prefix_consistent() {
        let c = corpus(14, 5, 2);
        let model = select_erase(&c, 3, 0.05, 5, 21, &TrainConfig::default()).unwrap();
        let mut rng = substream(77, "stream");
        let reqs = sample_uniform_stream(&c, 5, &mut rng).unwrap();

        let (final_a, report_a) = run_stream(&model, &c, &reqs, 900).unwrap();
        let (_, report_b) = run_stream(&model, &c, &reqs, 900).unwrap();
        assert_eq!(report_a, report_b);
        assert_eq!(report_a.requests, 5);
        assert_eq!(report_a.final_live, 14 - 5);
        assert_eq!(report_a.final_snapshot_hash, model_hash(&final_a).unwrap());
        let counted: u64 = report_a.stats.values().map(|s| s.count).sum();
        assert_eq!(counted, 5);

        // Serving the same stream in two chunks reproduces every hash.
        let (mid, first) = run_stream(&model, &c, &reqs[..2], 900).unwrap();
        let (_, second) = run_stream(&mid, &c, &reqs[2..], 900).unwrap();
        let chained: Vec<&str> = first
            .outcomes
            .iter()
            .chain(second.outcomes.iter())
            .map(|o| o.snapshot_hash.as_str())
            .collect();
        let whole: Vec<&str> = report_a.outcomes.iter().map(|o| o.snapshot_hash.as_str()).collect();
        assert_eq!(chained, whole);
    }

    #[test]
    fn dead_victim_fails_with_position() {
        let c = corpus(8, 4, 3);
        let model = select_erase(&c, 2, 0.05, 3, 5, &TrainConfig::default()).unwrap();
        let reqs = vec![
            DeletionRequest { id: 3, index: 0 },
            DeletionRequest { id: 3, index: 1 },
        ];
        assert!(matches!(
            run_stream(&model, &c, &reqs, 1),
            Err(Error::DeadVictim { id: 3, index: 1 })
        ));
    }

    #[test]
    fn verify_erase_passes_on_clean_implementation() {
        let c = corpus(16, 5, 4);
        let mut cfg = VerifyConfig::new(Strategy::Erase, 3, 404);
        cfg.trials = 6;
        cfg.iters = 4;
        let verdict = verify_exactness(&c, &cfg).unwrap();
        assert!(verdict.pass, "failures: {:?}", verdict.failures);
        assert_eq!(verdict.deletions_checked, 18);
    }

    #[test]
    fn verify_acot_passes() {
        let c = corpus(12, 4, 5);
        let mut cfg = VerifyConfig::new(Strategy::Acot, 3, 11);
        cfg.trials = 5;
        cfg.iters = 4;
        let verdict = verify_exactness(&c, &cfg).unwrap();
        assert!(verdict.pass, "failures: {:?}", verdict.failures);
    }

    #[test]
    fn verify_random_accepts_uniform_resampling() {
        let c = corpus(6, 4, 6); // survivors: 5, C(5,2) = 10 categories
        let mut cfg = VerifyConfig::new(Strategy::Random, 2, 99);
        cfg.trials = 4000;
        let verdict = verify_exactness(&c, &cfg).unwrap();
        let chi = verdict.chi_square.clone().unwrap();
        assert_eq!(chi.categories, 10);
        assert!(verdict.pass, "chi-square: {chi:?}");
    }

    #[test]
    fn audit_flags_forged_stable_deletion_of_seed_point() {
        let c = corpus(12, 5, 7);
        let model = select_erase(&c, 3, 0.05, 4, 31, &TrainConfig::default()).unwrap();
        let qkm = match &model.state {
            SelectorState::Erase(m) => m.clone(),
            _ => unreachable!(),
        };
        let victim = qkm.seed_ids[1];

        // Forge the buggy path: treat a seed deletion as an in-place downdate
        // instead of a reseeded retrain.
        let mut forged = qkm.clone();
        forged.live_ids.remove(&victim);
        let trace = forged.assign_trace.remove(&victim).unwrap();
        forged.final_assign.remove(&victim);
        for members in &mut forged.sorted_members {
            members.retain(|m| m.id != victim);
        }
        let x = c.embedding(victim).unwrap().to_vec();
        for (t, &j) in trace.iter().enumerate() {
            let st = &mut forged.per_iter[t][j];
            st.count -= 1;
            for (i, xi) in x.iter().enumerate() {
                st.sum[i] -= f64::from(*xi);
            }
        }
        let forged_model = SelectionModel {
            strategy: Strategy::Erase,
            k: model.k,
            selected: model.selected.clone(),
            state: SelectorState::Erase(forged),
        };
        let msg = audit_erase_post_state(&forged_model, &c, victim).unwrap();
        let msg = msg.expect("audit must flag the forged post-state");
        assert!(msg.contains("seed"), "unexpected witness: {msg}");
    }

    #[test]
    fn audit_accepts_honest_deletion() {
        let c = corpus(12, 5, 7);
        let model = select_erase(&c, 3, 0.05, 4, 31, &TrainConfig::default()).unwrap();
        let victim = *model
            .live_ids()
            .iter()
            .find(|id| {
                !matches!(&model.state, SelectorState::Erase(m) if m.seed_ids.contains(id))
            })
            .unwrap();
        let mut rng = substream(31, "retrain:0");
        let (after, _) = unlearn_selection(&model, &c, victim, &mut rng).unwrap();
        assert_eq!(audit_erase_post_state(&after, &c, victim).unwrap(), None);
    }
}
