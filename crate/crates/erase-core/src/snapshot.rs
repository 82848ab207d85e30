//! Canonical, bit-exact model serialization.
//!
//! Snapshots are versioned JSON with two properties that make byte equality
//! meaningful:
//! - every float is written as its IEEE-754 bit pattern in fixed-width hex
//!   (f64 -> 16 chars, f32 -> 8), so no decimal formatting ambiguity exists;
//! - objects are emitted with sorted keys (serialization goes through
//!   `serde_json::Value`, whose map is ordered).
//!
//! Two snapshots are equal iff their bytes are equal, and `model_hash` is a
//! SHA-256 over exactly those bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::lattice::{LatticeSpec, PhaseCell};
use crate::qkmeans::{ClusterIterStats, Member, QkmModel};
use crate::selectors::{AcotModel, RandomState, SelectionModel, SelectorState, Strategy};
use crate::{Error, Result};

pub const SNAPSHOT_VERSION: u32 = 1;

pub fn f64_to_hex(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

pub fn f64_from_hex(s: &str) -> Result<f64> {
    if s.len() != 16 {
        return Err(Error::Snapshot(format!("bad f64 bit pattern: {s:?}")));
    }
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Snapshot(format!("bad f64 bit pattern: {s:?}")))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialize with sorted object keys (routes through `serde_json::Value`).
pub fn canonical_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_vec(&v)?)
}

mod hex_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&super::f64_to_hex(*x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let s = String::deserialize(d)?;
        super::f64_from_hex(&s).map_err(serde::de::Error::custom)
    }
}

mod hex_f64_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(xs.iter().map(|x| super::f64_to_hex(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| super::f64_from_hex(s))
            .collect::<super::Result<Vec<f64>>>()
            .map_err(serde::de::Error::custom)
    }
}

mod hex_f64_vec_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(xs: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(xs.iter().map(|row| row.iter().map(|x| super::f64_to_hex(*x)).collect::<Vec<_>>()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<f64>>, D::Error> {
        let raw = Vec::<Vec<String>>::deserialize(d)?;
        raw.iter()
            .map(|row| row.iter().map(|s| super::f64_from_hex(s)).collect())
            .collect::<super::Result<Vec<Vec<f64>>>>()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct LatticeSnapshot {
    #[serde(with = "hex_f64")]
    epsilon: f64,
    #[serde(with = "hex_f64_vec")]
    theta: Vec<f64>,
    dim: usize,
    seed_tag: u64,
    cell: PhaseCell,
}

#[derive(Serialize, Deserialize)]
struct ClusterIterSnapshot {
    #[serde(with = "hex_f64_vec")]
    sum: Vec<f64>,
    count: u64,
    #[serde(with = "hex_f64_vec")]
    centroid_unquantized: Vec<f64>,
    #[serde(with = "hex_f64_vec")]
    centroid_quantized: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MemberSnapshot {
    id: u64,
    #[serde(with = "hex_f64")]
    dist: f64,
}

#[derive(Serialize, Deserialize)]
struct QkmSnapshot {
    spec: LatticeSnapshot,
    k: usize,
    iters: usize,
    #[serde(with = "hex_f64")]
    gamma: f64,
    root_seed: u64,
    seed_ids: Vec<u64>,
    #[serde(with = "hex_f64_vec_vec")]
    init_centroids: Vec<Vec<f64>>,
    per_iter: Vec<Vec<ClusterIterSnapshot>>,
    assign_trace: BTreeMap<u64, Vec<usize>>,
    final_assign: BTreeMap<u64, usize>,
    #[serde(with = "hex_f64_vec_vec")]
    final_centroids: Vec<Vec<f64>>,
    sorted_members: Vec<Vec<MemberSnapshot>>,
    live_ids: Vec<u64>,
    op_counter: u64,
}

#[derive(Serialize, Deserialize)]
struct AcotSnapshot {
    k: usize,
    iters: usize,
    root_seed: u64,
    #[serde(with = "hex_f64_vec_vec")]
    centroids: Vec<Vec<f64>>,
    assignment: BTreeMap<u64, usize>,
    sorted_members: Vec<Vec<MemberSnapshot>>,
    live_ids: Vec<u64>,
    op_counter: u64,
}

#[derive(Serialize, Deserialize)]
struct RandomSnapshot {
    root_seed: u64,
    live_ids: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum StateSnapshot {
    Erase(QkmSnapshot),
    Acot(AcotSnapshot),
    Random(RandomSnapshot),
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    version: u32,
    strategy: Strategy,
    k: usize,
    selected: Vec<u64>,
    state: StateSnapshot,
}

/// Plain selection summary (the `train` command's secondary output).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SelectionSummary {
    pub strategy: Strategy,
    pub k: usize,
    pub selected: Vec<u64>,
}

fn members_to_snapshot(lists: &[Vec<Member>]) -> Vec<Vec<MemberSnapshot>> {
    lists
        .iter()
        .map(|l| l.iter().map(|m| MemberSnapshot { id: m.id, dist: m.dist }).collect())
        .collect()
}

fn members_from_snapshot(lists: Vec<Vec<MemberSnapshot>>) -> Vec<Vec<Member>> {
    lists
        .into_iter()
        .map(|l| l.into_iter().map(|m| Member { id: m.id, dist: m.dist }).collect())
        .collect()
}

fn to_snapshot(model: &SelectionModel) -> SnapshotFile {
    let state = match &model.state {
        SelectorState::Erase(m) => StateSnapshot::Erase(QkmSnapshot {
            spec: LatticeSnapshot {
                epsilon: m.spec.epsilon,
                theta: m.spec.theta.clone(),
                dim: m.spec.dim,
                seed_tag: m.spec.seed_tag,
                cell: m.spec.cell,
            },
            k: m.k,
            iters: m.iters,
            gamma: m.gamma,
            root_seed: m.root_seed,
            seed_ids: m.seed_ids.clone(),
            init_centroids: m.init_centroids.clone(),
            per_iter: m
                .per_iter
                .iter()
                .map(|stats| {
                    stats
                        .iter()
                        .map(|s| ClusterIterSnapshot {
                            sum: s.sum.clone(),
                            count: s.count,
                            centroid_unquantized: s.centroid_unquantized.clone(),
                            centroid_quantized: s.centroid_quantized.clone(),
                        })
                        .collect()
                })
                .collect(),
            assign_trace: m.assign_trace.clone(),
            final_assign: m.final_assign.clone(),
            final_centroids: m.final_centroids.clone(),
            sorted_members: members_to_snapshot(&m.sorted_members),
            live_ids: m.live_ids.iter().copied().collect(),
            op_counter: m.op_counter,
        }),
        SelectorState::Acot(m) => StateSnapshot::Acot(AcotSnapshot {
            k: m.k,
            iters: m.iters,
            root_seed: m.root_seed,
            centroids: m.centroids.clone(),
            assignment: m.assignment.clone(),
            sorted_members: members_to_snapshot(&m.sorted_members),
            live_ids: m.live_ids.iter().copied().collect(),
            op_counter: m.op_counter,
        }),
        SelectorState::Random(m) => StateSnapshot::Random(RandomSnapshot {
            root_seed: m.root_seed,
            live_ids: m.live_ids.iter().copied().collect(),
        }),
    };
    SnapshotFile {
        version: SNAPSHOT_VERSION,
        strategy: model.strategy,
        k: model.k,
        selected: model.selected.clone(),
        state,
    }
}

fn from_snapshot(file: SnapshotFile) -> Result<SelectionModel> {
    if file.version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!(
            "unsupported snapshot version {} (expected {SNAPSHOT_VERSION})",
            file.version
        )));
    }
    let state = match file.state {
        StateSnapshot::Erase(s) => {
            if file.strategy != Strategy::Erase {
                return Err(Error::Snapshot("strategy does not match state".into()));
            }
            SelectorState::Erase(QkmModel {
                spec: LatticeSpec {
                    epsilon: s.spec.epsilon,
                    theta: s.spec.theta,
                    dim: s.spec.dim,
                    seed_tag: s.spec.seed_tag,
                    cell: s.spec.cell,
                },
                k: s.k,
                iters: s.iters,
                gamma: s.gamma,
                root_seed: s.root_seed,
                seed_ids: s.seed_ids,
                init_centroids: s.init_centroids,
                per_iter: s
                    .per_iter
                    .into_iter()
                    .map(|stats| {
                        stats
                            .into_iter()
                            .map(|c| ClusterIterStats {
                                sum: c.sum,
                                count: c.count,
                                centroid_unquantized: c.centroid_unquantized,
                                centroid_quantized: c.centroid_quantized,
                            })
                            .collect()
                    })
                    .collect(),
                assign_trace: s.assign_trace,
                final_assign: s.final_assign,
                final_centroids: s.final_centroids,
                sorted_members: members_from_snapshot(s.sorted_members),
                live_ids: s.live_ids.into_iter().collect::<BTreeSet<u64>>(),
                op_counter: s.op_counter,
            })
        }
        StateSnapshot::Acot(s) => {
            if file.strategy != Strategy::Acot {
                return Err(Error::Snapshot("strategy does not match state".into()));
            }
            SelectorState::Acot(AcotModel {
                k: s.k,
                iters: s.iters,
                root_seed: s.root_seed,
                centroids: s.centroids,
                assignment: s.assignment,
                sorted_members: members_from_snapshot(s.sorted_members),
                live_ids: s.live_ids.into_iter().collect(),
                op_counter: s.op_counter,
            })
        }
        StateSnapshot::Random(s) => {
            if file.strategy != Strategy::Random {
                return Err(Error::Snapshot("strategy does not match state".into()));
            }
            SelectorState::Random(RandomState {
                root_seed: s.root_seed,
                live_ids: s.live_ids.into_iter().collect(),
            })
        }
    };
    Ok(SelectionModel { strategy: file.strategy, k: file.k, selected: file.selected, state })
}

/// Canonical snapshot bytes for a selection model.
pub fn model_bytes(model: &SelectionModel) -> Result<Vec<u8>> {
    canonical_json(&to_snapshot(model))
}

/// SHA-256 (hex) of the canonical snapshot bytes.
pub fn model_hash(model: &SelectionModel) -> Result<String> {
    Ok(sha256_hex(&model_bytes(model)?))
}

pub fn save_selection_model(model: &SelectionModel, path: &Path) -> Result<()> {
    let mut bytes = model_bytes(model)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_selection_model(path: &Path) -> Result<SelectionModel> {
    let bytes = std::fs::read(path)?;
    let file: SnapshotFile = serde_json::from_slice(&bytes)?;
    from_snapshot(file)
}
