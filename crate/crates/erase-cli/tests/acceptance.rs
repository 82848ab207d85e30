//! Acceptance gate: one test per release criterion, named so that the cargo
//! test report reads as a per-criterion pass/fail checklist. Each test also
//! enforces its own wall-clock budget.
//!
//! Criterion 1 is expected to FAIL: it asserts the bundled reference
//! break-even table cell-by-cell at 5%, and one task's published row
//! (Timedial) is internally inconsistent with its own published cost inputs
//! by one decade. The failure message carries the full per-cell evidence.
//! The other fifteen checks must pass.

use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use erase_core::costmodel::{
    calibrated_params, inference_flops, normalized_aggregate_score, reference_tasks,
    round_sig_figs, Method,
};
use erase_core::engine::{certificate_oracle_battery, verify_exactness, VerifyConfig};
use erase_core::lattice::{sample_phase, PhaseCell};
use erase_core::rng::substream;
use erase_core::selectors::Strategy;
use erase_core::synth::{gaussian_mixture, MixtureParams};

fn erase_bin() -> &'static str {
    env!("CARGO_BIN_EXE_erase")
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(erase_bin())
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn erase binary")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed (status {:?}):\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
}

fn within(budget: Duration, elapsed: Duration, what: &str) {
    assert!(elapsed <= budget, "{what} took {elapsed:?}, budget {budget:?}");
}

/// Criterion 1 — reference break-even table: all sixteen cells recomputed
/// from the bundled per-deletion and per-query costs, each within 5% of the
/// published cell. Budget < 1 s.
///
/// Expected RED: the Timedial row is published one decade too small; its
/// cells cannot be within 5% of a value its own cost inputs contradict. The
/// recomputed mantissas match the published ones after a x10 correction,
/// which this test demonstrates in its failure message rather than silently
/// repairing the published exponent.
#[test]
fn criterion_1_reference_break_even_cells_within_5pct() {
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let out = run_in(dir.path(), &["cost", "--paper-mode", "--json", "--out", "ref.json"]);
    let elapsed = t0.elapsed();
    assert_ok(&out, "cost --paper-mode");
    within(Duration::from_secs(1), elapsed, "criterion 1");

    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("ref.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().expect("rows array");
    assert_eq!(rows.len(), 16, "four tasks x four methods");

    let mut lines = Vec::new();
    let mut failures = 0usize;
    for row in rows {
        let task = row["task"].as_str().unwrap();
        let method = row["method"].as_str().unwrap();
        let computed = row["computed_break_even"].as_f64().unwrap();
        let printed = row["printed_break_even"].as_f64().unwrap();
        let rel = (computed - printed).abs() / printed;
        if rel <= 0.05 {
            lines.push(format!(
                "PASS {task:<25} {method:<6} computed {computed:>8.1} printed {printed:>8.1} ({:.2}% off)",
                rel * 100.0
            ));
        } else {
            failures += 1;
            let decade_fixed = round_sig_figs(computed, 1) == printed * 10.0;
            lines.push(format!(
                "FAIL {task:<25} {method:<6} computed {computed:>8.1} printed {printed:>8.1} ({:.0}% off; x10 exponent slip in the published cell: {})",
                rel * 100.0,
                if decade_fixed { "1-sig-fig mantissa matches after x10" } else { "mantissa does not match" }
            ));
        }
    }
    let table = lines.join("\n");
    println!("{table}");
    assert_eq!(
        failures, 0,
        "{failures} of 16 published cells are not within 5% of the recomputation:\n{table}"
    );
}

/// Criterion 2 — cost-table internal consistency: the 4-shard inference row
/// equals 4x the single-model row within 1%, and the 3-/4-shot rows are
/// reproduced within 3% after calibrating the mean query length from the
/// single-model row and the mean example length from the 2-shot row.
/// Budget < 1 s.
#[test]
fn criterion_2_inference_table_consistency() {
    let t0 = Instant::now();
    for task in reference_tasks() {
        let four_times = 4.0 * task.inference_1sisa_flops;
        let rel = (four_times - task.inference_4sisa_flops).abs() / task.inference_4sisa_flops;
        assert!(
            rel <= 0.01,
            "{}: 4x single-model inference {four_times:e} vs published 4-shard {:e} ({:.3}% off)",
            task.name,
            task.inference_4sisa_flops,
            rel * 100.0
        );

        let params = calibrated_params(&task);
        let model_4sisa = inference_flops(Method::Sisa { shards: 4 }, &params).unwrap();
        let rel = (model_4sisa - task.inference_4sisa_flops).abs() / task.inference_4sisa_flops;
        assert!(rel <= 0.01, "{}: modeled 4-shard inference {:.3}% off", task.name, rel * 100.0);

        for (shots, published) in
            [(3u32, task.inference_shots_flops[1]), (4, task.inference_shots_flops[2])]
        {
            let modeled = inference_flops(Method::InContext { shots }, &params).unwrap();
            let rel = (modeled - published).abs() / published;
            assert!(
                rel <= 0.03,
                "{}: {shots}-shot modeled {modeled:e} vs published {published:e} ({:.2}% off)",
                task.name,
                rel * 100.0
            );
        }
    }
    within(Duration::from_secs(1), t0.elapsed(), "criterion 2");
}

/// Criterion 3 — deterministic exactness oracle: 110 randomized instances
/// (corpus <= 200 points, dimension <= 8, k <= 5, lattice width in
/// {0.02, 0.05, 0.2}); for every live point of every instance the deletion
/// certificate must agree with a same-coins retrain on the survivors
/// (soundness and completeness), and every stable deletion's in-place
/// post-state must match that retrain. Every even-numbered instance has at
/// most 40 points, so the exhaustive audit covers the small-corpus regime
/// throughout. Budget < 5 min.
#[test]
fn criterion_3_exactness_oracle_deterministic() {
    let t0 = Instant::now();
    let summary = certificate_oracle_battery(110, 0x5EED_CAFE).expect("battery runs");
    within(Duration::from_secs(300), t0.elapsed(), "criterion 3");
    assert!(summary.instances >= 100);
    assert!(
        summary.witnesses.is_empty(),
        "exactness failures:\n{}",
        summary.witnesses.join("\n")
    );
    assert!(summary.stable > 0 && summary.shifts > 0 && summary.seed_hits > 0);
    println!(
        "criterion 3: {} deletions audited over {} instances (stable {}, seed hits {}, shifts {})",
        summary.deletions_checked, summary.instances, summary.stable, summary.seed_hits, summary.shifts
    );
}

/// Criterion 4 — distributional exactness oracle: deleting one point under
/// the random strategy and re-selecting must match direct selection on the
/// six survivors exactly in distribution; chi-square over all fifteen
/// unordered pairs, 50,000 trials, p > 0.01. Budget < 1 min.
#[test]
fn criterion_4_exactness_oracle_distributional() {
    let t0 = Instant::now();
    let params = MixtureParams { components: 1, center_spread: 1.0, cluster_std: 0.5 };
    let corpus = gaussian_mixture(7, 3, &params, 404).expect("corpus");
    let mut cfg = VerifyConfig::new(Strategy::Random, 2, 4040);
    cfg.trials = 50_000;
    let verdict = verify_exactness(&corpus, &cfg).expect("verification runs");
    within(Duration::from_secs(60), t0.elapsed(), "criterion 4");
    let chi = verdict.chi_square.expect("chi-square summary");
    assert_eq!(chi.trials, 50_000);
    assert_eq!(chi.categories, 15);
    assert_eq!(chi.df, 14);
    assert!(
        verdict.pass && chi.p_value > 0.01,
        "uniformity rejected: stat {} p {}",
        chi.statistic,
        chi.p_value
    );
    println!("criterion 4: chi-square stat {:.3}, p = {:.4}", chi.statistic, chi.p_value);
}

#[derive(Debug)]
struct BenchRow {
    size: u64,
    victims: u64,
    stable: u64,
    seed_hits: u64,
    shifts: u64,
    evals_mean: f64,
    evals_max: u64,
}

fn parse_bench_csv(text: &str) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            assert_eq!(
                line,
                "size,rep,victims,stable,seed_hits,centroid_shifts,retrain_fraction,stable_evals_mean,stable_evals_max"
            );
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 9, "bad CSV row: {line}");
        rows.push(BenchRow {
            size: f[0].parse().unwrap(),
            victims: f[2].parse().unwrap(),
            stable: f[3].parse().unwrap(),
            seed_hits: f[4].parse().unwrap(),
            shifts: f[5].parse().unwrap(),
            evals_mean: f[7].parse().unwrap(),
            evals_max: f[8].parse().unwrap(),
        });
    }
    rows
}

/// Criterion 5 — dataset-size independence of the certificate, and the
/// 1 - O(1/eps|D|) stability scaling. The benchmark trains on Gaussian
/// mixtures of 1k..16k points (T=10, k=4, d=16, eps=0.05) and certifies the
/// deletion of every point, 160 repetitions per size:
/// - mean and max certificate distance evaluations must be exactly equal
///   across |D|=1,024 and |D|=16,384 (both exactly T*k = 40);
/// - the log-log slope of aggregate retrain fraction vs corpus size must be
///   -1 +/- 0.3, with at least 500 certified deletions per size.
///
/// Budget < 10 min.
#[test]
fn criterion_5_certificate_cost_independence_and_retrain_slope() {
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let out = run_in(
        dir.path(),
        &[
            "bench",
            "--sizes", "1024,2048,4096,8192,16384",
            "--trials", "160",
            "--dim", "16",
            "--k", "4",
            "--epsilon", "0.05",
            "--iters", "10",
            "--seed", "7",
            "--out", "bench.csv",
        ],
    );
    let elapsed = t0.elapsed();
    assert_ok(&out, "bench");
    within(Duration::from_secs(600), elapsed, "criterion 5");

    let rows = parse_bench_csv(&std::fs::read_to_string(dir.path().join("bench.csv")).unwrap());
    assert_eq!(rows.len(), 5 * 160);

    // Exact equality of certificate cost across the smallest and largest
    // corpus: every repetition's mean and max must be bitwise identical.
    let agg_cost = |size: u64| -> (f64, u64) {
        let mut mean: Option<f64> = None;
        let mut max: Option<u64> = None;
        for r in rows.iter().filter(|r| r.size == size) {
            assert!(r.stable > 0, "size {size} produced a repetition with no stable deletion");
            match mean {
                None => mean = Some(r.evals_mean),
                Some(m) => assert_eq!(m.to_bits(), r.evals_mean.to_bits(), "mean varies within size {size}"),
            }
            match max {
                None => max = Some(r.evals_max),
                Some(m) => assert_eq!(m, r.evals_max, "max varies within size {size}"),
            }
        }
        (mean.unwrap(), max.unwrap())
    };
    let (mean_small, max_small) = agg_cost(1024);
    let (mean_large, max_large) = agg_cost(16384);
    assert_eq!(mean_small.to_bits(), mean_large.to_bits(), "certificate mean cost depends on |D|");
    assert_eq!(max_small, max_large, "certificate max cost depends on |D|");
    assert_eq!(mean_small, 40.0, "T*k = 10*4 distance evaluations");
    assert_eq!(max_small, 40);

    // Slope of aggregate retrain fraction vs size, least squares in log-log.
    let sizes = [1024u64, 2048, 4096, 8192, 16384];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &size in &sizes {
        let victims: u64 = rows.iter().filter(|r| r.size == size).map(|r| r.victims).sum();
        let retrains: u64 =
            rows.iter().filter(|r| r.size == size).map(|r| r.seed_hits + r.shifts).sum();
        assert!(victims >= 500, "size {size}: only {victims} certified deletions");
        assert!(retrains > 0, "size {size}: no retrains at all");
        xs.push((size as f64).ln());
        ys.push((retrains as f64 / victims as f64).ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let slope = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    println!("criterion 5: retrain-fraction log-log slope {slope:.4}");
    assert!(
        (-1.3..=-0.7).contains(&slope),
        "slope {slope:.4} outside -1 +/- 0.3"
    );
}

/// Criterion 6 — lattice invariants: for each of three widths, 10,000
/// randomized cases of the sup-norm bound, idempotence, and whole-cell
/// translation covariance, plus an exhaustive grid of boundary points
/// (half-cell offsets, where rounding ties live). Budget < 10 s.
#[test]
fn criterion_6_lattice_invariants() {
    use rand::Rng;
    let t0 = Instant::now();
    for eps in [0.05f64, 0.5, 1.0] {
        let mut rng = substream(606, &format!("lattice:{eps}"));
        for case in 0..10_000 {
            let dim = 1 + case % 4;
            let spec = sample_phase(dim, eps, PhaseCell::Fundamental, &mut rng, 0).unwrap();
            let x: Vec<f64> = (0..dim).map(|_| (rng.random::<f64>() - 0.5) * 200.0).collect();
            let q = spec.quantize(&x).unwrap();

            // Sup-norm bound: each coordinate moves at most half a cell.
            for (a, b) in x.iter().zip(&q) {
                assert!((a - b).abs() <= eps / 2.0 + 1e-12, "bound violated: {a} -> {b} (eps {eps})");
            }
            // Idempotence, bitwise.
            let qq = spec.quantize(&q).unwrap();
            for (a, b) in q.iter().zip(&qq) {
                assert_eq!(a.to_bits(), b.to_bits(), "not idempotent at eps {eps}");
            }
            // Translation covariance by whole cells.
            let z: i32 = rng.random_range(-50..=50);
            let shifted: Vec<f64> = x.iter().map(|v| v + eps * f64::from(z)).collect();
            let qs = spec.quantize(&shifted).unwrap();
            for (a, b) in qs.iter().zip(&q) {
                assert!(
                    (a - (b + eps * f64::from(z))).abs() < 1e-9,
                    "translation covariance violated at eps {eps}"
                );
            }
        }

        // Exhaustive boundary grid: points at half-cell offsets, where
        // rounding ties live. The general contract — on-lattice output,
        // idempotence, within half a cell — must hold on the realized
        // floating-point grid for every width.
        let spec = sample_phase(1, eps, PhaseCell::Fundamental, &mut substream(607, "grid"), 0).unwrap();
        let theta = spec.theta[0];
        for j in -200i32..=200 {
            let x = theta + f64::from(j) * (eps / 2.0);
            let q = spec.quantize(&[x]).unwrap()[0];
            assert!((x - q).abs() <= eps / 2.0 + 1e-12);
            let qq = spec.quantize(&[q]).unwrap()[0];
            assert_eq!(q.to_bits(), qq.to_bits());
            // On-lattice residue: (q - theta)/eps is an integer.
            let residue = (q - theta) / eps;
            assert!((residue - residue.round()).abs() < 1e-9, "off-lattice output at eps {eps}");
        }

        // Exact tie direction (half rounds away from zero in the scaled
        // coordinate) is asserted where half-cells are exactly representable
        // in binary; 0.05 is not dyadic, so its grid points are never exact
        // ties and carry no tie semantics to check.
        if eps == 0.5 || eps == 1.0 {
            let spec = erase_core::lattice::LatticeSpec::with_zero_phase(1, eps);
            for j in -200i32..=200 {
                let x = f64::from(j) * (eps / 2.0);
                let q = spec.quantize(&[x]).unwrap()[0];
                if j % 2 == 0 {
                    assert_eq!(q.to_bits(), x.to_bits(), "lattice point moved at eps {eps}");
                } else {
                    let expected = eps * (f64::from(j) / 2.0).round();
                    assert_eq!(
                        q.to_bits(),
                        expected.to_bits(),
                        "tie direction wrong at eps {eps}, j {j}"
                    );
                }
            }
        }
    }
    within(Duration::from_secs(10), t0.elapsed(), "criterion 6");
}

/// Criterion 7 — determinism: every command, run twice with identical
/// arguments, produces byte-identical stdout, stderr, and output files.
/// Budget < 1 min.
#[test]
fn criterion_7_cli_determinism() {
    let t0 = Instant::now();

    let write_inputs = |dir: &Path| {
        let mut dataset = String::new();
        for i in 1..=30u64 {
            dataset.push_str(&format!(
                "{{\"id\":{i},\"input\":\"question number {i} about topic {}\",\"output\":\"answer {i}\"}}\n",
                i % 5
            ));
        }
        std::fs::write(dir.join("data.jsonl"), dataset).unwrap();
        let mut stream = String::new();
        for id in [2u64, 9, 17, 21, 4, 28] {
            stream.push_str(&format!("{{\"op\":\"delete\",\"id\":{id}}}\n"));
        }
        std::fs::write(dir.join("stream.jsonl"), stream).unwrap();
        std::fs::write(
            dir.join("scenario.json"),
            "{\"method\":{\"in_context\":3},\"train_flops_full\":1e12}\n",
        )
        .unwrap();
    };

    // Each entry: (argv, files the command writes).
    let commands: Vec<(Vec<&str>, Vec<&str>)> = vec![
        (
            vec!["embed", "--dataset", "data.jsonl", "--dim", "8", "--seed", "3", "--out", "emb.bin"],
            vec!["emb.bin"],
        ),
        (
            vec![
                "train", "--dataset", "data.jsonl", "--embeddings", "emb.bin", "--strategy",
                "erase", "--k", "3", "--epsilon", "0.05", "--iters", "6", "--seed", "4",
                "--snapshot", "model.json",
            ],
            vec!["model.json"],
        ),
        (
            vec![
                "train", "--dataset", "data.jsonl", "--embeddings", "emb.bin", "--strategy",
                "acot", "--k", "3", "--iters", "6", "--seed", "4", "--snapshot", "model_acot.json",
            ],
            vec!["model_acot.json"],
        ),
        (
            vec![
                "train", "--dataset", "data.jsonl", "--embeddings", "emb.bin", "--strategy",
                "random", "--k", "3", "--seed", "4", "--snapshot", "model_rand.json",
            ],
            vec!["model_rand.json"],
        ),
        (
            vec![
                "unlearn", "--dataset", "data.jsonl", "--embeddings", "emb.bin", "--snapshot",
                "model.json", "--stream", "stream.jsonl", "--seed", "5", "--snapshot-out",
                "after.json", "--out", "report.json", "--json",
            ],
            vec!["after.json", "report.json"],
        ),
        (
            vec![
                "verify", "--dataset", "data.jsonl", "--embeddings", "emb.bin", "--strategy",
                "random", "--k", "2", "--seed", "6", "--trials", "2000", "--out", "verdict.json",
            ],
            vec!["verdict.json"],
        ),
        (
            vec!["cost", "--paper-mode", "--json", "--out", "ref.json"],
            vec!["ref.json"],
        ),
        (
            vec![
                "cost", "--scenario", "scenario.json", "--dataset", "data.jsonl", "--out",
                "cost.json", "--json",
            ],
            vec!["cost.json"],
        ),
        (
            vec!["bench", "--sizes", "64,128", "--trials", "2", "--seed", "7", "--out", "bench.csv"],
            vec!["bench.csv"],
        ),
    ];

    type CommandRecord = (String, String, Vec<(String, Vec<u8>)>);
    let run_all = |dir: &Path| -> Vec<CommandRecord> {
        write_inputs(dir);
        commands
            .iter()
            .map(|(argv, outputs)| {
                let out = run_in(dir, argv);
                assert_ok(&out, &format!("erase {}", argv.join(" ")));
                let files = outputs
                    .iter()
                    .map(|f| (f.to_string(), std::fs::read(dir.join(f)).unwrap()))
                    .collect();
                (
                    String::from_utf8(out.stdout).unwrap(),
                    String::from_utf8(out.stderr).unwrap(),
                    files,
                )
            })
            .collect()
    };

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let runs_a = run_all(dir_a.path());
    let runs_b = run_all(dir_b.path());

    for (i, ((sa, ea, fa), (sb, eb, fb))) in runs_a.iter().zip(&runs_b).enumerate() {
        let argv = commands[i].0.join(" ");
        assert_eq!(sa, sb, "stdout differs between runs: erase {argv}");
        assert_eq!(ea, eb, "stderr differs between runs: erase {argv}");
        for ((name_a, bytes_a), (_, bytes_b)) in fa.iter().zip(fb) {
            assert_eq!(bytes_a, bytes_b, "{name_a} differs between runs: erase {argv}");
        }
    }
    within(Duration::from_secs(60), t0.elapsed(), "criterion 7");
    println!("criterion 7: {} commands byte-identical across two runs", commands.len());
}

/// Criterion 8 — normalized aggregate score: endpoints map to 0 and 100, the
/// mapping is affine over random triples, and a degenerate range is
/// rejected. Budget < 1 s.
#[test]
fn criterion_8_normalized_score() {
    use rand::Rng;
    let t0 = Instant::now();
    assert_eq!(normalized_aggregate_score(0.5, 0.5, 1.0).unwrap(), 0.0);
    assert_eq!(normalized_aggregate_score(1.0, 0.5, 1.0).unwrap(), 100.0);
    assert!((normalized_aggregate_score(0.7, 0.5, 1.0).unwrap() - 40.0).abs() < 1e-9);

    let mut rng = substream(808, "score");
    for _ in 0..10_000 {
        let low: f64 = rng.random_range(-100.0..100.0);
        let high = low + rng.random_range(0.01..100.0);
        let a: f64 = rng.random_range(-50.0..150.0);
        let b: f64 = rng.random_range(-50.0..150.0);
        let lambda: f64 = rng.random_range(0.0..1.0);
        let sa = normalized_aggregate_score(a, low, high).unwrap();
        let sb = normalized_aggregate_score(b, low, high).unwrap();
        let mixed = normalized_aggregate_score(lambda * a + (1.0 - lambda) * b, low, high).unwrap();
        let expected = lambda * sa + (1.0 - lambda) * sb;
        assert!(
            (mixed - expected).abs() <= 1e-7 * (1.0 + expected.abs()),
            "linearity violated: {mixed} vs {expected}"
        );
    }
    assert!(normalized_aggregate_score(1.0, 2.0, 2.0).is_err(), "degenerate range accepted");
    within(Duration::from_secs(1), t0.elapsed(), "criterion 8");
}
