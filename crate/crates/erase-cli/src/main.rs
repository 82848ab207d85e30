//! `erase` — exemplar selection with cheap exact deletion.
//!
//! Pipeline: `embed` a dataset, `train` a selector, serve deletion streams
//! with `unlearn`, audit exactness with `verify`, compare costs with `cost`,
//! and measure certificate scaling with `bench`.
//!
//! Every command is deterministic given its flags: all randomness flows from
//! `--seed` through labeled substreams. With `--json`, stdout carries exactly
//! one machine-parseable JSON document and all diagnostics go to stderr.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage/validation error,
//! 3 stream error (e.g. deleting an id that is no longer live).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use erase_core::corpus::{load_dataset, load_embeddings, save_embeddings, test_embed, Corpus};
use erase_core::costmodel::{
    self, Method, ScenarioParams, SisaConvention, TokenStats,
};
use erase_core::engine::{
    load_stream, run_stream, verify_exactness, StreamReport, VerifyConfig,
};
use erase_core::qkmeans::{deletion_certificate, train, Certificate, TrainConfig};
use erase_core::rng::substream_tag;
use erase_core::selectors::{
    select_acot, select_erase, select_random, SelectionModel, Strategy,
};
use erase_core::snapshot::{
    load_selection_model, save_selection_model, SelectionSummary,
};
use erase_core::synth::{gaussian_mixture, MixtureParams};
use erase_core::Error;

#[derive(Parser)]
#[command(
    name = "erase",
    version,
    about = "Exemplar selection with cheap exact deletion",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Embed a JSONL dataset into deterministic unit vectors.
    Embed(EmbedArgs),
    /// Train a selector and write its snapshot plus the selection.
    #[command(alias = "select")]
    Train(TrainArgs),
    /// Serve an ordered deletion stream against a snapshot.
    Unlearn(UnlearnArgs),
    /// Run the exactness battery for a strategy.
    Verify(VerifyArgs),
    /// Break-even cost analysis (scenario file or bundled reference tables).
    Cost(CostArgs),
    /// Certificate-cost and retrain-fraction scaling over synthetic corpora.
    Bench(BenchArgs),
}

#[derive(Args)]
struct EmbedArgs {
    /// JSONL dataset: one {"id","input","output"} object per line.
    #[arg(long)]
    dataset: PathBuf,
    /// Embedding dimension.
    #[arg(long)]
    dim: usize,
    /// Root seed for the hash embedder.
    #[arg(long)]
    seed: u64,
    /// Output embedding file (binary).
    #[arg(long)]
    out: PathBuf,
    /// Emit a JSON summary on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Selection strategy: erase | acot | random.
    #[arg(long, value_parser = parse_strategy)]
    strategy: Strategy,
    /// Number of exemplars (clusters).
    #[arg(long)]
    k: usize,
    /// Lattice cell width (erase strategy).
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    /// Clustering iterations (erase and acot strategies).
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Root seed; all training randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the model snapshot.
    #[arg(long)]
    snapshot: PathBuf,
    /// Optional selection summary JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct UnlearnArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Input model snapshot (left untouched).
    #[arg(long)]
    snapshot: PathBuf,
    /// JSONL deletion stream: one {"op":"delete","id":N} per line.
    #[arg(long)]
    stream: PathBuf,
    /// Seed for the stream's retrain substreams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the post-stream snapshot
    /// (default: <snapshot>.unlearned.json).
    #[arg(long)]
    snapshot_out: Option<PathBuf>,
    /// Optional stream report JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Re-serve every stream prefix and check the recorded hashes.
    #[arg(long)]
    check_prefixes: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_parser = parse_strategy)]
    strategy: Strategy,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Independent instances (erase/acot) or sampling trials (random).
    /// Defaults: 25 instances, or 20000 trials for random.
    #[arg(long)]
    trials: Option<usize>,
    /// Deletions audited per instance (erase/acot).
    #[arg(long, default_value_t = 3)]
    deletions: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CostArgs {
    /// Reproduce the bundled reference break-even analysis (7B-parameter
    /// decoder, four QA tasks).
    #[arg(long)]
    paper_mode: bool,
    /// Scenario JSON: {"method":{"sisa":N}|{"in_context":K},
    /// "train_flops_full":F, "per_token_flops":F, "avg_input_tokens":F,
    /// "avg_example_tokens":F}. Token fields may be omitted when --dataset
    /// is given.
    #[arg(long, conflicts_with = "paper_mode")]
    scenario: Option<PathBuf>,
    /// Dataset for token statistics when the scenario omits them.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Snapshot whose selection defines the example-token average.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// SISA per-deletion convention: per-shard-train | expected-half.
    #[arg(long, default_value = "per-shard-train", value_parser = parse_convention)]
    convention: SisaConvention,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated corpus sizes, e.g. 1024,2048,4096.
    #[arg(long, value_delimiter = ',', required = true)]
    sizes: Vec<usize>,
    /// Repetitions per size (fresh corpus and training seed each).
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 10)]
    iters: usize,
    /// Mixture components of the synthetic corpus.
    #[arg(long, default_value_t = 4)]
    components: usize,
    /// Within-component standard deviation.
    #[arg(long, default_value_t = 0.05)]
    cluster_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path (stdout when omitted and --json is not set).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    match s {
        "erase" => Ok(Strategy::Erase),
        "acot" => Ok(Strategy::Acot),
        "random" => Ok(Strategy::Random),
        other => Err(format!("unknown strategy {other:?} (erase | acot | random)")),
    }
}

fn parse_convention(s: &str) -> Result<SisaConvention, String> {
    match s {
        "per-shard-train" => Ok(SisaConvention::PerShardTrain),
        "expected-half" => Ok(SisaConvention::ExpectedHalf),
        other => Err(format!(
            "unknown convention {other:?} (per-shard-train | expected-half)"
        )),
    }
}

struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError { code: 2, msg: msg.into() }
    }

    fn verification(msg: impl Into<String>) -> Self {
        CliError { code: 1, msg: msg.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::DeadVictim { .. } | Error::StreamTooLong { .. } => 3,
            _ => 2,
        };
        CliError { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError { code: 2, msg: e.to_string() }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError { code: 2, msg: e.to_string() }
    }
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Embed(a) => cmd_embed(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Unlearn(a) => cmd_unlearn(a),
        Cmd::Verify(a) => cmd_verify(a),
        Cmd::Cost(a) => cmd_cost(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn load_corpus(dataset: &Path, embeddings: &Path) -> Result<Corpus, CliError> {
    let ds = load_dataset(dataset)
        .map_err(|e| CliError::usage(format!("{}: {e}", dataset.display())))?;
    load_embeddings(&ds, embeddings)
        .map_err(|e| CliError::usage(format!("{}: {e}", embeddings.display())))
}

fn write_json_file(path: &Path, value: &impl serde::Serialize) -> CliResult {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)?;
    Ok(())
}

fn emit(json: bool, value: &impl serde::Serialize, human: impl FnOnce()) -> CliResult {
    if json {
        println!("{}", serde_json::to_string(value)?);
    } else {
        human();
    }
    Ok(())
}

fn cmd_embed(a: EmbedArgs) -> CliResult {
    let ds = load_dataset(&a.dataset)
        .map_err(|e| CliError::usage(format!("{}: {e}", a.dataset.display())))?;
    let corpus = test_embed(&ds, a.dim, a.seed)?;
    save_embeddings(&corpus, &a.out)?;
    let summary = serde_json::json!({
        "count": corpus.embeddings.len(),
        "dim": a.dim,
        "out": a.out.display().to_string(),
    });
    emit(a.json, &summary, || {
        println!("embedded {} examples at dim {} -> {}", corpus.embeddings.len(), a.dim, a.out.display());
    })
}

fn train_model(
    corpus: &Corpus,
    strategy: Strategy,
    k: usize,
    epsilon: f64,
    iters: usize,
    seed: u64,
) -> Result<SelectionModel, Error> {
    match strategy {
        Strategy::Erase => select_erase(corpus, k, epsilon, iters, seed, &TrainConfig::default()),
        Strategy::Acot => select_acot(corpus, k, iters, seed),
        Strategy::Random => select_random(corpus, k, seed),
    }
}

fn cmd_train(a: TrainArgs) -> CliResult {
    let corpus = load_corpus(&a.dataset, &a.embeddings)?;
    let model = train_model(&corpus, a.strategy, a.k, a.epsilon, a.iters, a.seed)?;
    save_selection_model(&model, &a.snapshot)?;
    let summary = SelectionSummary {
        strategy: model.strategy,
        k: model.k,
        selected: model.selected.clone(),
    };
    if let Some(out) = &a.out {
        write_json_file(out, &summary)?;
    }
    emit(a.json, &summary, || {
        let ids: Vec<String> = summary.selected.iter().map(|i| i.to_string()).collect();
        println!("selected ({}): {}", summary.strategy, ids.join(" "));
    })
}

fn default_snapshot_out(snapshot: &Path) -> PathBuf {
    let stem = snapshot.file_stem().and_then(|s| s.to_str()).unwrap_or("snapshot");
    snapshot.with_file_name(format!("{stem}.unlearned.json"))
}

fn cmd_unlearn(a: UnlearnArgs) -> CliResult {
    let corpus = load_corpus(&a.dataset, &a.embeddings)?;
    let model = load_selection_model(&a.snapshot)
        .map_err(|e| CliError::usage(format!("{}: {e}", a.snapshot.display())))?;
    let requests = load_stream(&a.stream)
        .map_err(|e| CliError::usage(format!("{}: {e}", a.stream.display())))?;
    let (final_model, report) = run_stream(&model, &corpus, &requests, a.seed)?;

    if a.check_prefixes {
        for p in 1..=requests.len() {
            let (_, prefix_report) = run_stream(&model, &corpus, &requests[..p], a.seed)?;
            let expected = &report.outcomes[p - 1].snapshot_hash;
            if &prefix_report.final_snapshot_hash != expected {
                return Err(CliError::verification(format!(
                    "prefix {p} replay hash {} != recorded {expected}",
                    prefix_report.final_snapshot_hash
                )));
            }
        }
        eprintln!("prefix check: {} prefixes replayed, all hashes match", requests.len());
    }

    let snapshot_out = a.snapshot_out.unwrap_or_else(|| default_snapshot_out(&a.snapshot));
    if snapshot_out == a.snapshot {
        return Err(CliError::usage(
            "refusing to overwrite the input snapshot; pass a different --snapshot-out",
        ));
    }
    save_selection_model(&final_model, &snapshot_out)?;
    if let Some(out) = &a.out {
        write_json_file(out, &report)?;
    }
    emit(a.json, &report, || print_histogram(&report))
}

fn print_histogram(report: &StreamReport) {
    println!(
        "served {} deletions (retrain fraction {:.4}), {} live, final state {}",
        report.requests, report.retrain_fraction, report.final_live, report.final_snapshot_hash
    );
    for (kind, s) in &report.stats {
        println!(
            "  {kind:<20} count {:<6} mean evals {:<10.2} max evals {}",
            s.count, s.mean_distance_evals, s.max_distance_evals
        );
    }
}

fn cmd_verify(a: VerifyArgs) -> CliResult {
    let corpus = load_corpus(&a.dataset, &a.embeddings)?;
    let mut cfg = VerifyConfig::new(a.strategy, a.k, a.seed);
    cfg.epsilon = a.epsilon;
    cfg.iters = a.iters;
    cfg.deletions_per_trial = a.deletions;
    if let Some(t) = a.trials {
        cfg.trials = t;
    }
    let verdict = verify_exactness(&corpus, &cfg)?;
    if let Some(out) = &a.out {
        write_json_file(out, &verdict)?;
    }
    emit(a.json, &verdict, || {
        println!(
            "strategy {} checked {} deletions: {}",
            verdict.strategy,
            verdict.deletions_checked,
            if verdict.pass { "PASS" } else { "FAIL" }
        );
        if let Some(chi) = &verdict.chi_square {
            println!(
                "  chi-square over {} subsets: stat {:.3}, df {}, p = {:.4}",
                chi.categories, chi.statistic, chi.df, chi.p_value
            );
        }
        for w in &verdict.failures {
            println!("  witness: seed {} request {} victim {}: {}", w.instance_seed, w.request_index, w.victim, w.message);
        }
    })?;
    if verdict.pass {
        Ok(())
    } else {
        Err(CliError::verification(format!(
            "{} of {} checks failed",
            verdict.failures.len(),
            verdict.deletions_checked
        )))
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum MethodSpec {
    Sisa(u32),
    InContext(u32),
}

#[derive(Deserialize)]
struct ScenarioFile {
    method: MethodSpec,
    train_flops_full: f64,
    #[serde(default)]
    per_token_flops: Option<f64>,
    #[serde(default)]
    avg_input_tokens: Option<f64>,
    #[serde(default)]
    avg_example_tokens: Option<f64>,
}

fn cmd_cost(a: CostArgs) -> CliResult {
    if a.paper_mode {
        let report = costmodel::reference_report();
        if let Some(out) = &a.out {
            write_json_file(out, &report)?;
        }
        return emit(a.json, &report, || print_reference_table(&report));
    }
    let Some(scenario_path) = &a.scenario else {
        return Err(CliError::usage("pass --paper-mode or --scenario <file>"));
    };
    let raw = std::fs::read_to_string(scenario_path)
        .map_err(|e| CliError::usage(format!("{}: {e}", scenario_path.display())))?;
    let scenario: ScenarioFile = serde_json::from_str(&raw)
        .map_err(|e| CliError::usage(format!("{}: {e}", scenario_path.display())))?;

    let token_stats: Option<TokenStats> = match (&a.dataset, &a.snapshot) {
        (Some(ds_path), snap) => {
            let ds = load_dataset(ds_path)
                .map_err(|e| CliError::usage(format!("{}: {e}", ds_path.display())))?;
            let selected = match snap {
                Some(p) => {
                    load_selection_model(p)
                        .map_err(|e| CliError::usage(format!("{}: {e}", p.display())))?
                        .selected
                }
                None => Vec::new(),
            };
            Some(costmodel::token_stats(&ds, &selected)?)
        }
        (None, _) => None,
    };
    let resolve = |explicit: Option<f64>, derived: Option<f64>, name: &str| {
        explicit.or(derived).ok_or_else(|| {
            CliError::usage(format!("scenario omits {name} and no --dataset was given"))
        })
    };
    let params = ScenarioParams {
        per_token_flops: scenario.per_token_flops.unwrap_or(costmodel::DEFAULT_PER_TOKEN_FLOPS),
        avg_input_tokens: resolve(
            scenario.avg_input_tokens,
            token_stats.as_ref().map(|t| t.avg_input_tokens),
            "avg_input_tokens",
        )?,
        avg_example_tokens: resolve(
            scenario.avg_example_tokens,
            token_stats.as_ref().map(|t| t.avg_example_tokens),
            "avg_example_tokens",
        )?,
    };
    let method = match scenario.method {
        MethodSpec::Sisa(shards) => Method::Sisa { shards },
        MethodSpec::InContext(shots) => Method::InContext { shots },
    };
    let report = costmodel::scenario_report(method, scenario.train_flops_full, &params, a.convention)?;
    if let Some(out) = &a.out {
        write_json_file(out, &report)?;
    }
    emit(a.json, &report, || {
        println!(
            "{:<10} {:>16} {:>16} {:>22}",
            "method", "unlearn FLOPS", "inference FLOPS", "break-even deletions"
        );
        for row in &report.rows {
            println!(
                "{:<10} {:>16.4e} {:>16.4e} {:>22}",
                row.method,
                row.unlearn_flops,
                row.inference_flops,
                row.break_even_deletions.map_or("-".to_string(), |b| format!("{b:.1}")),
            );
        }
    })
}

fn print_reference_table(report: &costmodel::ReferenceReport) {
    println!("Break-even deletion counts vs the full-retrain single-model baseline");
    println!("{:<22} {:>10} {:>10} {:>10} {:>10}", "task", "4-SISA", "2-shot", "3-shot", "4-shot");
    let tasks = ["WinoWhy", "Timedial", "Sports Understanding", "Logical Fallacy"];
    for task in tasks {
        let mut cells = Vec::new();
        for method in ["4-SISA", "2-shot", "3-shot", "4-shot"] {
            let row = report
                .rows
                .iter()
                .find(|r| r.task == task && r.method == method)
                .expect("reference table is complete");
            cells.push(format!("{:>10.1}", row.computed_break_even));
        }
        println!("{task:<22} {}", cells.join(" "));
    }
}

fn cmd_bench(a: BenchArgs) -> CliResult {
    if a.sizes.is_empty() {
        return Err(CliError::usage("--sizes must list at least one corpus size"));
    }
    let mut rows: Vec<serde_json::Value> = Vec::new();
    let mut csv = String::from(
        "size,rep,victims,stable,seed_hits,centroid_shifts,retrain_fraction,stable_evals_mean,stable_evals_max\n",
    );
    for &size in &a.sizes {
        for rep in 0..a.trials {
            let mix = MixtureParams {
                components: a.components,
                center_spread: 2.0,
                cluster_std: a.cluster_std,
            };
            let corpus_seed = substream_tag(a.seed, &format!("bench:{size}:{rep}:corpus"));
            let train_seed = substream_tag(a.seed, &format!("bench:{size}:{rep}:train"));
            let corpus = gaussian_mixture(size, a.dim, &mix, corpus_seed)?;
            let model = train(&corpus, a.k, a.epsilon, a.iters, train_seed, &TrainConfig::default())?;

            let (mut stable, mut seed_hits, mut shifts) = (0u64, 0u64, 0u64);
            let mut stable_evals: Vec<u64> = Vec::new();
            for id in corpus.ids() {
                let (cert, evals) = deletion_certificate(&model, &corpus, id)?;
                match cert {
                    Certificate::Stable => {
                        stable += 1;
                        stable_evals.push(evals);
                    }
                    Certificate::SeedHit => seed_hits += 1,
                    Certificate::CentroidShift { .. } => shifts += 1,
                }
            }
            let victims = stable + seed_hits + shifts;
            let retrain_fraction = (seed_hits + shifts) as f64 / victims as f64;
            let mean = if stable_evals.is_empty() {
                0.0
            } else {
                stable_evals.iter().sum::<u64>() as f64 / stable_evals.len() as f64
            };
            let max = stable_evals.iter().copied().max().unwrap_or(0);
            csv.push_str(&format!(
                "{size},{rep},{victims},{stable},{seed_hits},{shifts},{retrain_fraction},{mean},{max}\n"
            ));
            rows.push(serde_json::json!({
                "size": size,
                "rep": rep,
                "victims": victims,
                "stable": stable,
                "seed_hits": seed_hits,
                "centroid_shifts": shifts,
                "retrain_fraction": retrain_fraction,
                "stable_evals_mean": mean,
                "stable_evals_max": max,
            }));
            eprintln!(
                "size {size} rep {rep}: retrain fraction {retrain_fraction:.5} ({} of {victims}), stable cert evals mean {mean} max {max}",
                seed_hits + shifts
            );
        }
    }
    if let Some(out) = &a.out {
        std::fs::write(out, &csv)?;
    }
    let doc = serde_json::json!({ "version": 1, "rows": rows });
    if a.json {
        println!("{doc}");
    } else if a.out.is_none() {
        print!("{csv}");
    }
    Ok(())
}
