//! `ep` — polynomial trajectory-prediction toolkit.
//!
//! Subcommands: fit, homogenize, generate, train, evaluate, delta, stats.
//! Exit codes: 0 ok, 2 input error, 3 numeric failure, 4 contract mismatch.

use clap::{Parser, Subcommand};
use ep_core::eval::{delta_report, evaluate_set, EvalReport, MetricSpec};
use ep_core::fit::{split_until_fit, FitResult, Polyline, Semantic};
use ep_core::generator::{generate_synthetic, GeneratorConfig};
use ep_core::model::net::{EPConfig, EpModel, Variant};
use ep_core::model::train::{log_to_csv, train};
use ep_core::scenario::{
    homogenize, lane_stats, lane_stats_csv, HomogenizedScenario, RawScenario, RawSemantic,
    SourceProfile,
};
use ep_core::EpError;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_CONTRACT: u8 = 4;

struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn input(msg: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            msg: msg.into(),
        }
    }

}

impl From<EpError> for CliError {
    fn from(e: EpError) -> Self {
        let code = match &e {
            EpError::Io(_)
            | EpError::Json(_)
            | EpError::InfeasibleConfig(_)
            | EpError::EmptyEvalSet
            | EpError::ScenarioRejected(_)
            | EpError::NotEnoughSamples { .. }
            | EpError::MalformedCurve(_) => EXIT_INPUT,
            EpError::NonFinite(_)
            | EpError::NanLoss { .. }
            | EpError::SingularMatrix(_)
            | EpError::DegenerateCurve => EXIT_NUMERIC,
            EpError::SpecMismatch(_) | EpError::ShapeMismatch(_) => EXIT_CONTRACT,
        };
        CliError {
            code,
            msg: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "ep", version, about = "Polynomial trajectory prediction toolkit")]
struct Cli {
    /// JSON config file providing defaults for any option.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// RNG seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker count hint (recorded; commands are deterministic regardless).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (default: current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit map polylines of raw scenario files with split-until-fit.
    Fit {
        #[arg(long)]
        degree: Option<usize>,
        /// Max fit error per segment, meters.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Re-slice raw scenarios to the canonical 5 s history protocol.
    Homogenize {
        /// Source profile: a2like | wolike.
        #[arg(long)]
        profile: Option<String>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Generate synthetic homogenized scenarios.
    Generate {
        #[arg(short = 'n', long)]
        count: Option<usize>,
        /// Distribution profile: id (long straight) | ood (short curvy).
        #[arg(long)]
        profile: Option<String>,
    },
    /// Train a model; writes checkpoint.json and train_log.csv.
    Train {
        /// ep-f | ep-q | ep-no-aug.
        #[arg(long)]
        variant: Option<String>,
        /// Scenario files or directories of *.json.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Use only the first N scenarios.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        warmup_iters: Option<usize>,
    },
    /// Score a checkpoint on a scenario set; writes report.json.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Evaluation horizon in seconds.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Robustness deltas between two evaluation reports (OoD − ID).
    Delta {
        #[arg(long)]
        id: PathBuf,
        #[arg(long)]
        ood: PathBuf,
    },
    /// Per-lane curvature/length statistics CSV for homogenized scenarios.
    Stats {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

/// Options resolved from a JSON config file; flags override file values.
struct FileConfig(Value);

impl FileConfig {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(FileConfig(json!({}))),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::input(format!("config {}: {e}", p.display())))?;
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| CliError::input(format!("config {}: {e}", p.display())))?;
                Ok(FileConfig(v))
            }
        }
    }

    fn usize(&self, key: &str) -> Option<usize> {
        self.0.get(key).and_then(Value::as_u64).map(|v| v as usize)
    }

    fn u64(&self, key: &str) -> Option<u64> {
        self.0.get(key).and_then(Value::as_u64)
    }

    fn f64(&self, key: &str) -> Option<f64> {
        self.0.get(key).and_then(Value::as_f64)
    }

    fn str(&self, key: &str) -> Option<String> {
        self.0.get(key).and_then(Value::as_str).map(str::to_owned)
    }

    fn value(&self, key: &str) -> Option<&Value> {
        self.0.get(key)
    }
}

fn parse_variant(s: &str) -> CliResult<Variant> {
    match s {
        "ep-f" => Ok(Variant::EpF),
        "ep-q" => Ok(Variant::EpQ),
        "ep-no-aug" => Ok(Variant::EpNoAug),
        other => Err(CliError::input(format!(
            "unknown variant '{other}' (expected ep-f, ep-q or ep-no-aug)"
        ))),
    }
}

fn parse_profile(s: &str) -> CliResult<SourceProfile> {
    match s {
        "a2like" => Ok(SourceProfile::A2like),
        "wolike" => Ok(SourceProfile::WOlike),
        other => Err(CliError::input(format!(
            "unknown profile '{other}' (expected a2like or wolike)"
        ))),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

/// Check all inputs exist up front so failures leave no partial output.
fn check_inputs(paths: &[PathBuf]) -> CliResult<()> {
    for p in paths {
        if !p.exists() {
            return Err(CliError::input(format!("no such file: {}", p.display())));
        }
    }
    Ok(())
}

fn ensure_out_dir(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn write_snapshot(out: &Path, resolved: Value) -> CliResult<()> {
    let path = out.join("resolved_config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&resolved).unwrap() + "\n")?;
    Ok(())
}

/// Expand files and directories (all *.json inside, sorted) into file paths.
fn expand_inputs(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    check_inputs(paths)?;
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                // Config snapshots sit next to generated outputs; skip them.
                .filter(|p| p.file_name().is_some_and(|n| n != "resolved_config.json"))
                .collect();
            entries.sort();
            out.extend(entries);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(CliError::input("no input files found"));
    }
    Ok(out)
}

fn load_scenarios(paths: &[PathBuf], limit: Option<usize>) -> CliResult<Vec<HomogenizedScenario>> {
    let files = expand_inputs(paths)?;
    let mut scenarios = Vec::new();
    for f in &files {
        scenarios.push(HomogenizedScenario::read_json(f)?);
        if limit.is_some_and(|n| scenarios.len() >= n) {
            break;
        }
    }
    Ok(scenarios)
}

fn cmd_fit(
    out: &Path,
    cli_seed: Option<u64>,
    jobs: Option<usize>,
    degree: usize,
    threshold: f64,
    inputs: &[PathBuf],
) -> CliResult<()> {
    if !(threshold > 0.0) {
        return Err(CliError::input(format!(
            "threshold must be positive, got {threshold}"
        )));
    }
    let files = expand_inputs(inputs)?;
    ensure_out_dir(out)?;
    write_snapshot(
        out,
        json!({
            "command": "fit",
            "degree": degree,
            "threshold": threshold,
            "inputs": files,
            "seed": cli_seed,
            "jobs": jobs,
            "out": out,
        }),
    )?;

    let mut polylines = 0usize;
    let mut segments = 0usize;
    let mut warnings = 0usize;
    for f in &files {
        let raw = RawScenario::read_json(f)?;
        let mut elements = Vec::new();
        for el in &raw.map {
            let semantic = match el.semantic {
                RawSemantic::Crosswalk => Semantic::Crosswalk,
                RawSemantic::LaneCenter | RawSemantic::JunctionLane => Semantic::LaneCenter,
                _ => Semantic::Other,
            };
            let polyline = Polyline::new(el.points.clone(), semantic)?;
            let fits: Vec<FitResult> = split_until_fit(&polyline, degree, threshold)?;
            polylines += 1;
            segments += fits.len();
            warnings += fits.iter().filter(|f| f.flags.irreducible).count();
            elements.push(json!({ "semantic": semantic, "segments": fits }));
        }
        let out_path = out.join(format!("{}.fit.json", stem(f)));
        std::fs::write(
            &out_path,
            serde_json::to_string_pretty(&json!({ "elements": elements })).unwrap() + "\n",
        )?;
    }
    println!(
        "fit: {polylines} polylines -> {segments} segments, {warnings} irreducible warnings"
    );
    Ok(())
}

fn cmd_homogenize(
    out: &Path,
    cli_seed: Option<u64>,
    jobs: Option<usize>,
    profile: SourceProfile,
    inputs: &[PathBuf],
) -> CliResult<()> {
    let files = expand_inputs(inputs)?;
    ensure_out_dir(out)?;
    write_snapshot(
        out,
        json!({
            "command": "homogenize",
            "profile": profile,
            "inputs": files,
            "seed": cli_seed,
            "jobs": jobs,
            "out": out,
        }),
    )?;

    let mut kept = 0usize;
    let mut rejected = 0usize;
    for f in &files {
        let raw = RawScenario::read_json(f)?;
        match homogenize(&raw, profile) {
            Ok(s) => {
                s.write_json(&out.join(format!("{}.homog.json", stem(f))))?;
                kept += 1;
            }
            Err(EpError::ScenarioRejected(reason)) => {
                eprintln!("rejected {}: {reason}", f.display());
                rejected += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    println!("homogenize: {kept} written, {rejected} rejected");
    Ok(())
}

fn cmd_generate(
    out: &Path,
    file_config: &FileConfig,
    cli_seed: Option<u64>,
    jobs: Option<usize>,
    count: usize,
    profile: &str,
) -> CliResult<()> {
    // A full generator config in the config file wins over the profile knob.
    let mut config = match file_config.value("generator") {
        Some(v) => serde_json::from_value::<GeneratorConfig>(v.clone())
            .map_err(|e| CliError::input(format!("generator config: {e}")))?,
        None => match profile {
            "id" => GeneratorConfig::id_profile(0),
            "ood" => GeneratorConfig::ood_profile(0),
            other => {
                return Err(CliError::input(format!(
                    "unknown profile '{other}' (expected id or ood)"
                )))
            }
        },
    };
    if let Some(seed) = cli_seed.or(file_config.u64("seed")) {
        config.seed = seed;
    }
    let scenarios = generate_synthetic(&config, count).map_err(CliError::from)?;
    ensure_out_dir(out)?;
    write_snapshot(
        out,
        json!({
            "command": "generate",
            "count": count,
            "generator": config,
            "jobs": jobs,
            "out": out,
        }),
    )?;
    for (i, s) in scenarios.iter().enumerate() {
        s.write_json(&out.join(format!("scenario_{i:04}.json")))?;
    }
    println!("generate: {count} scenarios written");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    out: &Path,
    file_config: &FileConfig,
    cli_seed: Option<u64>,
    jobs: Option<usize>,
    variant: Variant,
    data: &[PathBuf],
    overrides: &TrainOverrides,
) -> CliResult<()> {
    let mut config = EPConfig::for_variant(variant);
    if let Some(v) = overrides.lr.or(file_config.f64("lr")) {
        config.lr = v;
    }
    if let Some(v) = overrides.epochs.or(file_config.usize("epochs")) {
        config.epochs = v;
    }
    if let Some(v) = overrides.batch_size.or(file_config.usize("batch_size")) {
        config.batch_size = v;
    }
    if let Some(v) = overrides.d.or(file_config.usize("d")) {
        config.d = v;
    }
    if let Some(v) = overrides.heads.or(file_config.usize("heads")) {
        config.heads = v;
    }
    if let Some(v) = overrides.k.or(file_config.usize("k")) {
        config.k = v;
    }
    if let Some(v) = overrides.warmup_iters.or(file_config.usize("warmup_iters")) {
        config.warmup_iters = v;
    }
    if let Some(v) = cli_seed.or(file_config.u64("seed")) {
        config.seed = v;
    }
    config.validate()?;

    let limit = overrides.limit.or(file_config.usize("limit"));
    let scenarios = load_scenarios(data, limit)?;
    ensure_out_dir(out)?;
    write_snapshot(
        out,
        json!({
            "command": "train",
            "config": config,
            "data": data,
            "limit": limit,
            "jobs": jobs,
            "out": out,
        }),
    )?;

    let outcome = train(config, &scenarios, &scenarios)?;
    println!("parameters: {}", outcome.param_count);
    std::fs::write(out.join("train_log.csv"), log_to_csv(&outcome.log))?;
    outcome.model.save_checkpoint(&out.join("checkpoint.json"))?;
    if let Some(last) = outcome.log.last() {
        println!(
            "final: epoch={} iter={} loss_total={:.6} loss_reg={:.6} loss_cls={:.6}",
            last.epoch, last.iter, last.loss_total, last.loss_reg, last.loss_cls
        );
    }
    println!(
        "train: {} scenarios, {} excluded agent terms, checkpoint written",
        scenarios.len(),
        outcome.excluded_agents
    );
    Ok(())
}

struct TrainOverrides {
    epochs: Option<usize>,
    limit: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    d: Option<usize>,
    heads: Option<usize>,
    k: Option<usize>,
    warmup_iters: Option<usize>,
}

fn cmd_evaluate(
    out: &Path,
    file_config: &FileConfig,
    cli_seed: Option<u64>,
    jobs: Option<usize>,
    checkpoint: &Path,
    data: &[PathBuf],
    horizon: Option<f64>,
    k: Option<usize>,
) -> CliResult<()> {
    check_inputs(std::slice::from_ref(&checkpoint.to_path_buf()))?;
    let mut spec = MetricSpec::default();
    if let Some(h) = horizon.or(file_config.f64("horizon")) {
        spec.horizon = h;
    }
    if let Some(k) = k.or(file_config.usize("k")) {
        spec.k = k;
    }
    spec.validate()?;
    let model = EpModel::load_checkpoint(checkpoint)?;
    let scenarios = load_scenarios(data, None)?;
    ensure_out_dir(out)?;
    write_snapshot(
        out,
        json!({
            "command": "evaluate",
            "checkpoint": checkpoint,
            "data": data,
            "spec": spec,
            "seed": cli_seed,
            "jobs": jobs,
            "out": out,
        }),
    )?;
    let report = evaluate_set(&model, &scenarios, &spec)?;
    report.write_json(&out.join("report.json"))?;
    let m = &report.metrics;
    println!(
        "evaluate: n={} minade1={:.4} minfde1={:.4} minade6={:.4} minfde6={:.4} rejected={}",
        report.n_scenarios,
        m.minade1,
        m.minfde1,
        m.minade6,
        m.minfde6,
        report.rejected.len()
    );
    Ok(())
}

fn cmd_delta(
    out: &Path,
    cli_seed: Option<u64>,
    jobs: Option<usize>,
    id: &Path,
    ood: &Path,
) -> CliResult<()> {
    check_inputs(&[id.to_path_buf(), ood.to_path_buf()])?;
    let id_report = EvalReport::read_json(id)?;
    let ood_report = EvalReport::read_json(ood)?;
    let delta = delta_report(&id_report, &ood_report)?;
    ensure_out_dir(out)?;
    write_snapshot(
        out,
        json!({
            "command": "delta",
            "id": id,
            "ood": ood,
            "seed": cli_seed,
            "jobs": jobs,
            "out": out,
        }),
    )?;
    delta.write_json(&out.join("delta_report.json"))?;
    println!(
        "delta: minade6 {:+.3} ({:+.1}%) minfde1 {:+.3} ({:+.1}%)",
        delta.delta.minade6, delta.relative.minade6, delta.delta.minfde1, delta.relative.minfde1
    );
    Ok(())
}

fn cmd_stats(
    out: &Path,
    cli_seed: Option<u64>,
    jobs: Option<usize>,
    inputs: &[PathBuf],
) -> CliResult<()> {
    let scenarios = load_scenarios(inputs, None)?;
    ensure_out_dir(out)?;
    write_snapshot(
        out,
        json!({
            "command": "stats",
            "inputs": inputs,
            "seed": cli_seed,
            "jobs": jobs,
            "out": out,
        }),
    )?;
    let stats = lane_stats(&scenarios);
    std::fs::write(out.join("lane_stats.csv"), lane_stats_csv(&stats))?;
    println!("stats: {} rows", stats.len());
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let file_config = FileConfig::load(cli.config.as_deref())?;
    let seed = cli.seed.or(file_config.u64("seed"));
    let jobs = cli.jobs.or(file_config.usize("jobs"));
    let out = cli
        .out
        .or(file_config.str("out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    match cli.command {
        Command::Fit {
            degree,
            threshold,
            inputs,
        } => cmd_fit(
            &out,
            seed,
            jobs,
            degree.or(file_config.usize("degree")).unwrap_or(3),
            threshold.or(file_config.f64("threshold")).unwrap_or(0.1),
            &inputs,
        ),
        Command::Homogenize { profile, inputs } => {
            let profile = parse_profile(
                &profile
                    .or(file_config.str("profile"))
                    .unwrap_or_else(|| "a2like".into()),
            )?;
            cmd_homogenize(&out, seed, jobs, profile, &inputs)
        }
        Command::Generate { count, profile } => cmd_generate(
            &out,
            &file_config,
            seed,
            jobs,
            count.or(file_config.usize("count")).unwrap_or(10),
            &profile
                .or(file_config.str("profile"))
                .unwrap_or_else(|| "id".into()),
        ),
        Command::Train {
            variant,
            data,
            epochs,
            limit,
            lr,
            batch_size,
            d,
            heads,
            k,
            warmup_iters,
        } => {
            let variant = parse_variant(
                &variant
                    .or(file_config.str("variant"))
                    .unwrap_or_else(|| "ep-f".into()),
            )?;
            cmd_train(
                &out,
                &file_config,
                seed,
                jobs,
                variant,
                &data,
                &TrainOverrides {
                    epochs,
                    limit,
                    lr,
                    batch_size,
                    d,
                    heads,
                    k,
                    warmup_iters,
                },
            )
        }
        Command::Evaluate {
            checkpoint,
            data,
            horizon,
            k,
        } => cmd_evaluate(&out, &file_config, seed, jobs, &checkpoint, &data, horizon, k),
        Command::Delta { id, ood } => cmd_delta(&out, seed, jobs, &id, &ood),
        Command::Stats { inputs } => cmd_stats(&out, seed, jobs, &inputs),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}
