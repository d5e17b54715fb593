//! Operator CLI: profile inspection, dataset building, offline replays,
//! delta sweeps, report summaries, and the live gateway.

mod config;
mod service;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use config::{parse_strategy_spec, resolve, AppError};
use ecore::harness::{replay, summary_csv, sweep_delta, ExperimentReport};
use ecore::workload::SyntheticSpec;
use ecore::{GroupRules, Objective, ProfileTable, WorkloadManifest};

#[derive(Parser)]
#[command(
    name = "ecore",
    version,
    about = "Energy-conscious routing for edge object-detection workloads"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect and validate profile tables
    Profile {
        #[command(subcommand)]
        command: ProfileCommand,
    },
    /// Build or import workload manifests
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Replay one workload through estimator, router and backend
    Run(RunArgs),
    /// Replay a workload across a grid of accuracy tolerances
    Sweep(SweepArgs),
    /// Serve the live gateway
    Serve(ServeArgs),
    /// Work with report files
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
}

/// Flags shared by run, sweep and serve. Each flag falls back to its
/// `ECORE_*` environment variable, then to the config file.
#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// TOML configuration file
    #[arg(long, env = "ECORE_CONFIG")]
    config: Option<PathBuf>,
    /// Profile CSV/JSON; the built-in seed profile when omitted
    #[arg(long, env = "ECORE_PROFILE")]
    profile: Option<PathBuf>,
    /// Group rules JSON (array of {lo, hi, label})
    #[arg(long, env = "ECORE_RULES")]
    rules: Option<PathBuf>,
    /// Strategy: greedy, greedy-<est>, rr, rnd, le, li, hm, hmg
    #[arg(long, env = "ECORE_STRATEGY")]
    strategy: Option<String>,
    /// Estimator for count-driven strategies: oracle, ed, sf, ob
    #[arg(long, env = "ECORE_ESTIMATOR")]
    estimator: Option<String>,
    /// Seed for the random router
    #[arg(long, env = "ECORE_SEED")]
    seed: Option<u64>,
    /// Pin gateway overheads to configured constants and zero wall time
    #[arg(long)]
    deterministic: bool,
    /// Output directory for reports
    #[arg(long, env = "ECORE_OUT")]
    out: Option<PathBuf>,
    /// Backend mode: simulate or http
    #[arg(long, env = "ECORE_BACKEND_MODE")]
    backend_mode: Option<String>,
    /// Pace simulated responses in wall time
    #[arg(long)]
    realtime: bool,
    /// Constant per-hop network delay in milliseconds
    #[arg(long)]
    network_ms: Option<f64>,
    /// Simulated per-object miss probability
    #[arg(long)]
    miss_rate: Option<f64>,
    /// Detector for the sf estimator: `host:port` or `spawn:<cmd ...>`
    #[arg(long)]
    detector: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Accuracy tolerance in mAP points
    #[arg(long, env = "ECORE_DELTA")]
    delta: Option<f64>,
    /// Workload manifest (JSONL)
    #[arg(long, env = "ECORE_WORKLOAD")]
    workload: PathBuf,
    /// Include the per-request decision log in the report
    #[arg(long)]
    log: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated tolerance grid, e.g. 0,5,10,15,20,25
    #[arg(long, value_delimiter = ',', required = true)]
    deltas: Vec<f64>,
    /// Workload manifest (JSONL)
    #[arg(long, env = "ECORE_WORKLOAD")]
    workload: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Bind address, e.g. 127.0.0.1:8080 (port 0 picks a free port)
    #[arg(long, env = "ECORE_LISTEN")]
    listen: Option<String>,
    /// Accuracy tolerance in mAP points
    #[arg(long, env = "ECORE_DELTA")]
    delta: Option<f64>,
}

#[derive(Subcommand)]
enum ProfileCommand {
    /// Load a profile and check invariants plus group coverage
    Validate {
        #[arg(long, env = "ECORE_PROFILE")]
        profile: Option<PathBuf>,
        #[arg(long, env = "ECORE_RULES")]
        rules: Option<PathBuf>,
    },
    /// Print the non-dominated entries under the chosen objectives
    Pareto {
        #[arg(long, env = "ECORE_PROFILE")]
        profile: Option<PathBuf>,
        /// Comma-separated subset of map, latency, energy
        #[arg(long, value_delimiter = ',', default_values_t = vec!["map".to_string(), "energy".to_string()])]
        objectives: Vec<String>,
        /// Restrict to one group label first
        #[arg(long)]
        group: Option<String>,
        /// Write CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Build a workload: a synthetic corpus or a balanced sorted set
    Build(BuildArgs),
    /// Convert count annotations into a manifest
    Import(ImportArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// balanced-sorted or synthetic
    #[arg(long)]
    kind: String,
    /// Source manifest (balanced-sorted)
    #[arg(long)]
    source: Option<PathBuf>,
    /// Items per group (balanced-sorted)
    #[arg(long, default_value_t = 200)]
    per_group: usize,
    /// Output manifest path (balanced-sorted)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output directory (synthetic)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Item count (synthetic)
    #[arg(long, default_value_t = 1000)]
    items: usize,
    #[arg(long, default_value_t = 160)]
    width: usize,
    #[arg(long, default_value_t = 160)]
    height: usize,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    #[arg(long, env = "ECORE_RULES")]
    rules: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    /// jsonl, coco or frames
    #[arg(long)]
    format: String,
    /// Annotation file (jsonl, coco) or frame directory (frames)
    #[arg(long)]
    source: PathBuf,
    /// Prefix for image paths in coco imports
    #[arg(long)]
    images_dir: Option<PathBuf>,
    /// Output manifest path
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "ECORE_RULES")]
    rules: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Pivot a directory of report JSONs into the summary CSV
    Summarize {
        #[arg(long)]
        dir: PathBuf,
        /// Write CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Profile { command } => run_profile(command),
        Command::Dataset { command } => run_dataset(command),
        Command::Run(args) => run_replay(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Serve(args) => run_serve(args),
        Command::Report { command } => run_report(command),
    }
}

fn load_table(path: &Option<PathBuf>) -> Result<ProfileTable, AppError> {
    Ok(match path {
        Some(path) => ProfileTable::load_path(path)?,
        None => ecore::seed_profile(),
    })
}

fn load_rules(path: &Option<PathBuf>) -> Result<GroupRules, AppError> {
    Ok(match path {
        Some(path) => GroupRules::load_json(path)?,
        None => GroupRules::default_five(),
    })
}

fn run_profile(command: ProfileCommand) -> Result<(), AppError> {
    match command {
        ProfileCommand::Validate { profile, rules } => {
            let table = load_table(&profile)?;
            let rules = load_rules(&rules)?;
            println!(
                "profile ok: source={} entries={} pairs={} devices={}",
                table.source,
                table.entries.len(),
                table.distinct_pairs().len(),
                table.distinct_devices().len()
            );
            let missing = table.missing_groups(&rules);
            if missing.is_empty() {
                println!("groups: all {} rule labels covered", rules.labels().len());
            } else {
                let labels: Vec<&str> = missing.iter().map(|l| l.as_str()).collect();
                println!("warning: table is partial, missing groups {labels:?}");
            }
            Ok(())
        }
        ProfileCommand::Pareto {
            profile,
            objectives,
            group,
            out,
        } => {
            let table = load_table(&profile)?;
            let objectives: Vec<Objective> = objectives
                .iter()
                .map(|s| Objective::from_str(s))
                .collect::<Result<_, _>>()
                .map_err(AppError::Validation)?;
            let entries = match group {
                Some(label) => table.filter_by_group(&label.as_str().into())?.entries,
                None => table.entries,
            };
            let front = ecore::pareto_front(&entries, &objectives);
            let mut csv = Vec::new();
            ProfileTable {
                source: table.source,
                entries: front,
            }
            .save_csv(&mut csv)?;
            write_or_print(&out, &String::from_utf8(csv).expect("csv is utf-8"))?;
            Ok(())
        }
    }
}

fn run_dataset(command: DatasetCommand) -> Result<(), AppError> {
    match command {
        DatasetCommand::Build(args) => {
            let rules = load_rules(&args.rules)?;
            match args.kind.as_str() {
                "synthetic" => {
                    let dir = args.out_dir.ok_or_else(|| {
                        AppError::Validation("synthetic build needs --out-dir".into())
                    })?;
                    let spec = SyntheticSpec {
                        items: args.items,
                        width: args.width,
                        height: args.height,
                        seed: args.seed,
                        ..SyntheticSpec::default()
                    };
                    let manifest = ecore::generate_synthetic(&dir, &spec, &rules)?;
                    println!(
                        "synthetic workload: {} items in {} (manifest.jsonl)",
                        manifest.len(),
                        dir.display()
                    );
                }
                "balanced-sorted" => {
                    let source_path = args.source.ok_or_else(|| {
                        AppError::Validation("balanced-sorted build needs --source".into())
                    })?;
                    let out = args.out.ok_or_else(|| {
                        AppError::Validation("balanced-sorted build needs --out".into())
                    })?;
                    let source = WorkloadManifest::load_jsonl(&source_path, &rules)?;
                    let built =
                        ecore::build_balanced_sorted(&source, args.per_group, args.seed, &rules)?;
                    built.save_jsonl(&out)?;
                    println!(
                        "balanced sorted workload: {} items ({} per group) -> {}",
                        built.len(),
                        args.per_group,
                        out.display()
                    );
                }
                other => {
                    return Err(AppError::Validation(format!(
                        "unknown dataset kind `{other}` (use synthetic or balanced-sorted)"
                    )))
                }
            }
            Ok(())
        }
        DatasetCommand::Import(args) => {
            let rules = load_rules(&args.rules)?;
            let manifest = match args.format.as_str() {
                "jsonl" => {
                    let file = std::fs::File::open(&args.source)?;
                    ecore::import_manifest(file, "import", &rules)?
                }
                "coco" => {
                    let file = std::fs::File::open(&args.source)?;
                    ecore::import_coco_counts(file, args.images_dir.as_deref(), &rules)?
                }
                "frames" => ecore::import_frame_labels(&args.source, &rules)?,
                other => {
                    return Err(AppError::Validation(format!(
                        "unknown import format `{other}` (use jsonl, coco or frames)"
                    )))
                }
            };
            manifest.save_jsonl(&args.out)?;
            let hist = manifest.group_histogram();
            println!(
                "imported {} items -> {} (groups: {})",
                manifest.len(),
                args.out.display(),
                hist.iter()
                    .map(|(label, n)| format!("{label}={n}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            );
            Ok(())
        }
    }
}

fn report_path(out_dir: &Path, report: &ExperimentReport) -> PathBuf {
    out_dir.join(format!(
        "{}_d{}.json",
        report.label(),
        report.header.delta_map
    ))
}

fn print_summary_line(report: &ExperimentReport) {
    let m = &report.metrics;
    println!(
        "{} delta={} requests={} energy_mwh={:.3} latency_s={:.3} modeled_map={:.3} gateway_mwh={:.4} gateway_ms={:.1}",
        report.label(),
        report.header.delta_map,
        m.requests,
        m.dynamic_energy_mwh,
        m.total_latency_s,
        m.modeled_map,
        m.gateway_energy_mwh,
        m.gateway_ms,
    );
}

fn run_replay(args: RunArgs) -> Result<(), AppError> {
    let resolved = resolve(&args.common, args.delta, args.log)?;
    let manifest = WorkloadManifest::load_jsonl(&args.workload, &resolved.rules)?;
    let report = replay(&manifest, &resolved.replay, &resolved.table)?;
    std::fs::create_dir_all(&resolved.out_dir)?;
    let path = report_path(&resolved.out_dir, &report);
    report.write_json(&path, resolved.include_log)?;
    print_summary_line(&report);
    println!("report written to {}", path.display());
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<(), AppError> {
    // the base resolution ignores the (possibly comma-separated)
    // strategy flag; each sweep cell overrides strategy and estimator
    let mut neutral = args.common.clone();
    neutral.strategy = None;
    neutral.estimator = None;
    let mut resolved = resolve(&neutral, None, false)?;
    let manifest = WorkloadManifest::load_jsonl(&args.workload, &resolved.rules)?;
    for delta in &args.deltas {
        if *delta < 0.0 {
            return Err(AppError::Validation("deltas must be non-negative".into()));
        }
    }

    let strategy_specs: Vec<String> = args
        .common
        .strategy
        .clone()
        .unwrap_or_else(|| "greedy".into())
        .split(',')
        .map(str::to_string)
        .collect();
    let mut combos = Vec::new();
    for spec in &strategy_specs {
        combos.push(parse_strategy_spec(spec, args.common.estimator.as_deref())?);
    }
    if combos.iter().any(|(_, e)| *e == ecore::EstimatorKind::Sf) {
        config::ensure_sf_detector(&mut resolved.replay)?;
    }

    let reports = sweep_delta(
        &manifest,
        &resolved.replay,
        &combos,
        &args.deltas,
        &resolved.table,
    )?;
    std::fs::create_dir_all(&resolved.out_dir)?;
    for report in &reports {
        let path = report_path(&resolved.out_dir, report);
        report.write_json(&path, false)?;
        print_summary_line(report);
    }
    let csv_path = resolved.out_dir.join("summary.csv");
    std::fs::write(&csv_path, summary_csv(&reports))?;
    println!(
        "{} reports + pivot written to {}",
        reports.len(),
        resolved.out_dir.display()
    );
    Ok(())
}

fn run_serve(args: ServeArgs) -> Result<(), AppError> {
    let mut resolved = resolve(&args.common, args.delta, false)?;
    if let Some(listen) = args.listen {
        resolved.listen = listen;
    }
    let runtime = tokio::runtime::Runtime::new().map_err(|e| AppError::Runtime(e.to_string()))?;
    runtime.block_on(service::serve(resolved))
}

fn run_report(command: ReportCommand) -> Result<(), AppError> {
    match command {
        ReportCommand::Summarize { dir, out } => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(AppError::Validation(format!(
                    "no report JSONs in {}",
                    dir.display()
                )));
            }
            let reports: Vec<ExperimentReport> = paths
                .iter()
                .map(|p| ExperimentReport::load_json(p))
                .collect::<Result<_, _>>()?;
            write_or_print(&out, &summary_csv(&reports))?;
            Ok(())
        }
    }
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<(), AppError> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            println!("written to {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}
