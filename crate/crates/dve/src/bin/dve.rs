//! `dve`: distinct-value estimation toolkit.
//!
//! Subcommands: `generate` (Zipfian populations), `estimate` (run
//! estimators on a sample), `bench` (the experiment grid), `report`
//! (figures and tables from a record store), `presets`.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage/validation error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dve::error::DveError;
use dve::estimators::{estimate_all, EstimatorId};
use dve::harness::{self, builtin_grid, GridConfig, PRESET_NAMES};
use dve::population::build_population;
use dve::profile::{FrequencyProfile, ZipfSpec};
use dve::report::{self, ThresholdStatistic};

#[derive(Parser)]
#[command(name = "dve", version, about = "Distinct-value estimation from samples")]
struct Cli {
    /// Emit machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Zipfian population and write it to disk.
    Generate(GenerateArgs),
    /// Run estimators on a sample (raw values or a frequency profile).
    Estimate(EstimateArgs),
    /// Run the benchmark grid and persist a record store.
    Bench(BenchArgs),
    /// Emit figures and tables from a record store.
    Report(ReportArgs),
    /// List the built-in benchmark presets.
    Presets,
}

#[derive(Args)]
struct GenerateArgs {
    /// Population size N.
    #[arg(long)]
    n: u64,
    /// Alphabet size A (number of classes before zero-class dropping).
    #[arg(long)]
    alphabet: u64,
    /// Zipf skew parameter θ (0 = uniform).
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Output CSV path; a `.json` sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Values file: one opaque value per line.
    #[arg(long, conflicts_with = "profile")]
    input: Option<PathBuf>,
    /// Frequency profile CSV (`frequency,count` rows).
    #[arg(long)]
    profile: Option<PathBuf>,
    /// Population size N the sample was drawn from.
    #[arg(long)]
    total: u64,
    /// Sampling fraction q; defaults to n/N.
    #[arg(long)]
    q: Option<f64>,
    /// Comma-separated estimator names, or "all".
    #[arg(long, default_value = "all")]
    estimator: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Built-in preset name (see `dve presets`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Grid config JSON file (schema: serialized GridConfig).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for records.csv / manifest.json / timings.csv.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to DVE_THREADS or the CPU count.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Master seed; omitted = drawn from OS entropy and echoed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Record store directory (a completed `bench` output).
    #[arg(long)]
    records: PathBuf,
    /// Report kind.
    #[arg(long, value_parser = ["2d", "surface", "tables"])]
    kind: String,
    /// Output directory; defaults to `<records>/reports`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Estimator for `surface`; subset filter for `2d` (default all).
    #[arg(long)]
    estimator: Option<String>,
    /// Sampling fraction slice for `2d`.
    #[arg(long, default_value_t = 0.01)]
    q: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(args) => cmd_generate(args, cli.json),
        Command::Estimate(args) => cmd_estimate(args, cli.json),
        Command::Bench(args) => cmd_bench(args, cli.json),
        Command::Report(args) => cmd_report(args, cli.json),
        Command::Presets => cmd_presets(cli.json),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Usage/validation problems exit 2; runtime failures exit 1.
fn exit_code_for(e: &DveError) -> u8 {
    match e {
        DveError::InvalidSpec(_)
        | DveError::UnknownPreset(_)
        | DveError::ConfigMismatch(_)
        | DveError::MissingSlice(_)
        | DveError::EmptySample => 2,
        _ => 1,
    }
}

fn io_err(context: &str, e: std::io::Error) -> DveError {
    DveError::InvalidSpec(format!("{context}: {e}"))
}

fn cmd_generate(args: &GenerateArgs, json: bool) -> Result<ExitCode, DveError> {
    let spec = ZipfSpec::new(args.n, args.alphabet, args.theta)?;
    let pop = build_population(spec)?;
    let mut csv = Vec::new();
    pop.write_csv(&mut csv).map_err(|e| io_err("write population", e))?;
    fs::write(&args.out, csv).map_err(|e| io_err("write population", e))?;
    let sidecar_path = args.out.with_extension("json");
    fs::write(
        &sidecar_path,
        serde_json::to_string_pretty(&pop.sidecar_json()).expect("sidecar serializes"),
    )
    .map_err(|e| io_err("write sidecar", e))?;
    if json {
        println!(
            "{}",
            json!({
                "out": args.out,
                "sidecar": sidecar_path,
                "distinct": pop.distinct(),
                "gamma_sq": pop.gamma_sq(),
            })
        );
    } else {
        println!("wrote {} + {}", args.out.display(), sidecar_path.display());
        println!("D = {}", pop.distinct());
        println!("gamma_sq = {}", pop.gamma_sq());
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_estimators(arg: &str) -> Result<Vec<EstimatorId>, DveError> {
    if arg == "all" {
        return Ok(EstimatorId::ALL.to_vec());
    }
    arg.split(',').map(|s| s.trim().parse()).collect()
}

fn cmd_estimate(args: &EstimateArgs, json: bool) -> Result<ExitCode, DveError> {
    let profile = match (&args.input, &args.profile) {
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| io_err("read values", e))?;
            FrequencyProfile::from_values(text.lines().filter(|l| !l.is_empty()))?
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| io_err("read profile", e))?;
            FrequencyProfile::read_csv(&text)?
        }
        _ => {
            return Err(DveError::InvalidSpec(
                "exactly one of --input or --profile is required".into(),
            ))
        }
    };
    if args.total < profile.n() {
        return Err(DveError::InvalidSpec(format!(
            "--total {} is smaller than the sample size {}",
            args.total,
            profile.n()
        )));
    }
    let q = match args.q {
        Some(q) if q > 0.0 && q <= 1.0 => q,
        Some(q) => return Err(DveError::InvalidSpec(format!("q must be in (0, 1], got {q}"))),
        None => profile.n() as f64 / args.total as f64,
    };
    let wanted = parse_estimators(&args.estimator)?;
    let all = estimate_all(&profile, args.total, q);
    let mut succeeded = 0usize;
    let mut rows = Vec::new();
    for id in &wanted {
        match &all[id] {
            Ok(r) => {
                succeeded += 1;
                rows.push(json!({
                    "estimator": id.name(),
                    "estimate": r.estimate,
                    "diagnostics": r.diagnostics,
                }));
                if !json {
                    let diag: Vec<String> =
                        r.diagnostics.iter().map(|(k, v)| format!("{k}={v:.6}")).collect();
                    if diag.is_empty() {
                        println!("{:<6} {}", id.name(), r.estimate);
                    } else {
                        println!("{:<6} {}  [{}]", id.name(), r.estimate, diag.join(" "));
                    }
                }
            }
            Err(e) => {
                rows.push(json!({ "estimator": id.name(), "error": e.code() }));
                if !json {
                    println!("{:<6} error: {e}", id.name());
                }
            }
        }
    }
    if json {
        println!(
            "{}",
            json!({
                "n": profile.n(),
                "d": profile.d(),
                "total": args.total,
                "q": q,
                "results": rows,
            })
        );
    }
    if succeeded > 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(DveError::InvalidEstimate("every requested estimator failed".into()))
    }
}

fn default_parallelism(flag: Option<usize>) -> usize {
    flag.or_else(|| std::env::var("DVE_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn cmd_bench(args: &BenchArgs, json: bool) -> Result<ExitCode, DveError> {
    let mut config: GridConfig = match (&args.preset, &args.config) {
        (Some(name), None) => builtin_grid(name).map_err(|e| match e {
            DveError::UnknownPreset(p) => DveError::UnknownPreset(format!(
                "{p} (available: {})",
                PRESET_NAMES.join(", ")
            )),
            other => other,
        })?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| io_err("read config", e))?;
            serde_json::from_str(&text)
                .map_err(|e| DveError::InvalidSpec(format!("config JSON: {e}")))?
        }
        _ => {
            return Err(DveError::InvalidSpec(
                "exactly one of --preset or --config is required".into(),
            ))
        }
    };
    // Auto-resume when the target directory already holds a store for
    // this exact config. Without an explicit --seed, a resumable store's
    // own seed is adopted so resumption is the default behavior.
    let resumable = args.out.join(harness::MANIFEST_FILE).exists();
    let seed = match args.seed {
        Some(s) => s,
        None if resumable => {
            let manifest: harness::Manifest = serde_json::from_str(
                &fs::read_to_string(args.out.join(harness::MANIFEST_FILE))
                    .map_err(|e| io_err("read manifest", e))?,
            )
            .map_err(|e| DveError::ConfigMismatch(format!("manifest: {e}")))?;
            manifest.config.master_seed
        }
        None => rand::random(),
    };
    config.master_seed = seed;
    config.validate()?;
    let parallelism = default_parallelism(args.parallelism);
    let records = if resumable {
        harness::resume(&config, &args.out, parallelism)?
    } else {
        let records = harness::run_grid(&config, parallelism)?;
        harness::write_store(&args.out, &config, &records)?;
        records
    };
    let failed = records.iter().filter(|r| r.outcome.is_err()).count();
    if json {
        println!(
            "{}",
            json!({
                "out": args.out,
                "seed": seed,
                "parallelism": parallelism,
                "records": records.len(),
                "failed_estimates": failed,
                "resumed": resumable,
                "fingerprint": config.fingerprint(),
            })
        );
    } else {
        println!("seed = {seed}");
        println!(
            "{} records ({} failed estimates) -> {}",
            records.len(),
            failed,
            args.out.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn load_store(dir: &Path) -> Result<Vec<harness::EstimateRecord>, DveError> {
    if !dir.join(harness::RECORDS_FILE).exists() {
        return Err(DveError::InvalidSpec(format!(
            "{} holds no record store (missing {})",
            dir.display(),
            harness::RECORDS_FILE
        )));
    }
    let (_, records) = harness::read_store(dir)?;
    Ok(records)
}

fn cmd_report(args: &ReportArgs, json: bool) -> Result<ExitCode, DveError> {
    let records = load_store(&args.records)?;
    let out_dir = args.out.clone().unwrap_or_else(|| args.records.join("reports"));
    fs::create_dir_all(&out_dir).map_err(|e| io_err("create report dir", e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    match args.kind.as_str() {
        "2d" => {
            let estimators = match &args.estimator {
                Some(list) => parse_estimators(list)?,
                None => EstimatorId::ALL.to_vec(),
            };
            let path = out_dir.join(format!("estimate_vs_actual_q{}.svg", args.q));
            report::emit_2d_grid(&records, &estimators, args.q, &path)?;
            written.push(path);
        }
        "surface" => {
            let Some(est) = &args.estimator else {
                return Err(DveError::InvalidSpec(
                    "--kind surface requires --estimator".into(),
                ));
            };
            let est: EstimatorId = est.parse()?;
            report::emit_bias_surface(&records, est, &out_dir)?;
            written.push(out_dir.join(format!("bias_surface_{est}.svg")));
        }
        "tables" => {
            report::emit_region_tables(&records, &out_dir)?;
            let table = report::emit_threshold_table(
                &records,
                &[
                    (ThresholdStatistic::Max, 5.0),
                    (ThresholdStatistic::Max, 2.0),
                    (ThresholdStatistic::Avg, 5.0),
                    (ThresholdStatistic::Avg, 2.0),
                ],
            );
            fs::write(out_dir.join("thresholds.csv"), table.to_csv())
                .map_err(|e| io_err("write thresholds", e))?;
            fs::write(
                out_dir.join("thresholds.json"),
                serde_json::to_string_pretty(&table.to_json()).expect("table serializes"),
            )
            .map_err(|e| io_err("write thresholds", e))?;
            fs::write(out_dir.join("thresholds.txt"), table.to_text())
                .map_err(|e| io_err("write thresholds", e))?;
            for name in ["ratio_error.csv", "pct_bias.csv", "pct_rmse.csv", "thresholds.csv"] {
                written.push(out_dir.join(name));
            }
        }
        _ => unreachable!("clap validates --kind"),
    }
    if json {
        println!("{}", json!({ "out": out_dir, "files": written }));
    } else {
        for f in &written {
            println!("wrote {}", f.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_presets(json: bool) -> Result<ExitCode, DveError> {
    if json {
        let rows: Vec<serde_json::Value> = PRESET_NAMES
            .iter()
            .map(|name| {
                let c = builtin_grid(name).expect("builtin presets resolve");
                json!({
                    "name": name,
                    "regimes": c.regimes.len(),
                    "scale_divisor": c.scale_divisor,
                    "expected_records": c.expected_records(),
                })
            })
            .collect();
        println!("{}", json!({ "presets": rows }));
    } else {
        for name in PRESET_NAMES {
            let c = builtin_grid(name).expect("builtin presets resolve");
            println!(
                "{name}: {} regimes, scale 1/{}, {} records",
                c.regimes.len(),
                c.scale_divisor,
                c.expected_records()
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}
