//! Command-line front end: lead-field generation, scenario simulation,
//! single solves, Monte-Carlo campaigns, and report rendering.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad data or config, 3 solver
//! failure. All randomness flows from `--seed`; identical invocations with
//! identical seeds write byte-identical files. No network access: every
//! input and output is a local file.

use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use esl_core::bench::{
    render_csv, render_json, render_markdown, run_campaign, CampaignConfig, CampaignResults,
};
use esl_core::headmodel::{generate_sphere_leadfield, normalize_columns, SphereSpec};
use esl_core::model::{NoiseKind, NoiseSpec};
use esl_core::parallel::{with_workers, Parallelism};
use esl_core::simulate::{sample_scenario, simulate_measurements, ErpSpec, TestCaseSpec};
use esl_core::solvers::{
    solve, AlphaRule, LinearOptions, Regularization, SblOptions, SblVariant, SissyOptions,
    SolverSpec, SourceWeighting,
};
use esl_core::{ElectrodeArray, Error, LeadField, Measurements, Result, SourceSpace, Validate};

const LEADFIELD_FORMAT: &str = "esl-leadfield/1";
const RESULTS_FORMAT: &str = "results/1";
const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    "\nformats: esl-leadfield/1 measurements-csv/1 results/1"
);

#[derive(Parser)]
#[command(
    name = "esl",
    version = LONG_VERSION,
    about = "Sparse EEG source localization: forward models, inverse solvers, and benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or inspect lead-field artifacts.
    Leadfield {
        #[command(subcommand)]
        command: LeadfieldCommand,
    },
    /// Sample a source scenario and write simulated measurements.
    Simulate(SimulateArgs),
    /// Run one solver on one measurement file.
    Solve(SolveArgs),
    /// Run a Monte-Carlo solver campaign.
    Bench(BenchArgs),
    /// Re-render saved campaign results.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum LeadfieldCommand {
    /// Build a spherical-head lead field and save it.
    Gen(LeadfieldGenArgs),
    /// Print a summary of a saved lead field.
    Info(LeadfieldInfoArgs),
}

#[derive(Args)]
struct LeadfieldGenArgs {
    /// Sphere spec JSON; built-in defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Dotted-path overrides on the spec, e.g. --set grid_spacing_mm=12.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Keep raw gain columns instead of normalizing them to unit norm.
    #[arg(long)]
    raw: bool,
    /// Output directory; receives leadfield.json + gain.f64le.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LeadfieldInfoArgs {
    /// Directory a `leadfield gen` run wrote.
    #[arg(long)]
    leadfield: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    None,
    White,
    Pink,
    Brown,
    Sensor,
}

impl From<NoiseArg> for NoiseKind {
    fn from(v: NoiseArg) -> Self {
        match v {
            NoiseArg::None => NoiseKind::None,
            NoiseArg::White => NoiseKind::White,
            NoiseArg::Pink => NoiseKind::Pink,
            NoiseArg::Brown => NoiseKind::Brown,
            NoiseArg::Sensor => NoiseKind::SensorPercent,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    leadfield: PathBuf,
    /// Stock test case name (tc-i .. tc-iv) or a test-case JSON file.
    #[arg(long)]
    case: String,
    #[arg(long, value_enum, default_value = "none")]
    noise: NoiseArg,
    /// Peak noise amplitude in microvolts (percent of signal peak for
    /// sensor noise).
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    /// Sampling rate in Hz.
    #[arg(long, default_value_t = 30.0)]
    fs: f64,
    #[arg(long, default_value_t = 30)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output directory; receives measurements.csv + scenario.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Solver name: mne, wmne, loreta, sloreta, focuss, mxne, irmxne,
    /// sbl-wipf, sbl-zhang, sissy, vb-sccd, or trap-music.
    #[arg(long, conflicts_with = "config")]
    solver: Option<String>,
    /// Full solver spec JSON, e.g. {"solver":"mxne","options":{...}}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path overrides on the solver spec.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Regularization shortcut: fixed alpha for the linear solvers, the
    /// fraction of the maximal penalty for mxne/irmxne/sissy/vb-sccd.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    leadfield: PathBuf,
    /// Measurements CSV, one row per electrode.
    #[arg(long)]
    measurements: PathBuf,
    /// Sampling rate the measurements were recorded at, Hz.
    #[arg(long, default_value_t = 30.0)]
    fs: f64,
    /// Estimate JSON lands here; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Campaign config JSON; the built-in desk campaign when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path overrides on the campaign config, e.g. --set trials=10.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    set: Vec<String>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the trial loop; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
    Md,
}

#[derive(Args)]
struct ReportArgs {
    /// results.json a previous bench run wrote.
    #[arg(long)]
    results: PathBuf,
    #[arg(long, value_enum)]
    format: FormatArg,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Leadfield { command } => match command {
            LeadfieldCommand::Gen(a) => cmd_leadfield_gen(&a),
            LeadfieldCommand::Info(a) => cmd_leadfield_info(&a),
        },
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Solve(a) => cmd_solve(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

/// Header of the on-disk lead-field artifact; the gain matrix itself lives
/// next to it as row-major little-endian f64.
#[derive(Serialize, Deserialize)]
struct LeadFieldHeader {
    format: String,
    n_electrodes: usize,
    n_columns: usize,
    gain_file: String,
    normalized: bool,
    column_weights: Vec<f64>,
    electrodes: ElectrodeArray,
    source_space: SourceSpace,
}

fn save_leadfield(lf: &LeadField, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header = LeadFieldHeader {
        format: LEADFIELD_FORMAT.to_string(),
        n_electrodes: lf.n_electrodes(),
        n_columns: lf.gain.ncols(),
        gain_file: "gain.f64le".to_string(),
        normalized: lf.normalized,
        column_weights: lf.column_weights.clone(),
        electrodes: lf.electrodes.clone(),
        source_space: lf.source_space.clone(),
    };
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    fs::write(dir.join("leadfield.json"), text)?;
    let mut w = BufWriter::new(fs::File::create(dir.join(&header.gain_file))?);
    for v in lf.gain.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn load_leadfield(dir: &Path) -> Result<LeadField> {
    let text = fs::read_to_string(dir.join("leadfield.json"))?;
    let header: LeadFieldHeader = serde_json::from_str(&text)?;
    if header.format != LEADFIELD_FORMAT {
        return Err(Error::Data(format!(
            "unsupported lead-field format {:?} (this build reads {LEADFIELD_FORMAT:?})",
            header.format
        )));
    }
    let bytes = fs::read(dir.join(&header.gain_file))?;
    let expected = header.n_electrodes * header.n_columns * 8;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "gain file holds {} bytes, header promises {expected}",
            bytes.len()
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks_exact(8) yields 8-byte slices")))
        .collect();
    let gain = Array2::from_shape_vec((header.n_electrodes, header.n_columns), data)
        .map_err(|e| Error::Data(format!("gain shape: {e}")))?;
    let lf = LeadField {
        gain,
        source_space: header.source_space,
        electrodes: header.electrodes,
        column_weights: header.column_weights,
        normalized: header.normalized,
    };
    lf.validate()?;
    Ok(lf)
}

fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::with_capacity(m.len() * 8);
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            Error::Data(format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Data(format!(
                    "{}:{}: {} fields, expected {}",
                    path.display(),
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let shape = (rows.len(), rows[0].len());
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec(shape, flat).map_err(|e| Error::Data(format!("matrix shape: {e}")))
}

/// Applies `PATH=VALUE` assignments onto a JSON document. Path segments are
/// object keys, or indices when the document node is an array; values parse
/// as JSON first and fall back to plain strings.
fn apply_sets(value: &mut serde_json::Value, sets: &[String]) -> Result<()> {
    for s in sets {
        let (path, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {s:?} is not PATH=VALUE")))?;
        let leaf: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        set_path(value, path, leaf)?;
    }
    Ok(())
}

fn set_path(value: &mut serde_json::Value, path: &str, leaf: serde_json::Value) -> Result<()> {
    let segments: Vec<&str> = path.split('.').collect();
    let mut cursor = value;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        cursor = match cursor {
            serde_json::Value::Array(arr) => {
                let idx: usize = seg.parse().map_err(|_| {
                    Error::Config(format!("path {path:?}: {seg:?} must index an array"))
                })?;
                if idx >= arr.len() {
                    return Err(Error::Config(format!(
                        "path {path:?}: index {idx} out of range ({} elements)",
                        arr.len()
                    )));
                }
                if last {
                    arr[idx] = leaf;
                    return Ok(());
                }
                &mut arr[idx]
            }
            serde_json::Value::Object(obj) => {
                if last {
                    obj.insert(seg.to_string(), leaf);
                    return Ok(());
                }
                obj.entry(seg.to_string())
                    .or_insert_with(|| serde_json::json!({}))
            }
            _ => {
                return Err(Error::Config(format!(
                    "path {path:?}: segment {seg:?} descends into a scalar"
                )))
            }
        };
    }
    Ok(())
}

/// Loads a JSON config (or the type's default) and applies overrides.
fn load_config<T: Default + Serialize + DeserializeOwned>(
    path: Option<&Path>,
    sets: &[String],
) -> Result<T> {
    let mut value = match path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
        None => serde_json::to_value(T::default())?,
    };
    apply_sets(&mut value, sets)?;
    Ok(serde_json::from_value(value)?)
}

fn solver_by_name(name: &str) -> Result<SolverSpec> {
    let spec = match name {
        "mne" => SolverSpec::Mne {
            options: LinearOptions::default(),
        },
        "wmne" => SolverSpec::Mne {
            options: LinearOptions {
                weighting: SourceWeighting::DepthNorm,
                ..Default::default()
            },
        },
        "loreta" => SolverSpec::Mne {
            options: LinearOptions {
                weighting: SourceWeighting::GraphLaplacian,
                ..Default::default()
            },
        },
        "sloreta" => SolverSpec::Sloreta {
            alpha: AlphaRule::default(),
        },
        "focuss" => SolverSpec::Focuss {
            options: Default::default(),
        },
        "mxne" => SolverSpec::Mxne {
            options: Default::default(),
        },
        "irmxne" => SolverSpec::Irmxne {
            options: Default::default(),
        },
        "sbl" | "sbl-wipf" => SolverSpec::Sbl {
            options: Default::default(),
        },
        "sbl-zhang" => SolverSpec::Sbl {
            options: SblOptions {
                variant: SblVariant::Zhang,
                ..Default::default()
            },
        },
        "sissy" => SolverSpec::Sissy {
            options: Default::default(),
        },
        "vb-sccd" => SolverSpec::Sissy {
            options: SissyOptions {
                l1_ratio: 0.0,
                ..Default::default()
            },
        },
        "trap-music" => SolverSpec::TrapMusic {
            options: Default::default(),
        },
        other => {
            return Err(Error::Config(format!(
                "unknown solver {other:?} (expected mne, wmne, loreta, sloreta, focuss, \
                 mxne, irmxne, sbl-wipf, sbl-zhang, sissy, vb-sccd, or trap-music)"
            )))
        }
    };
    Ok(spec)
}

fn apply_alpha(spec: &mut SolverSpec, alpha: f64) -> Result<()> {
    match spec {
        SolverSpec::Mne { options } => options.alpha = AlphaRule::Fixed(alpha),
        SolverSpec::Sloreta { alpha: rule } => *rule = AlphaRule::Fixed(alpha),
        SolverSpec::Mxne { options } | SolverSpec::Irmxne { options } => {
            options.alpha = Regularization::FractionOfMax(alpha)
        }
        SolverSpec::Sissy { options } => options.lambda = Regularization::FractionOfMax(alpha),
        other => {
            return Err(Error::Config(format!(
                "--alpha does not apply to {}",
                other.name()
            )))
        }
    }
    Ok(())
}

fn load_solver(args: &SolveArgs) -> Result<SolverSpec> {
    let mut value = match (&args.config, &args.solver) {
        (Some(path), _) => serde_json::from_str(&fs::read_to_string(path)?)?,
        (None, Some(name)) => serde_json::to_value(solver_by_name(name)?)?,
        (None, None) => {
            return Err(Error::Config(
                "pass --solver NAME or --config FILE".to_string(),
            ))
        }
    };
    apply_sets(&mut value, &args.set)?;
    let mut spec: SolverSpec = serde_json::from_value(value)?;
    if let Some(alpha) = args.alpha {
        apply_alpha(&mut spec, alpha)?;
    }
    Ok(spec)
}

fn cmd_leadfield_gen(args: &LeadfieldGenArgs) -> Result<()> {
    let spec: SphereSpec = load_config(args.spec.as_deref(), &args.set)?;
    let mut lf = generate_sphere_leadfield(&spec)?;
    if !args.raw {
        lf = normalize_columns(&lf)?;
    }
    save_leadfield(&lf, &args.out)?;
    println!(
        "wrote {} ({} electrodes x {} columns, {} sources, dof {})",
        args.out.display(),
        lf.n_electrodes(),
        lf.gain.ncols(),
        lf.source_space.n_sources(),
        lf.dof()
    );
    Ok(())
}

fn cmd_leadfield_info(args: &LeadfieldInfoArgs) -> Result<()> {
    let lf = load_leadfield(&args.leadfield)?;
    let ss = &lf.source_space;
    println!("format:      {LEADFIELD_FORMAT}");
    println!("electrodes:  {}", lf.n_electrodes());
    println!("sources:     {}", ss.n_sources());
    println!("dof:         {}", lf.dof());
    println!("columns:     {}", lf.gain.ncols());
    println!("head radius: {} mm", ss.head_radius);
    match ss.grid_spacing {
        Some(h) => println!("grid:        {h} mm lattice"),
        None => println!("grid:        irregular"),
    }
    println!("normalized:  {}", lf.normalized);
    Ok(())
}

fn load_case(case: &str) -> Result<TestCaseSpec> {
    if let Some(stock) = TestCaseSpec::by_name(case) {
        return Ok(stock);
    }
    let path = Path::new(case);
    if path.exists() {
        return Ok(serde_json::from_str(&fs::read_to_string(path)?)?);
    }
    Err(Error::Config(format!(
        "unknown test case {case:?} (expected tc-i..tc-iv or a JSON file path)"
    )))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let lf = load_leadfield(&args.leadfield)?;
    let case = load_case(&args.case)?;
    let noise = NoiseSpec {
        kind: args.noise.into(),
        amplitude: args.amplitude,
    };
    let scenario = sample_scenario(
        &case,
        &lf.source_space,
        &ErpSpec::default(),
        args.fs,
        args.samples,
        noise,
        args.seed,
    )?;
    let y = simulate_measurements(&lf, &scenario)?;
    fs::create_dir_all(&args.out)?;
    write_matrix_csv(&args.out.join("measurements.csv"), &y.data)?;
    let mut text = serde_json::to_string_pretty(&scenario)?;
    text.push('\n');
    fs::write(args.out.join("scenario.json"), text)?;
    println!(
        "wrote {} (case {}, sources {:?}, seed {})",
        args.out.display(),
        case.name,
        scenario.active_indices,
        args.seed
    );
    Ok(())
}

fn cmd_solve(args: &SolveArgs) -> Result<()> {
    let lf = load_leadfield(&args.leadfield)?;
    let data = read_matrix_csv(&args.measurements)?;
    let y = Measurements {
        data,
        fs: args.fs,
        provenance: format!("loaded from {}", args.measurements.display()),
    };
    let spec = load_solver(args)?;
    let est = solve(&spec, &lf, &y)?;
    let mut text = serde_json::to_string_pretty(&est)?;
    text.push('\n');
    match &args.out {
        Some(path) => {
            fs::write(path, text)?;
            println!(
                "wrote {} (solver {}, {} iterations, residual {:.3e})",
                path.display(),
                est.solver,
                est.iterations,
                est.residual_norm
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let mut cfg: CampaignConfig = load_config(args.config.as_deref(), &args.set)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = Some(out.clone());
    }
    let results = with_workers(args.workers, || run_campaign(&cfg, Parallelism::default()))?;
    eprintln!(
        "campaign: {} trials across {} cells, {} failed",
        results.trials.len(),
        results.aggregates.len(),
        results.trials.iter().filter(|t| t.failed).count()
    );
    match &cfg.output_dir {
        Some(dir) => {
            for name in ["trials.csv", "results.json", "summary.md"] {
                println!("wrote {}", dir.join(name).display());
            }
        }
        None => print!("{}", render_markdown(&results)?),
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.results)?;
    let results: CampaignResults = serde_json::from_str(&text)?;
    if results.trials.is_empty() {
        return Err(Error::Data(format!(
            "{}: no trials ({} readers need a bench results file)",
            args.results.display(),
            RESULTS_FORMAT
        )));
    }
    let rendered = match args.format {
        FormatArg::Csv => render_csv(&results.trials)?,
        FormatArg::Json => render_json(&results)?,
        FormatArg::Md => render_markdown(&results)?,
    };
    match &args.out {
        Some(path) => {
            fs::write(path, rendered)?;
            println!("wrote {}", path.display());
        }
        None => print!("{rendered}"),
    }
    Ok(())
}
