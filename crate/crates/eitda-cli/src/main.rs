//! Command-line front end for the `eitda` crate.
//!
//! Subcommands cover the whole experiment loop: `gen-data` synthesizes
//! electrode measurements from a truth image, `run` samples a configured
//! posterior to its evaluation budget (resumable from its checkpoint),
//! `summarize` turns a finished trace into diagnostics and a mean image,
//! `compare` aligns several traces on a shared fine-evaluation axis for
//! plotting, and `oracle` checks a toy-problem trace against the exactly
//! enumerated posterior.
//!
//! Exit codes: 0 on success, 1 for numerical failures (including an oracle
//! tolerance breach), 2 for configuration problems — bad flags, unreadable
//! or invalid files. All file outputs are written to a temporary file and
//! renamed into place, so interrupted commands never leave partial outputs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eitda::config::RunConfig;
use eitda::data;
use eitda::diagnostics;
use eitda::grid::{ConductivityField, GridSpec};
use eitda::run;
use eitda::toy::{self, ToyConfig, ToyTables};
use eitda::trace::Trace;
use eitda::{Error, Result};

#[derive(Parser)]
#[command(
    name = "eitda",
    version,
    about = "Delayed-acceptance samplers for electrical impedance imaging"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic electrode measurements from a truth image.
    GenData(GenDataArgs),
    /// Sample the configured posterior until its budget is spent.
    Run(RunArgs),
    /// Summarize a finished run: moments, rates, effective sample sizes.
    Summarize(SummarizeArgs),
    /// Align several traces on a shared fine-evaluation cost axis.
    Compare(CompareArgs),
    /// Check a toy-problem trace against the exactly enumerated posterior.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Directory receiving truth.txt, truth.pgm, and data.txt.
    #[arg(long)]
    out_dir: PathBuf,
    /// Grid side for the built-in truth image (a disk and a bar at
    /// conductivity 4 on a background of 3).
    #[arg(long, default_value_t = 12)]
    side: usize,
    /// Conductivity image to use instead of the built-in one.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Noise sd as a fraction of the largest-magnitude predicted voltage;
    /// 0 writes exact predictions.
    #[arg(long, default_value_t = data::DEFAULT_NOISE_RATIO)]
    noise_ratio: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration: `key = value` lines under [section] headers;
    /// every key has a default, and the effective configuration is echoed
    /// to config.txt next to the outputs.
    #[arg(long)]
    config: PathBuf,
    /// Continue from the checkpoint in the configured output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Output directory of a finished run (reads trace.csv inside, writes
    /// summary.txt and, for full-field traces, mean.pgm).
    #[arg(long)]
    run: PathBuf,
    /// Coordinates to detail (ESS, mode switches); defaults to every
    /// tracked coordinate.
    #[arg(long, value_delimiter = ',')]
    pixels: Option<Vec<usize>>,
    /// Also write the sample covariance of the tracked coordinates, in the
    /// format kernel.proposal_file expects.
    #[arg(long)]
    covariance: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Trace files to align.
    #[arg(required = true)]
    traces: Vec<PathBuf>,
    /// Which value column of each trace to tabulate.
    #[arg(long, default_value_t = 0)]
    column: usize,
    /// Write the table to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Trace of a toy-problem run tracking all four pixels.
    #[arg(long)]
    trace: PathBuf,
    /// Quantization levels per pixel.
    #[arg(long, default_value_t = 2)]
    levels: usize,
    /// State index whose prediction generated the toy data.
    #[arg(long, default_value_t = 6)]
    truth_state: usize,
    /// Toy observation noise sd.
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    /// Records to drop from the front before binning.
    #[arg(long, default_value_t = 0)]
    skip: usize,
    /// Exit with a numerical failure when the total-variation distance
    /// exceeds this bound.
    #[arg(long)]
    tolerance: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Run(a) => run_cmd(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parse(_) | Error::Io(_) => 2,
        Error::Numerical(_) | Error::Unsupported(_) => 1,
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out_dir)?;
    let truth = match &a.truth {
        Some(path) => ConductivityField::load(path)?,
        None => data::reference_truth(GridSpec::new(a.side)?)?,
    };
    let (y, sigma) = data::generate_data(&truth, a.noise_ratio, a.seed)?;
    let truth_path = a.out_dir.join("truth.txt");
    truth.save(&truth_path)?;
    truth.save_pgm(&a.out_dir.join("truth.pgm"))?;
    let data_path = a.out_dir.join("data.txt");
    data::save_data(&data_path, &y, sigma)?;
    println!("wrote {}", truth_path.display());
    println!("wrote {}", data_path.display());
    println!("sigma = {sigma:.16e}");
    if let Ok([low, high, boundary]) = data::tracked_pixels(&truth) {
        println!("tracked pixels (low, high, boundary) = {low},{high},{boundary}");
    }
    Ok(())
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let cfg = RunConfig::load(&a.config)?;
    let arts = run::execute(&cfg, a.resume)?;
    println!("steps = {}", arts.steps);
    println!(
        "evaluations: fine = {} approx = {} coarse = {}",
        arts.cost.fine, arts.cost.approx, arts.cost.coarse
    );
    println!("records = {}", arts.trace.len());
    println!("artifacts in {}", arts.out_dir.display());
    Ok(())
}

fn summarize_cmd(a: SummarizeArgs) -> Result<()> {
    let trace = Trace::load(&a.run.join("trace.csv"))?;
    let detail = match &a.pixels {
        Some(p) => p.clone(),
        None => trace.tracked().to_vec(),
    };
    let summary = diagnostics::summarize(&trace, &detail)?;
    let text = summary.render();
    let summary_path = a.run.join("summary.txt");
    eitda::write_atomic(&summary_path, text.as_bytes())?;
    print!("{text}");
    println!("wrote {}", summary_path.display());

    // A mean image is only meaningful when the trace tracks a full square
    // pixel field in index order.
    let d = trace.tracked().len();
    let side = (d as f64).sqrt().round() as usize;
    if side >= 2 && side * side == d && trace.tracked().iter().copied().eq(0..d) {
        let field = ConductivityField::new(GridSpec::new(side)?, summary.mean.clone())?;
        let mean_path = a.run.join("mean.pgm");
        field.save_pgm(&mean_path)?;
        println!("wrote {}", mean_path.display());
    }
    if let Some(path) = &a.covariance {
        let cov = diagnostics::covariance_matrix(&trace)?;
        diagnostics::save_covariance(path, d, &cov)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// Column heading for a trace path: the parent directory name when the file
/// has the standard name, otherwise the file stem.
fn trace_label(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    match stem {
        Some(s) if s != "trace" => s,
        _ => path
            .parent()
            .and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "trace".into()),
    }
}

fn compare_cmd(a: CompareArgs) -> Result<()> {
    let mut traces = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    for path in &a.traces {
        let t = Trace::load(path)?;
        if a.column >= t.tracked().len() {
            return Err(Error::config(format!(
                "{}: column {} out of range ({} tracked)",
                path.display(),
                a.column,
                t.tracked().len()
            )));
        }
        let mut label = trace_label(path);
        while labels.contains(&label) {
            label.push('+');
        }
        labels.push(label);
        traces.push(t);
    }
    // Shared axis: the union of every trace's cumulative fine-eval stamps,
    // one row per thinned record. Cells hold the latest value at or before
    // that cost; a trace that has not produced its first record yet leaves
    // its cell empty.
    let mut axis: Vec<u64> = traces
        .iter()
        .flat_map(|t| t.records().iter().map(|r| r.cost.fine))
        .collect();
    axis.sort_unstable();
    axis.dedup();

    let mut table = String::new();
    let _ = writeln!(table, "fine_evals,{}", labels.join(","));
    let mut cursors = vec![0usize; traces.len()];
    for &cost in &axis {
        let _ = write!(table, "{cost}");
        for (t, cur) in traces.iter().zip(cursors.iter_mut()) {
            let records = t.records();
            while *cur < records.len() && records[*cur].cost.fine <= cost {
                *cur += 1;
            }
            let _ = match *cur {
                0 => write!(table, ","),
                c => write!(table, ",{:.16e}", records[c - 1].values[a.column]),
            };
        }
        let _ = writeln!(table);
    }
    match &a.out {
        Some(path) => {
            eitda::write_atomic(path, table.as_bytes())?;
            println!("wrote {}", path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn oracle_cmd(a: OracleArgs) -> Result<()> {
    let trace = Trace::load(&a.trace)?;
    if trace.tracked() != [0, 1, 2, 3] {
        return Err(Error::config(
            "the oracle needs a toy trace tracking all four pixels (run.track = full)",
        ));
    }
    let tables = ToyTables::build(&ToyConfig {
        levels: a.levels,
        truth_state: a.truth_state,
        sigma: a.sigma,
    })?;
    let exact = toy::enumerate_posterior(&tables)?;
    let indices: Vec<usize> = trace
        .records()
        .iter()
        .skip(a.skip)
        .map(|r| tables.state_index(&r.values))
        .collect();
    if indices.is_empty() {
        return Err(Error::config(format!(
            "skip = {} leaves no records out of {}",
            a.skip,
            trace.len()
        )));
    }
    let empirical = toy::empirical_distribution(&indices, tables.state_count());
    let tv = toy::tv_distance(&exact, &empirical);
    println!("records_used = {}", indices.len());
    println!("states = {}", tables.state_count());
    println!("tv_distance = {tv:.6}");
    if let Some(tol) = a.tolerance {
        if !(tv <= tol) {
            return Err(Error::numerical(format!(
                "TV distance {tv:.6} exceeds the tolerance {tol}"
            )));
        }
        println!("within tolerance {tol}");
    }
    Ok(())
}
