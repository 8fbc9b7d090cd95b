use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use unida::config::{apply_overrides, Document};
use unida::evaluate::METRICS_HEADER;
use unida::model::NetworkParams;
use unida::scenario::{generate_scenario, ScenarioSpec};
use unida::train::{evaluate_target, sweep, sweep_csv, train_run, RunConfig, SweepGrid, TRACE_HEADER};
use unida::Error;

#[derive(Parser)]
#[command(name = "unida", version, about = "Universal domain adaptation on feature vectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write source.csv and target.csv for a synthetic scenario.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replaces the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one run and write its artifacts.
    Train(RunArgs),
    /// Score a checkpoint on the target domain of a run config.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train every point of the config's `[sweep]` grid.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `section.key=value`, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

/// Exit status classes.
enum Failure {
    Usage(String),
    Data(String),
    Divergence(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Divergence(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Divergence(m) => m,
        }
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn run_error(e: Error) -> Failure {
    match e {
        Error::Divergence { .. } | Error::Numeric(_) => Failure::Divergence(e.to_string()),
        other => Failure::Data(other.to_string()),
    }
}

impl RunArgs {
    /// Config text with `--set` and `--seed` folded in, plus the parsed run.
    fn load(&self) -> Result<(RunConfig, SweepGrid), Failure> {
        let text = fs::read_to_string(&self.config)
            .map_err(|e| Failure::Usage(format!("{}: {e}", self.config.display())))?;
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        let text = if overrides.is_empty() {
            text
        } else {
            apply_overrides(&text, &overrides).map_err(usage)?
        };
        let doc = Document::parse(&text, &self.config).map_err(usage)?;
        let mut cfg = RunConfig::from_document(&doc).map_err(usage)?;
        let grid = SweepGrid::from_document(&doc).map_err(usage)?;
        doc.finish().map_err(usage)?;
        if let Some(out) = &self.out {
            cfg.out_dir = Some(std::path::absolute(out).unwrap_or_else(|_| out.clone()));
        }
        Ok((cfg, grid))
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn generate(spec: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let mut spec = ScenarioSpec::from_file(spec).map_err(usage)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (source, target) = generate_scenario(&spec).map_err(run_error)?;
    fs::create_dir_all(out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    source.save_csv(&out.join("source.csv")).map_err(run_error)?;
    target.save_csv(&out.join("target.csv")).map_err(run_error)?;
    println!("wrote {} source and {} target rows to {}", source.len(), target.len(), out.display());
    Ok(())
}

fn train(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, _) = args.load()?;
    let artifacts = train_run(&cfg).map_err(run_error)?;
    if let Some(last) = artifacts.trace.last() {
        eprintln!("{TRACE_HEADER}\n{last}");
    }
    println!("{METRICS_HEADER}\n{}", artifacts.report.csv_row());
    Ok(())
}

fn eval(args: &RunArgs, checkpoint: &Path) -> Result<(), Failure> {
    let (cfg, _) = args.load()?;
    let params = NetworkParams::load(checkpoint).map_err(run_error)?;
    let (_, target) = cfg.load_data().map_err(run_error)?;
    let report = evaluate_target(&params, &target, cfg.threshold, cfg.seed).map_err(run_error)?;
    let metrics = format!("{METRICS_HEADER}\n{}\n", report.csv_row());
    // only an explicit --out is written, so evaluating a run's own
    // resolved config never touches its artifacts
    if let Some(dir) = &args.out {
        write(&dir.join("metrics.csv"), &metrics)?;
        let mut curve = Vec::new();
        report
            .write_curve_csv(&mut curve)
            .map_err(|e| Failure::Data(e.to_string()))?;
        write(&dir.join("curve.csv"), &String::from_utf8_lossy(&curve))?;
    }
    print!("{metrics}");
    Ok(())
}

fn run_sweep(args: &RunArgs) -> Result<(), Failure> {
    let (cfg, grid) = args.load()?;
    let points = sweep(&cfg, &grid);
    let table = sweep_csv(&points);
    if let Some(dir) = &cfg.out_dir {
        write(&dir.join("sweep.csv"), &table)?;
    }
    print!("{table}");
    let failed = points.iter().filter(|p| p.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed", points.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Generate { spec, out, seed } => generate(spec, out, *seed),
        Command::Train(args) => train(args),
        Command::Eval { run, checkpoint } => eval(run, checkpoint),
        Command::Sweep(args) => run_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
