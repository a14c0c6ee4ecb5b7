use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use robust_sos::data::{self, SampleMeta};
use robust_sos::estimator::Stage;
use robust_sos::experiment::{self, ExperimentConfig, SweepRow};
use robust_sos::sdp;
use robust_sos::Error;

#[derive(Parser)]
#[command(name = "robust-sos", version, about = "Outlier-robust Gaussian mean and covariance estimation by SoS relaxations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate mean and covariance on one corrupted sample.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Read the sample from a file written by `generate` instead of drawing one.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// One results row per (eps, adversary, seed).
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Resilience of clean samples along random probes, and the subgaussianity certificate.
    Audit {
        #[command(flatten)]
        common: Common,
    },
    /// Write the corrupted samples a sweep would use.
    Generate {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    One,
    Two,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated corruption rates.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    adversary: Option<String>,
    #[arg(long, value_parser = ["4", "6"])]
    degree: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Output directory; without it results go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    stage: Option<StageArg>,
    /// Write the solver residual trace.
    #[arg(long)]
    trace: bool,
}

/// Input problems exit with 1, solver failures with 2.
enum Failure {
    Input(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Failure> {
    let mut config = match &c.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        config.seed = seed;
    }
    if let Some(eps) = &c.eps {
        config.eps = eps.clone();
    }
    if let Some(a) = &c.adversary {
        config.adversaries = vec![a.clone()];
    }
    if let Some(k) = &c.degree {
        config.degree = k.parse().expect("clap restricts the values");
    }
    if let Some(n) = c.n {
        config.n = n;
    }
    if let Some(d) = c.d {
        config.d = d;
    }
    if let Some(out) = &c.out {
        config.out_dir = Some(out.display().to_string());
    }
    if let Some(stage) = c.stage {
        config.stage = match stage {
            StageArg::One => Stage::One,
            StageArg::Two => Stage::Two,
        };
    }
    config.trace |= c.trace;
    config.validate()?;
    Ok(config)
}

/// A file in the output directory, or stdout when there is none.
fn sink(config: &ExperimentConfig, name: &str) -> Result<Box<dyn Write>, Failure> {
    match &config.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Ok(Box::new(BufWriter::new(File::create(Path::new(dir).join(name))?)))
        }
        None => Ok(Box::new(io::stdout().lock())),
    }
}

fn write_config(config: &ExperimentConfig) -> Result<(), Failure> {
    if config.out_dir.is_some() {
        let mut w = sink(config, "config.json")?;
        writeln!(w, "{}", config.to_json()?)?;
    }
    Ok(())
}

fn estimate(config: &ExperimentConfig, input: Option<&Path>) -> Result<(), Failure> {
    let (sample, adversary, seed) = match input {
        Some(path) => {
            let file = File::open(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            let (sample, meta) = data::read_sample_csv(file)?;
            data::check_eps(sample.eps)?;
            (sample, meta.adversary, meta.seed)
        }
        None => {
            let (eps, adversary) = (config.eps[0], config.adversaries[0].clone());
            (config.sample(eps, &adversary, config.seed)?, adversary, config.seed)
        }
    };
    let outcome = experiment::estimate_sample(config, &sample, &adversary, seed)?;
    {
        let mut w = sink(config, "report.json")?;
        let json = serde_json::to_string_pretty(&outcome).map_err(|e| Failure::Input(e.to_string()))?;
        writeln!(w, "{json}")?;
    }
    if config.out_dir.is_some() {
        experiment::write_results_csv(&[SweepRow::from_outcome(&outcome, None)], sink(config, "results.csv")?)?;
        write_config(config)?;
    }
    if config.trace {
        sdp::write_trace_csv(&outcome.report.trace, sink(config, "trace.csv")?)?;
    }
    match outcome.report.status() {
        sdp::SolveStatus::Solved => Ok(()),
        status => Err(Failure::Solver(format!(
            "solver stopped with status {} after {} iterations",
            experiment::status_name(status),
            outcome.report.iterations()
        ))),
    }
}

fn sweep(config: &ExperimentConfig) -> Result<(), Failure> {
    let rows = experiment::run_sweep(config)?;
    for r in rows.iter().filter(|r| r.status == "error") {
        eprintln!(
            "row eps={} adversary={} seed={} failed: {}",
            r.eps,
            r.adversary,
            r.seed,
            r.message.as_deref().unwrap_or("")
        );
    }
    experiment::write_results_csv(&rows, sink(config, "results.csv")?)?;
    write_config(config)
}

fn audit(config: &ExperimentConfig) -> Result<(), Failure> {
    let rows = experiment::run_audit(config)?;
    let outside = rows.iter().filter(|r| r.within == Some(false)).count();
    if outside > 0 {
        eprintln!("{outside} audit rows exceed their reference envelope");
    }
    experiment::write_audit_csv(&rows, sink(config, "audit.csv")?)?;
    write_config(config)
}

fn generate(config: &ExperimentConfig) -> Result<(), Failure> {
    for &eps in &config.eps {
        for adversary in &config.adversaries {
            for seed in config.seeds() {
                let sample = config.sample(eps, adversary, seed)?;
                let meta = SampleMeta {
                    adversary: adversary.clone(),
                    seed,
                };
                let name = format!("sample_{adversary}_eps{eps}_seed{seed}.csv");
                data::write_sample_csv(&sample, &meta, sink(config, &name)?)?;
            }
        }
    }
    write_config(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Estimate { common, input } => estimate(&load_config(&common)?, input.as_deref()),
        Command::Sweep { common } => sweep(&load_config(&common)?),
        Command::Audit { common } => audit(&load_config(&common)?),
        Command::Generate { common } => generate(&load_config(&common)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
