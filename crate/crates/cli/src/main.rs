use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use critfield_cli::{run, ConfigError, ExperimentConfig, ExperimentKind, Mode};

#[derive(Parser)]
#[command(name = "critfield", version, about = "Critical points of Gaussian random fields under diffeomorphisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match critical points of Z∘f against those of Z on the image domain.
    VerifyDiffeo(RunArgs),
    /// Compare mean counts of Z(At) with |det A| times those of Z.
    VerifyAniso(RunArgs),
    /// Compare critical height distributions with the matrix oracle.
    HeightDist(RunArgs),
    /// Compare field-based densities with the Kac–Rice oracle.
    OracleCompare(RunArgs),
    /// Sphere versus ellipsoid catalogs.
    Manifold(RunArgs),
    /// Sample fields and write their catalogs.
    Simulate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

impl Command {
    fn split(self) -> (ExperimentKind, RunArgs) {
        match self {
            Command::VerifyDiffeo(a) => (ExperimentKind::VerifyDiffeo, a),
            Command::VerifyAniso(a) => (ExperimentKind::VerifyAniso, a),
            Command::HeightDist(a) => (ExperimentKind::HeightDist, a),
            Command::OracleCompare(a) => (ExperimentKind::OracleCompare, a),
            Command::Manifold(a) => (ExperimentKind::Manifold, a),
            Command::Simulate(a) => (ExperimentKind::Simulate, a),
        }
    }
}

enum Failure {
    Config(anyhow::Error),
    Other(anyhow::Error),
}

fn load(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig, ConfigError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if config.experiment.kind != kind {
        return Err(ConfigError::Invalid(format!(
            "config describes a {} experiment, not {}",
            config.experiment.kind.name(),
            kind.name()
        )));
    }
    if let Some(seed) = args.seed {
        config.experiment.seed = seed;
    }
    if let Some(r) = args.replicates {
        config.experiment.replicates = r;
    }
    if let Some(mode) = args.mode {
        config.experiment.mode = mode;
    }
    if let Some(out) = &args.out {
        config.experiment.out = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

fn execute(kind: ExperimentKind, args: RunArgs) -> Result<bool, Failure> {
    let config = load(kind, &args).map_err(|e| Failure::Config(e.into()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .context("cannot start worker threads")
        .map_err(Failure::Other)?;
    let output = pool.install(|| run(&config)).map_err(|e| Failure::Config(e.into()))?;
    let out = config.experiment.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    output
        .write_to(&out)
        .with_context(|| format!("cannot write results to {}", out.display()))
        .map_err(Failure::Other)?;
    let report = &output.report;
    for check in report.checks.iter().filter(|c| !c.pass) {
        eprintln!("failed: {} (observed {}, expected {}, {})", check.name, check.observed, check.expected, check.rule);
    }
    println!(
        "{}: {} ({} of {} replicates accepted), results in {}",
        report.experiment,
        if report.verdict.is_pass() { "PASS" } else { "FAIL" },
        report.accepted,
        report.replicates,
        out.display()
    );
    Ok(report.verdict.is_pass())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = cli.command.split();
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
