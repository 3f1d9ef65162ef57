use std::path::PathBuf;
use std::process::ExitCode;

use blindsight_cli::{
    exit_code, render, run, validate, Analysis, Emit, InputFormat, MergeArms, RunConfig, EXIT_DATA,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "blindsight",
    version,
    about = "Blinding assessment for two-arm trials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run analyses and write the report.
    Run(RunArgs),
    /// List configuration and data problems without running analyses.
    Validate(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "subjects-csv")]
    format: InputFormat,
    /// Comma-separated analyses.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    analyses: Vec<Analysis>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = blindsight_core::resample::DEFAULT_REPLICATES)]
    replicates: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    emit: Emit,
    /// Apportionment baseline timepoint.
    #[arg(long, default_value_t = 1)]
    baseline: usize,
    /// When to pool arms for the McNemar test.
    #[arg(long, value_enum, default_value = "if-homogeneous")]
    merge_arms: MergeArms,
    /// Holm adjustment across the sequential McNemar tests.
    #[arg(long)]
    holm: bool,
}

impl RunArgs {
    fn into_config(self) -> Result<RunConfig, String> {
        let threads = match std::env::var("BLINDSIGHT_THREADS") {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                format!("BLINDSIGHT_THREADS must be a positive integer, got {v:?}")
            })?),
            Err(_) => None,
        };
        Ok(RunConfig {
            analyses: self.analyses,
            alpha: self.alpha,
            replicates: self.replicates,
            seed: self.seed,
            out: self.out,
            emit: self.emit,
            baseline: self.baseline,
            merge_arms: self.merge_arms,
            holm: self.holm,
            threads,
            ..RunConfig::new(self.input, self.format)
        })
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (is_run, args) = match cli.command {
        Command::Run(a) => (true, a),
        Command::Validate(a) => (false, a),
    };
    let cfg = match args.into_config() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_DATA as u8);
        }
    };

    if !is_run {
        let problems = validate(&cfg);
        for p in &problems {
            println!("{p}");
        }
        return if problems.is_empty() {
            ExitCode::SUCCESS
        } else {
            ExitCode::from(EXIT_DATA as u8)
        };
    }

    let report = match run(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code(&e) as u8);
        }
    };
    let body = render(&report, cfg.emit);
    match &cfg.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, body) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(EXIT_DATA as u8);
            }
        }
        None => print!("{body}"),
    }
    ExitCode::SUCCESS
}
