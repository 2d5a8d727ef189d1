use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bias_harness::backend::Backend;
use bias_harness::config::RunConfig;
use bias_harness::dataset::DEFAULT_QUALIFICATION_REPS;
use bias_harness::runner::{self, RunOptions, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "bias-harness", version, about = "Cognitive-bias experiments on LLM agents")]
struct Cli {
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Global seed (overrides the config's `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute every protocol in a run config.
    Run { config: PathBuf },
    /// Check a run config without executing it.
    Validate { config: PathBuf },
    /// Screen Known MCQ candidates by repeated asking.
    Qualify {
        dataset: PathBuf,
        /// Backend id from the run config.
        #[arg(long)]
        backend: String,
        #[arg(long, default_value_t = DEFAULT_QUALIFICATION_REPS)]
        reps: u32,
        /// Run config holding the backend definitions.
        #[arg(long, default_value = "harness.toml")]
        config: PathBuf,
    },
}

fn fail(code: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let opts = RunOptions { output_dir: cli.out, seed: cli.seed };
    match cli.command {
        Command::Run { config } => match runner::run_file(&config, &opts) {
            Ok(s) => {
                println!("{}", s.run_dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e.exit_code(), e),
        },
        Command::Validate { config } => {
            let mut cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            opts.apply(&mut cfg);
            let v = cfg.violations();
            if v.is_empty() {
                println!("ok");
                ExitCode::SUCCESS
            } else {
                for line in &v {
                    println!("{line}");
                }
                ExitCode::from(EXIT_CONFIG as u8)
            }
        }
        Command::Qualify { dataset, backend, reps, config } => {
            let mut cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            opts.apply(&mut cfg);
            let Some(bc) = cfg.backends.iter().find(|b| b.id == backend) else {
                return fail(EXIT_CONFIG, format!("no backend {backend:?} in {}", config.display()));
            };
            let b = match Backend::new(bc.clone()) {
                Ok(b) => b,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            match runner::qualify(&dataset, &b, reps, cfg.seed, &cfg.output_dir) {
                Ok((path, reports)) => {
                    let accepted = reports.iter().filter(|r| r.accepted).count();
                    println!("{accepted}/{} accepted; report at {}", reports.len(), path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e.exit_code(), e),
            }
        }
    }
}
