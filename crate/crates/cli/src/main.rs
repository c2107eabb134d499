//! `mfsvar`: simulate, fit, select and evaluate structural VARs observed at
//! subsampled or mixed frequencies.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(name = "mfsvar", version, about = "Subsampled and mixed-frequency SVAR estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON). Flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed: restart seed for fitting, the single dataset seed for `simulate`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    restarts: Option<usize>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Comma-separated time scales: candidate k for `select`, the sampling
    /// rate (one value) or per-series rates (several) for `simulate`.
    #[arg(long, global = true, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Structural variant name(s) for `select`: free, identity, diagonal, lower, upper.
    #[arg(long = "variant", global = true, value_delimiter = ',')]
    variants: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate datasets and write them with the truth and a manifest.
    Simulate,
    /// Multi-start EM fit of each dataset.
    Fit {
        /// Dataset CSV(s); defaults to the manifest in the output directory.
        #[arg(long)]
        data: Vec<PathBuf>,
    },
    /// BIC comparison of variants across candidate time scales.
    Select {
        #[arg(long)]
        data: Vec<PathBuf>,
    },
    /// Aligned error summaries of fits against the simulated truth.
    Eval,
    /// Print the subsampling confound example.
    DemoConfound {
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
}

/// Non-convergence is reported with its own exit code; results are still written.
pub enum Outcome {
    Done,
    NotConverged,
}

fn run(cli: Cli) -> mfsvar::Result<Outcome> {
    let (mut cfg, base) = match &cli.config {
        Some(path) => (
            ExperimentConfig::load(path)?,
            path.parent().map(PathBuf::from).unwrap_or_default(),
        ),
        None => (ExperimentConfig::default(), PathBuf::new()),
    };
    if let Some(out) = cli.out {
        cfg.out = Some(out);
    } else if let Some(out) = &cfg.out {
        cfg.out = Some(base.join(out));
    }
    cfg.data = cfg.data.iter().map(|d| base.join(d)).collect();
    if let Some(seed) = cli.seed {
        cfg.em.seed = seed;
        if matches!(cli.command, Command::Simulate) {
            cfg.seeds = vec![seed];
        }
    }
    if let Some(r) = cli.restarts {
        cfg.em.restarts = r;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if !cli.variants.is_empty() {
        cfg.variants = cli.variants;
    }
    let demo_k = cli.k.as_ref().and_then(|k| k.first().copied()).unwrap_or(2);
    if let Some(k) = cli.k {
        if matches!(cli.command, Command::Simulate) {
            cfg.scheme = match k.as_slice() {
                [single] => config::SchemeSpec::Uniform { k: *single },
                rates => config::SchemeSpec::Mixed { rates: rates.to_vec() },
            };
        } else {
            cfg.k = k;
        }
    }
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| mfsvar::SvarError::Argument(format!("thread pool: {e}")))?;
    }
    cfg.check()?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &base),
        Command::Fit { data } => commands::fit(&cfg, &data),
        Command::Select { data } => commands::select(&cfg, &data),
        Command::Eval => commands::eval(&cfg),
        Command::DemoConfound { json } => commands::demo_confound(demo_k, json),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
