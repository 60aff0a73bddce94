mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "shelfsim", version, about = "Spatial retail demand modelling and product allocation")]
struct Cli {
    /// Run configuration file (flat key=value).
    #[arg(long, global = true, env = "SHELFSIM_CONFIG")]
    config: Option<PathBuf>,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for chains and policy rollouts (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic store: sales, placements, truth and environment files.
    GenData {
        /// Store description in config format (gen.* and model.* keys).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit the demand model and write the posterior.
    Fit {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, value_enum, default_value = "desk")]
        preset: PresetArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the baselines and the fitted model on the test period.
    Evaluate {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the Q-network against the posterior-driven simulator.
    TrainDqn {
        #[arg(long)]
        posterior: PathBuf,
        /// Environment file; defaults to the environment stored in the posterior.
        #[arg(long)]
        env: Option<PathBuf>,
        /// Overrides dqn.iterations.
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare random, naive, tabu and DQN allocation policies.
    EvaluatePolicies {
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        qnet: PathBuf,
        /// Episode lengths in days, comma separated.
        #[arg(long, value_delimiter = ',')]
        lengths: Option<Vec<usize>>,
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    let ctx = commands::Context { config: cli.config, seed: cli.seed };
    let result = match cli.command {
        Command::GenData { spec, out_dir } => commands::gen_data(&ctx, spec.as_deref(), &out_dir),
        Command::Fit { data_dir, preset, out } => {
            let preset = match preset {
                PresetArg::Paper => shelfsim::inference::Preset::Paper,
                PresetArg::Desk => shelfsim::inference::Preset::Desk,
            };
            commands::fit(&ctx, &data_dir, preset, &out)
        }
        Command::Evaluate { data_dir, posterior, out } => commands::evaluate(&ctx, &data_dir, &posterior, &out),
        Command::TrainDqn { posterior, env, iterations, out } => {
            commands::train_dqn(&ctx, &posterior, env.as_deref(), iterations, &out)
        }
        Command::EvaluatePolicies { posterior, qnet, lengths, seeds, out } => {
            commands::evaluate_policies(&ctx, &posterior, &qnet, lengths, seeds, &out)
        }
    };
    match result {
        Ok(commands::Outcome::Success) => ExitCode::SUCCESS,
        Ok(commands::Outcome::FitFailed) => {
            eprintln!("error: sampler flagged the fit as failed (too many divergent transitions)");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
