//! Single entry point for the enhancement pipeline: schedule inspection,
//! synthetic data, training, enhancement, evaluation, and the invariant
//! self-check suite.

mod commands;
mod settings;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sediff", version, about = "Diffusion-based speech enhancement toolkit")]
struct Cli {
    /// Seed for every stochastic operation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-utterance work (enhance/evaluate).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Plain key/value config file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<std::path::PathBuf>,
    /// Print extra progress information.
    #[arg(long, global = true, default_value_t = false)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the per-step constants of a noise schedule as a column table.
    ScheduleInspect(commands::ScheduleInspectArgs),
    /// Generate a synthetic noisy-speech corpus and its manifest.
    SynthData(commands::SynthDataArgs),
    /// Train a noise predictor on a manifest corpus.
    Train(commands::TrainArgs),
    /// Enhance noisy utterances with a trained checkpoint.
    Enhance(commands::EnhanceArgs),
    /// Score enhanced utterances against their clean references.
    Evaluate(commands::EvaluateArgs),
    /// Run the oracle/invariant self-check suite.
    OracleCheck(commands::OracleCheckArgs),
}

fn main() {
    let cli = Cli::parse();
    let globals = match settings::Globals::resolve(
        cli.seed,
        cli.jobs,
        cli.config.as_deref(),
        cli.verbose,
    ) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    };
    let result = match cli.command {
        Command::ScheduleInspect(args) => commands::schedule_inspect(args, &globals),
        Command::SynthData(args) => commands::synth_data(args, &globals),
        Command::Train(args) => commands::train(args, &globals),
        Command::Enhance(args) => commands::enhance(args, &globals),
        Command::Evaluate(args) => commands::evaluate(args, &globals),
        Command::OracleCheck(args) => commands::oracle_check(args, &globals),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
