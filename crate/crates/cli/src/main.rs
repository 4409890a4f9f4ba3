use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use molmm_cli::{run, CliError, Command, RunConfig};
use molmm_data::Task;

#[derive(Parser)]
#[command(name = "molmm", version, about = "Molecule image and text model pipeline")]
struct Args {
    /// TOML run configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict curation, generation and evaluation to one task.
    #[arg(long, global = true)]
    task: Option<Task>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Build the train and test task records and their images.
    Curate,
    /// Learn the text vocabulary from the train records.
    TrainBpe,
    /// Train the image tokenizer and tokenize every dataset image.
    TrainVq,
    /// Train the language model on the train records.
    TrainLm,
    /// Answer the test prompts.
    Generate,
    /// Score the generated answers.
    Eval,
    /// Summarize the run.
    Report,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Command {
        match c {
            Cmd::Curate => Command::Curate,
            Cmd::TrainBpe => Command::TrainBpe,
            Cmd::TrainVq => Command::TrainVq,
            Cmd::TrainLm => Command::TrainLm,
            Cmd::Generate => Command::Generate,
            Cmd::Eval => Command::Eval,
            Cmd::Report => Command::Report,
        }
    }
}

fn execute(args: Args) -> Result<String, CliError> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = cfg.resolve(args.seed, args.task, args.out);
    run(args.command.into(), &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Args::parse()) {
        Ok(summary) => {
            print!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
