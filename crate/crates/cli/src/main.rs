//! `bws`: command-line front end for the best-worst scaling pipeline.
//!
//! Exit status is 0 on success, 1 when the work itself fails (bad data,
//! infeasible design, unreachable service) and 2 on usage errors.

mod analyze;
mod generator;
mod pipeline;
mod prompts;
mod report;
mod service;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};

use report::Report;

#[derive(Parser)]
#[command(name = "bws", version, about = "Best-worst scaling: tuple design, annotation service, scoring and analysis")]
pub struct Cli {
    /// Print the report as JSON instead of aligned text.
    #[arg(long, global = true)]
    json: bool,
    /// Corpus directory holding seeds.jsonl, items.jsonl, tuples.jsonl and annotations.jsonl.
    #[arg(long, global = true, value_name = "DIR")]
    corpus: Option<PathBuf>,
    /// Output path for the command's artifact.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// RNG seed; required by every randomized command.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design balanced 4-tuples over the items.
    Tuples(pipeline::TuplesArgs),
    /// Run the annotation HTTP service over a corpus.
    Serve(service::ServeArgs),
    /// Compute counting scores and write scores.csv.
    Score(pipeline::ScoreArgs),
    /// Split-half reliability of the annotations.
    Shr(pipeline::ShrArgs),
    /// Score bins, cross-tabs, PMI keywords, log-odds phrases and histograms.
    Analyze(analyze::AnalyzeArgs),
    /// Compare model predictions with gold scores.
    Eval(pipeline::EvalArgs),
    /// Prompt templates, in-context reservations and batch generation.
    Prompts(prompts::PromptsArgs),
    /// Annotate tuples with simulated annotators driven by latent scores.
    Simulate(pipeline::SimulateArgs),
    /// Download the committed annotations from a running service.
    Export(service::ExportArgs),
    /// Check every corpus file and cross-reference.
    Validate,
}

/// Wrong or missing arguments; reported like a clap error, exit 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub struct Globals {
    pub json: bool,
    corpus: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
}

impl Globals {
    pub fn seed(&self) -> Result<u64, UsageError> {
        self.seed.ok_or_else(|| UsageError("this command is randomized and needs an explicit --seed <U64>".into()))
    }

    pub fn corpus(&self) -> Result<&Path, UsageError> {
        self.corpus.as_deref().ok_or_else(|| UsageError("--corpus <DIR> is required".into()))
    }

    pub fn corpus_opt(&self) -> Option<&Path> {
        self.corpus.as_deref()
    }

    pub fn out_opt(&self) -> Option<&Path> {
        self.out.as_deref()
    }

    /// `--out`, else `name` inside the corpus directory.
    pub fn out_or_corpus(&self, name: &str) -> Result<PathBuf, UsageError> {
        match (&self.out, &self.corpus) {
            (Some(out), _) => Ok(out.clone()),
            (None, Some(dir)) => Ok(dir.join(name)),
            (None, None) => Err(UsageError(format!("give --out <PATH> or --corpus <DIR> to place {name}"))),
        }
    }

    /// An explicit path, else `name` inside the corpus directory.
    pub fn input_or_corpus(&self, explicit: &Option<PathBuf>, flag: &str, name: &str) -> Result<PathBuf, UsageError> {
        match (explicit, &self.corpus) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(dir.join(name)),
            (None, None) => Err(UsageError(format!("give {flag} <PATH> or --corpus <DIR>"))),
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Option<Report>> {
    let globals = Globals { json: cli.json, corpus: cli.corpus, out: cli.out, seed: cli.seed };
    let report = match cli.command {
        Command::Tuples(args) => pipeline::tuples(&globals, &args)?,
        Command::Serve(args) => {
            service::serve(&globals, &args)?;
            return Ok(None);
        }
        Command::Score(args) => pipeline::score(&globals, &args)?,
        Command::Shr(args) => pipeline::shr(&globals, &args)?,
        Command::Analyze(args) => analyze::run(&globals, &args)?,
        Command::Eval(args) => pipeline::eval(&globals, &args)?,
        Command::Prompts(args) => prompts::run(&globals, &args)?,
        Command::Simulate(args) => pipeline::simulate(&globals, &args)?,
        Command::Export(args) => service::export(&globals, &args)?,
        Command::Validate => pipeline::validate(&globals)?,
    };
    Ok(Some(report))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli) {
        Ok(Some(report)) => {
            report.print(json);
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => match e.downcast::<UsageError>() {
            Ok(usage) => Cli::command().error(ErrorKind::MissingRequiredArgument, usage.0).exit(),
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
    }
}
