//! `prompts` subcommands: stock templates, dry-run prompt building,
//! in-context reservations and batch generation.

use std::collections::HashSet;
use std::fs::OpenOptions;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bws_core::corpus::{read_records, write_jsonl, write_jsonl_file, ITEMS_FILE, SEEDS_FILE};
use bws_core::prompts::{
    build_prompt, generate_batch, records_to_items, sample_incontext, BatchConfig, ClientConfig, PromptTemplate, Strategy,
};
use bws_core::{Item, Seed};
use clap::{Args, Subcommand, ValueEnum};
use serde_json::json;

use crate::generator::HttpGenerator;
use crate::report::{fields, Report, Table};
use crate::{Globals, UsageError};

pub const TEMPLATES_FILE: &str = "templates.jsonl";
pub const GENERATIONS_FILE: &str = "generations.jsonl";

#[derive(Args)]
pub struct PromptsArgs {
    #[command(subcommand)]
    what: PromptsCmd,
}

#[derive(Args)]
struct SeedInput {
    /// Seed catalog [default: seeds.jsonl in --corpus].
    #[arg(long, value_name = "PATH")]
    seeds: Option<PathBuf>,
}

#[derive(Args)]
struct ReserveInput {
    /// Seeds held back per example category.
    #[arg(long, default_value_t = 40)]
    per_category: usize,
    /// Of those, seeds dealt to each of completion and conversion.
    #[arg(long, default_value_t = 20)]
    per_strategy: usize,
}

#[derive(Subcommand)]
enum PromptsCmd {
    /// Write the stock templates, one per strategy, with placeholder examples to replace.
    Templates,
    /// Print the prompts that would be sent, without calling a generator.
    Build {
        #[command(flatten)]
        seeds: SeedInput,
        /// templates.jsonl [default: stock templates].
        #[arg(long, value_name = "PATH")]
        templates: Option<PathBuf>,
        #[arg(long, value_enum)]
        strategy: StrategyArg,
        /// Only these seeds (repeatable) [default: all].
        #[arg(long = "seed-id", value_name = "ID")]
        seed_ids: Vec<String>,
        /// Drop the in-context examples and render header plus seed only.
        #[arg(long)]
        no_examples: bool,
    },
    /// Hold back seeds as in-context examples and list the remaining targets.
    Reserve {
        #[command(flatten)]
        seeds: SeedInput,
        #[command(flatten)]
        reserve: ReserveInput,
    },
    /// Generate items for the target seeds through the configured generator.
    ///
    /// The generator is configured through BWS_GEN_ENDPOINT, BWS_GEN_API_KEY,
    /// BWS_GEN_TIMEOUT_MS and BWS_GEN_MAX_RETRIES. Records go to
    /// generations.jsonl (or --out); accepted outputs are appended to
    /// items.jsonl in --corpus.
    Generate {
        #[command(flatten)]
        seeds: SeedInput,
        /// templates.jsonl with hand-written in-context examples.
        #[arg(long, value_name = "PATH")]
        templates: PathBuf,
        #[command(flatten)]
        reserve: ReserveInput,
        /// Also run the conversation strategy. Its outputs are recorded but do not become items.
        #[arg(long)]
        include_conversation: bool,
        /// Concurrent generator calls.
        #[arg(long, default_value_t = 4)]
        max_in_flight: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Completion,
    Conversion,
    Conversation,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Completion => Strategy::Completion,
            StrategyArg::Conversion => Strategy::Conversion,
            StrategyArg::Conversation => Strategy::Conversation,
        }
    }
}

fn load_seeds(g: &Globals, input: &SeedInput) -> anyhow::Result<Vec<Seed>> {
    let path = g.input_or_corpus(&input.seeds, "--seeds", SEEDS_FILE)?;
    Ok(read_records(path)?)
}

fn load_template(path: &Path, strategy: Strategy) -> anyhow::Result<Option<PromptTemplate>> {
    let templates: Vec<PromptTemplate> = read_records(path)?;
    let mut matching = templates.into_iter().filter(|t| t.strategy == strategy);
    let first = matching.next();
    if matching.next().is_some() {
        bail!("{}: more than one {strategy:?} template", path.display());
    }
    Ok(first)
}

pub fn run(g: &Globals, args: &PromptsArgs) -> anyhow::Result<Report> {
    match &args.what {
        PromptsCmd::Templates => {
            let out = g.out_or_corpus(TEMPLATES_FILE)?;
            let templates: Vec<PromptTemplate> = Strategy::enabled(true).into_iter().map(PromptTemplate::stock).collect();
            write_jsonl_file(&out, &templates)?;
            let text = fields(&[("templates", templates.len().to_string()), ("written", out.display().to_string())]);
            Ok(Report::new(json!({ "n_templates": templates.len(), "out": out }), text))
        }
        PromptsCmd::Build { seeds, templates, strategy, seed_ids, no_examples } => {
            let strategy = Strategy::from(*strategy);
            let catalog = load_seeds(g, seeds)?;
            let mut template = match templates {
                Some(path) => load_template(path, strategy)?.with_context(|| format!("{}: no {strategy:?} template", path.display()))?,
                None => PromptTemplate::stock(strategy),
            };
            if *no_examples {
                template.in_context_examples.clear();
            }
            template.validate()?;
            let wanted: HashSet<&str> = seed_ids.iter().map(String::as_str).collect();
            if let Some(missing) = wanted.iter().find(|id| !catalog.iter().any(|s| s.seed_id == **id)) {
                bail!("unknown seed id `{missing}`");
            }
            let prompts: Vec<(String, String)> = catalog
                .iter()
                .filter(|s| wanted.is_empty() || wanted.contains(s.seed_id.as_str()))
                .map(|s| (s.seed_id.clone(), build_prompt(&s.text, &template)))
                .collect();
            let mut text = String::new();
            for (id, prompt) in &prompts {
                text.push_str(&format!("=== {id}\n{prompt}\n\n"));
            }
            let summary: Vec<_> = prompts.iter().map(|(id, p)| json!({ "seed_id": id, "prompt": p })).collect();
            Ok(Report::new(summary, text))
        }
        PromptsCmd::Reserve { seeds, reserve } => {
            let rng_seed = g.seed()?;
            let catalog = load_seeds(g, seeds)?;
            let reservation = sample_incontext(&catalog, reserve.per_category, reserve.per_strategy, rng_seed)?;
            if let Some(out) = g.out_opt() {
                std::fs::write(out, serde_json::to_string_pretty(&reservation)? + "\n").with_context(|| format!("{}", out.display()))?;
            }
            let mut table = Table::new(["category", "strategy", "seeds"]);
            for group in &reservation.groups {
                table.row([group.category.to_string(), format!("{:?}", group.strategy).to_lowercase(), group.seed_ids.len().to_string()]);
            }
            let text = format!(
                "{}\n{}",
                fields(&[("reserved", reservation.reserved_count().to_string()), ("targets", reservation.targets.len().to_string())]),
                table.render()
            );
            Ok(Report::new(&reservation, text))
        }
        PromptsCmd::Generate { seeds, templates, reserve, include_conversation, max_in_flight } => {
            let rng_seed = g.seed()?;
            let dir = g.corpus()?;
            let out = g.out_or_corpus(GENERATIONS_FILE)?;
            let config = ClientConfig::from_env()?
                .ok_or_else(|| UsageError(format!("set {} to the generator endpoint", ClientConfig::ENDPOINT_VAR)))?;
            let catalog = load_seeds(g, seeds)?;
            let reservation = sample_incontext(&catalog, reserve.per_category, reserve.per_strategy, rng_seed)?;
            let targets: HashSet<&str> = reservation.targets.iter().map(String::as_str).collect();
            let target_seeds: Vec<Seed> = catalog.iter().filter(|s| targets.contains(s.seed_id.as_str())).cloned().collect();

            let client = HttpGenerator::new(&config)?;
            let batch = BatchConfig { max_retries: config.max_retries, max_in_flight: *max_in_flight };
            let mut records = Vec::new();
            for strategy in Strategy::enabled(*include_conversation) {
                let template =
                    load_template(templates, strategy)?.with_context(|| format!("{}: no {strategy:?} template", templates.display()))?;
                records.extend(generate_batch(&target_seeds, &template, &client, &batch)?);
            }
            write_jsonl_file(&out, &records)?;

            let items_path = dir.join(ITEMS_FILE);
            let existing: Vec<Item> = if items_path.exists() { read_records(&items_path)? } else { Vec::new() };
            let new_items = records_to_items(&records, &catalog, existing.len() + 1);
            let taken: HashSet<&str> = existing.iter().map(|i| i.item_id.as_str()).collect();
            if let Some(clash) = new_items.iter().find(|i| taken.contains(i.item_id.as_str())) {
                bail!(
                    "{}: item id `{}` already exists; ids are expected to run i00001.. without gaps",
                    items_path.display(),
                    clash.item_id
                );
            }
            let file =
                OpenOptions::new().create(true).append(true).open(&items_path).with_context(|| format!("{}", items_path.display()))?;
            write_jsonl(BufWriter::new(file), &new_items).with_context(|| format!("{}", items_path.display()))?;

            let accepted = records.iter().filter(|r| r.accepted).count();
            let summary = json!({
                "n_records": records.len(),
                "n_accepted": accepted,
                "n_rejected": records.len() - accepted,
                "n_new_items": new_items.len(),
                "generations": out,
                "items": items_path,
            });
            let text = fields(&[
                ("records", records.len().to_string()),
                ("accepted", accepted.to_string()),
                ("rejected", (records.len() - accepted).to_string()),
                ("new items", new_items.len().to_string()),
                ("generations", out.display().to_string()),
            ]);
            Ok(Report::new(summary, text))
        }
    }
}
