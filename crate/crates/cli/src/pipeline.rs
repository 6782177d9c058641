//! Offline pipeline commands: tuples, simulate, score, shr, eval, validate.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use bws_core::corpus::{
    read_records, read_scores_file, write_jsonl_file, write_scores_csv, ANNOTATIONS_FILE, ITEMS_FILE, SCORES_FILE, TUPLES_FILE,
};
use bws_core::design::{design_tuples, verify_design, DesignConfig};
use bws_core::eval::{evaluate, ingest_predictions_file, PredictionFormat};
use bws_core::reliability::{simulate_annotators, split_half_reliability, SimAnnotatorConfig};
use bws_core::scoring::{compute_scores, coverage_stats, CoverageStats};
use bws_core::synth::random_latent;
use bws_core::{Corpus, Item, Tuple4};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::report::{fields, fmt_opt, Report, Table};
use crate::Globals;

#[derive(Args)]
pub struct TuplesArgs {
    /// Items file [default: items.jsonl in --corpus].
    #[arg(long, value_name = "PATH")]
    items: Option<PathBuf>,
    /// Tuples each item appears in.
    #[arg(long, default_value_t = 8)]
    appearances: usize,
    /// Items per tuple.
    #[arg(long, default_value_t = 4)]
    size: usize,
    /// Most items two tuples may share.
    #[arg(long, default_value_t = 2)]
    overlap: usize,
    /// Repair rounds per permutation before giving up.
    #[arg(long, default_value_t = 100)]
    max_attempts: usize,
}

pub fn tuples(g: &Globals, args: &TuplesArgs) -> anyhow::Result<Report> {
    let seed = g.seed()?;
    let items_path = g.input_or_corpus(&args.items, "--items", ITEMS_FILE)?;
    let out = g.out_or_corpus(TUPLES_FILE)?;
    let items: Vec<Item> = read_records(&items_path)?;
    let ids: Vec<String> = items.iter().map(|i| i.item_id.clone()).collect();
    let config = DesignConfig {
        tuple_size: args.size,
        appearances_per_item: args.appearances,
        max_pair_overlap: args.overlap,
        rng_seed: seed,
        max_attempts: args.max_attempts,
    };
    let tuples = design_tuples(&ids, &config)?;
    let check = verify_design(&tuples, &ids, &config);
    if !check.passed {
        bail!("generated design failed verification: {:?}", check.violations);
    }
    write_jsonl_file(&out, &tuples)?;
    let summary = json!({
        "n_items": ids.len(),
        "n_tuples": tuples.len(),
        "tuple_size": args.size,
        "appearances_per_item": args.appearances,
        "max_pair_overlap": args.overlap,
        "seed": seed,
        "verified": check.passed,
        "out": out,
    });
    let text = fields(&[
        ("items", ids.len().to_string()),
        ("tuples", tuples.len().to_string()),
        ("appearances per item", args.appearances.to_string()),
        ("max shared items", args.overlap.to_string()),
        ("verified", check.passed.to_string()),
        ("written", out.display().to_string()),
    ]);
    Ok(Report::new(summary, text))
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Tuples file [default: tuples.jsonl in --corpus].
    #[arg(long, value_name = "PATH")]
    tuples: Option<PathBuf>,
    /// CSV of `item_id,score`; higher means more extreme. Drawn at random from --seed when omitted.
    #[arg(long, value_name = "PATH")]
    latent: Option<PathBuf>,
    /// Where to write the latent scores that were used.
    #[arg(long, value_name = "PATH")]
    latent_out: Option<PathBuf>,
    /// Agreement with the latent order, in [0.5, 1.0]; 0.5 picks at random.
    #[arg(long, default_value_t = 0.85)]
    fidelity: f64,
    /// Judgments per tuple.
    #[arg(long, default_value_t = 3)]
    per_tuple: usize,
}

#[derive(Serialize, Deserialize)]
struct LatentRow {
    item_id: String,
    score: f64,
}

fn read_latent(path: &Path) -> anyhow::Result<HashMap<String, f64>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).with_context(|| format!("{}", path.display()))?;
    let mut out = HashMap::new();
    for (i, row) in reader.deserialize::<LatentRow>().enumerate() {
        let row = row.with_context(|| format!("{} row {}", path.display(), i + 2))?;
        if out.insert(row.item_id.clone(), row.score).is_some() {
            bail!("{} row {}: item `{}` listed twice", path.display(), i + 2, row.item_id);
        }
    }
    Ok(out)
}

fn write_latent(path: &Path, ids: &[String], latent: &HashMap<String, f64>) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("{}", path.display()))?;
    for id in ids {
        writer.serialize(LatentRow { item_id: id.clone(), score: latent[id] })?;
    }
    writer.flush()?;
    Ok(())
}

pub fn simulate(g: &Globals, args: &SimulateArgs) -> anyhow::Result<Report> {
    let seed = g.seed()?;
    let tuples_path = g.input_or_corpus(&args.tuples, "--tuples", TUPLES_FILE)?;
    let out = g.out_or_corpus(ANNOTATIONS_FILE)?;
    let tuples: Vec<Tuple4> = read_records(&tuples_path)?;
    let mut seen = HashSet::new();
    let ids: Vec<String> = tuples.iter().flat_map(|t| t.item_ids.iter()).filter(|id| seen.insert(id.as_str())).cloned().collect();
    let latent = match &args.latent {
        Some(path) => {
            let latent = read_latent(path)?;
            if let Some(missing) = ids.iter().find(|id| !latent.contains_key(*id)) {
                bail!("{}: no latent score for item `{missing}`", path.display());
            }
            latent
        }
        None => random_latent(&ids, seed.wrapping_add(1)),
    };
    if let Some(path) = &args.latent_out {
        write_latent(path, &ids, &latent)?;
    }
    let config = SimAnnotatorConfig { latent_scores: latent, fidelity: args.fidelity, rng_seed: seed };
    let annotations = simulate_annotators(&ids, &tuples, args.per_tuple, &config)?;
    write_jsonl_file(&out, &annotations)?;
    let summary = json!({
        "n_tuples": tuples.len(),
        "n_items": ids.len(),
        "n_annotations": annotations.len(),
        "per_tuple": args.per_tuple,
        "fidelity": args.fidelity,
        "seed": seed,
        "out": out,
    });
    let text = fields(&[
        ("tuples", tuples.len().to_string()),
        ("annotations", annotations.len().to_string()),
        ("fidelity", args.fidelity.to_string()),
        ("written", out.display().to_string()),
    ]);
    Ok(Report::new(summary, text))
}

fn coverage_lines(c: &CoverageStats) -> Vec<(&'static str, String)> {
    vec![
        ("tuples", c.n_tuples.to_string()),
        ("annotations", c.n_annotations.to_string()),
        ("tuples with >= 2", format!("{:.4}", c.fraction_at_least_two)),
        ("tuples with >= 3", format!("{:.4}", c.fraction_at_least_three)),
        ("judgments per item", format!("{}..{}", c.judgments_per_item_min, c.judgments_per_item_max)),
    ]
}

#[derive(Args)]
pub struct ScoreArgs {
    /// Leave out items no annotation covers instead of failing.
    #[arg(long)]
    skip_uncovered: bool,
    /// Items listed at each end of the ranking.
    #[arg(long, default_value_t = 5)]
    show: usize,
}

pub fn score(g: &Globals, args: &ScoreArgs) -> anyhow::Result<Report> {
    let corpus = Corpus::load(g.corpus()?)?;
    let out = g.out_or_corpus(SCORES_FILE)?;
    let set = compute_scores(&corpus, args.skip_uncovered)?;
    let coverage = coverage_stats(&corpus)?;
    let file = File::create(&out).with_context(|| format!("{}", out.display()))?;
    write_scores_csv(BufWriter::new(file), &set.records)?;

    let ranked = set.ranked();
    let mut table = Table::new(["rank", "item_id", "scaled", "best", "worst", "n", "text"]);
    let text_of: HashMap<&str, &str> = corpus.items.iter().map(|i| (i.item_id.as_str(), i.text.as_str())).collect();
    let shown: Vec<usize> = if ranked.len() <= 2 * args.show {
        (0..ranked.len()).collect()
    } else {
        (0..args.show).chain(ranked.len() - args.show..ranked.len()).collect()
    };
    for idx in shown {
        let r = ranked[idx];
        let snippet: String = text_of.get(r.item_id.as_str()).unwrap_or(&"").chars().take(60).collect();
        table.row([
            (idx + 1).to_string(),
            r.item_id.clone(),
            format!("{:.4}", r.scaled),
            r.n_best.to_string(),
            r.n_worst.to_string(),
            r.n_appearances.to_string(),
            snippet,
        ]);
    }
    let mut pairs = vec![("scored items", set.records.len().to_string()), ("uncovered items", set.uncovered.len().to_string())];
    pairs.extend(coverage_lines(&coverage));
    pairs.push(("written", out.display().to_string()));
    let text = format!("{}\n{}", fields(&pairs), table.render());
    let summary = json!({
        "n_scored": set.records.len(),
        "uncovered": set.uncovered,
        "coverage": coverage,
        "out": out,
    });
    Ok(Report::new(summary, text))
}

#[derive(Args)]
pub struct ShrArgs {
    /// Random splits to average over.
    #[arg(long, default_value_t = 100)]
    iterations: usize,
}

pub fn shr(g: &Globals, args: &ShrArgs) -> anyhow::Result<Report> {
    let seed = g.seed()?;
    let corpus = Corpus::load(g.corpus()?)?;
    let result = split_half_reliability(&corpus, args.iterations, seed)?;
    let text = fields(&[
        ("iterations", result.iterations.to_string()),
        ("pearson", format!("{:.4} (sd {:.4})", result.pearson_mean, result.pearson_std)),
        ("spearman", format!("{:.4} (sd {:.4})", result.spearman_mean, result.spearman_std)),
        ("excluded tuples", result.excluded_tuples.to_string()),
        ("dropped item observations", result.dropped_items.to_string()),
    ]);
    Ok(Report::new(&result, text))
}

#[derive(Clone, Copy, ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonl,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Gold scores.csv [default: scores.csv in --corpus].
    #[arg(long, value_name = "PATH")]
    gold: Option<PathBuf>,
    /// Prediction file with `item_id,score[,repeat_index]` rows.
    #[arg(long, value_name = "PATH")]
    preds: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Model name for the report [default: prediction file stem].
    #[arg(long)]
    model: Option<String>,
    /// What the predictions measure.
    #[arg(long, default_value = "score")]
    dimension: String,
}

pub fn eval(g: &Globals, args: &EvalArgs) -> anyhow::Result<Report> {
    let gold_path = g.input_or_corpus(&args.gold, "--gold", SCORES_FILE)?;
    let gold = read_scores_file(&gold_path)?;
    let known: HashSet<String> = gold.iter().map(|s| s.item_id.clone()).collect();
    let format = match args.format {
        FormatArg::Csv => PredictionFormat::Csv,
        FormatArg::Jsonl => PredictionFormat::Jsonl,
    };
    let model =
        args.model.clone().unwrap_or_else(|| args.preds.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned()));
    let preds = ingest_predictions_file(&args.preds, format, &model, &args.dimension, Some(&known))?;
    let report = evaluate(&gold, &preds)?;
    let mut text = fields(&[
        ("model", report.model_name.clone()),
        ("dimension", report.dimension.clone()),
        ("pearson", fmt_opt(report.pearson)),
        ("spearman", fmt_opt(report.spearman)),
        ("mse", format!("{:.4}", report.mse)),
        ("items", report.n_items.to_string()),
        ("missing", report.n_missing.to_string()),
        ("unknown ids", report.n_unknown.to_string()),
    ]);
    if report.per_repeat.len() > 1 {
        let mut table = Table::new(["repeat", "pearson", "spearman", "mse", "n"]);
        for (i, r) in report.per_repeat.iter().enumerate() {
            table.row([i.to_string(), fmt_opt(r.pearson), fmt_opt(r.spearman), format!("{:.4}", r.mse), r.n_items.to_string()]);
        }
        text.push('\n');
        text.push_str(&table.render());
    }
    for note in &report.notes {
        text.push_str(&format!("note: {note}\n"));
    }
    Ok(Report::new(&report, text))
}

pub fn validate(g: &Globals) -> anyhow::Result<Report> {
    let dir = g.corpus()?;
    let corpus = Corpus::load(dir)?;
    let coverage = coverage_stats(&corpus)?;
    let mut pairs = vec![
        ("corpus", dir.display().to_string()),
        ("seeds", corpus.seeds.len().to_string()),
        ("items", corpus.items.len().to_string()),
        ("annotators", corpus.annotators().len().to_string()),
    ];
    pairs.extend(coverage_lines(&coverage));
    pairs.push(("status", "ok".into()));
    let summary = json!({
        "valid": true,
        "n_seeds": corpus.seeds.len(),
        "n_items": corpus.items.len(),
        "n_annotators": corpus.annotators().len(),
        "coverage": coverage,
    });
    Ok(Report::new(summary, fields(&pairs)))
}
