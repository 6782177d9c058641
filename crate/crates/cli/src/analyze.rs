//! `analyze` subcommands over a scores file and the corpus items.

use std::path::PathBuf;

use anyhow::bail;
use bws_core::analytics::{assign_bins, crosstab, log_odds_zscores, pmi_keywords, BinSpec, Facet, LogOddsConfig, PmiConfig};
use bws_core::corpus::{read_records, read_scores_file, ITEMS_FILE, SCORES_FILE};
use bws_core::stats::histogram;
use bws_core::{Item, ScoreRecord};
use clap::{Args, Subcommand, ValueEnum};
use serde_json::json;

use crate::report::{Report, Table};
use crate::Globals;

#[derive(Args)]
pub struct AnalyzeArgs {
    #[command(subcommand)]
    what: Analysis,
}

#[derive(Args)]
struct ScoreInput {
    /// scores.csv [default: scores.csv in --corpus].
    #[arg(long, value_name = "PATH")]
    scores: Option<PathBuf>,
    /// Bin edges on the scaled score, ascending inside (0, 1).
    #[arg(long, value_delimiter = ',', default_value = "0.316,0.579")]
    edges: Vec<f64>,
}

#[derive(Subcommand)]
enum Analysis {
    /// Items per score bin.
    Bins {
        #[command(flatten)]
        input: ScoreInput,
    },
    /// Bin counts broken down by seed type or prompt type.
    Crosstab {
        #[command(flatten)]
        input: ScoreInput,
        /// Facet to break bins down by [default: both].
        #[arg(long, value_enum)]
        facet: Option<FacetArg>,
    },
    /// Words most associated with each bin by PMI.
    Pmi {
        #[command(flatten)]
        input: ScoreInput,
        /// Words listed per bin.
        #[arg(long, default_value_t = 10)]
        topk: usize,
        /// Drop words seen fewer times overall.
        #[arg(long, default_value_t = 3)]
        min_count: usize,
        /// Add-alpha smoothing constant.
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
    },
    /// N-gram phrases separating two bins, as informed-Dirichlet log-odds z-scores.
    Logodds {
        #[command(flatten)]
        input: ScoreInput,
        /// Phrases listed per side.
        #[arg(long, default_value_t = 10)]
        topk: usize,
        /// Total prior mass.
        #[arg(long, default_value_t = 500.0)]
        alpha0: f64,
        /// N-gram orders.
        #[arg(long, value_delimiter = ',', default_value = "2,3")]
        ngrams: Vec<usize>,
        /// Bin on the positive side [default: highest bin].
        #[arg(long)]
        bin_a: Option<usize>,
        /// Bin on the negative side [default: the bin below --bin-a].
        #[arg(long)]
        bin_b: Option<usize>,
    },
    /// Histogram of scaled scores.
    Histogram {
        #[command(flatten)]
        input: ScoreInput,
        /// Bin width; must divide 1.
        #[arg(long, default_value_t = 0.05)]
        bin_width: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FacetArg {
    SeedType,
    PromptType,
}

fn load_scores(g: &Globals, input: &ScoreInput) -> anyhow::Result<(Vec<ScoreRecord>, BinSpec)> {
    let path = g.input_or_corpus(&input.scores, "--scores", SCORES_FILE)?;
    let scores = read_scores_file(&path)?;
    let spec = BinSpec::new(input.edges.clone())?;
    Ok((scores, spec))
}

fn load_items(g: &Globals) -> anyhow::Result<Vec<Item>> {
    Ok(read_records(g.corpus()?.join(ITEMS_FILE))?)
}

fn bin_label(spec: &BinSpec, bin: usize) -> String {
    let edges = spec.edges();
    let lo = if bin == 1 { 0.0 } else { edges[bin - 2] };
    let hi = if bin == spec.n_bins() { 1.0 } else { edges[bin - 1] };
    let close = if bin == spec.n_bins() { ']' } else { ')' };
    format!("[{lo}, {hi}{close}")
}

pub fn run(g: &Globals, args: &AnalyzeArgs) -> anyhow::Result<Report> {
    match &args.what {
        Analysis::Bins { input } => {
            let (scores, spec) = load_scores(g, input)?;
            let bins = assign_bins(&scores, &spec);
            let mut table = Table::new(["bin", "range", "items"]);
            for (i, n) in bins.counts.iter().enumerate() {
                table.row([(i + 1).to_string(), bin_label(&spec, i + 1), n.to_string()]);
            }
            let summary = json!({ "edges": spec.edges(), "counts": bins.counts, "items": bins.items });
            Ok(Report::new(summary, table.render()))
        }
        Analysis::Crosstab { input, facet } => {
            let (scores, spec) = load_scores(g, input)?;
            let items = load_items(g)?;
            let bins = assign_bins(&scores, &spec);
            let facets = match facet {
                Some(FacetArg::SeedType) => vec![Facet::SeedType],
                Some(FacetArg::PromptType) => vec![Facet::PromptType],
                None => vec![Facet::SeedType, Facet::PromptType],
            };
            let mut tabs = Vec::new();
            let mut text = String::new();
            for f in facets {
                let tab = crosstab(&items, &bins, f)?;
                let mut header = vec!["bin".to_string()];
                header.extend(tab.columns.iter().map(|c| c.to_string()));
                header.push("total".into());
                let mut table = Table::new(header);
                for (i, row) in tab.counts.iter().enumerate() {
                    let mut cells = vec![(i + 1).to_string()];
                    cells.extend(row.iter().map(|n| n.to_string()));
                    cells.push(row.iter().sum::<usize>().to_string());
                    table.row(cells);
                }
                let mut totals = vec!["total".to_string()];
                totals.extend(tab.column_sums().iter().map(|n| n.to_string()));
                totals.push(tab.row_sums().iter().sum::<usize>().to_string());
                table.row(totals);
                if !text.is_empty() {
                    text.push('\n');
                }
                text.push_str(&table.render());
                tabs.push(tab);
            }
            Ok(Report::new(json!({ "edges": spec.edges(), "tables": tabs }), text))
        }
        Analysis::Pmi { input, topk, min_count, alpha } => {
            let (scores, spec) = load_scores(g, input)?;
            let items = load_items(g)?;
            let bins = assign_bins(&scores, &spec);
            let config = PmiConfig { top_k: *topk, min_count: *min_count, alpha: *alpha };
            let keywords = pmi_keywords(&items, &bins, &config)?;
            let mut text = String::new();
            for bk in &keywords {
                text.push_str(&format!("bin {} {}\n", bk.bin, bin_label(&spec, bk.bin)));
                let mut table = Table::new(["word", "pmi", "count"]);
                for w in &bk.words {
                    table.row([w.word.clone(), format!("{:.4}", w.pmi), w.count.to_string()]);
                }
                text.push_str(&table.render());
                text.push('\n');
            }
            Ok(Report::new(json!({ "edges": spec.edges(), "bins": keywords }), text))
        }
        Analysis::Logodds { input, topk, alpha0, ngrams, bin_a, bin_b } => {
            let (scores, spec) = load_scores(g, input)?;
            let items = load_items(g)?;
            let bins = assign_bins(&scores, &spec);
            let a = bin_a.unwrap_or(spec.n_bins());
            let b = match bin_b {
                Some(b) => *b,
                None if a > 1 => a - 1,
                None => 2,
            };
            for bin in [a, b] {
                if bin < 1 || bin > spec.n_bins() {
                    bail!("bin {bin} does not exist; there are {} bins", spec.n_bins());
                }
            }
            if a == b {
                bail!("--bin-a and --bin-b must differ");
            }
            let text_of = |bin: usize| -> Vec<&str> {
                let ids: std::collections::HashSet<&str> =
                    bins.items.iter().filter(|(_, k)| *k == bin).map(|(id, _)| id.as_str()).collect();
                items.iter().filter(|i| ids.contains(i.item_id.as_str())).map(|i| i.text.as_str()).collect()
            };
            let config = LogOddsConfig { ngram_orders: ngrams.clone(), alpha0: *alpha0 };
            let report = log_odds_zscores(&text_of(a), &text_of(b), None, &config)?;
            let mut text = String::new();
            for (bin, side) in [(a, report.top_a(*topk)), (b, report.top_b(*topk))] {
                text.push_str(&format!("bin {bin} {}\n", bin_label(&spec, bin)));
                let mut table = Table::new(["phrase", "z", "count_a", "count_b"]);
                for p in side {
                    table.row([p.phrase.clone(), format!("{:.4}", p.z), p.count_a.to_string(), p.count_b.to_string()]);
                }
                text.push_str(&table.render());
                text.push('\n');
            }
            let summary = json!({
                "bin_a": a,
                "bin_b": b,
                "top_a": report.top_a(*topk),
                "top_b": report.top_b(*topk),
                "n_phrases": report.phrases.len(),
            });
            Ok(Report::new(summary, text))
        }
        Analysis::Histogram { input, bin_width } => {
            let (scores, _) = load_scores(g, input)?;
            let values: Vec<f64> = scores.iter().map(|s| s.scaled).collect();
            let hist = histogram(&values, *bin_width)?;
            let peak = hist.counts.iter().copied().max().unwrap_or(0).max(1);
            let mut table = Table::new(["from", "to", "items", ""]);
            for (i, n) in hist.counts.iter().enumerate() {
                let (lo, hi) = hist.edges(i);
                table.row([format!("{lo:.3}"), format!("{hi:.3}"), n.to_string(), "#".repeat(n * 40 / peak)]);
            }
            Ok(Report::new(&hist, table.render()))
        }
    }
}
