//! Analyses over graded scores: score bins, facet cross-tabs, PMI keywords
//! per bin and informed-Dirichlet log-odds for n-gram phrases.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{Item, PromptType, ScoreRecord, SeedCategory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("bin edges must be strictly ascending and inside (0, 1): {0:?}")]
    BadEdges(Vec<f64>),
    #[error("item `{0}` is not in the corpus, so its facet is unknown")]
    MissingFacet(String),
    #[error("bin {0} has no items")]
    EmptyBin(usize),
    #[error("no words left after filtering")]
    EmptyVocabulary,
    #[error("corpus {0} has no phrases")]
    EmptyCorpus(&'static str),
    #[error("prior has no mass")]
    ZeroPrior,
    #[error("prior gives no mass to phrase `{0}`")]
    PriorMissing(String),
    #[error("n-gram order must be at least 1")]
    BadOrder,
    #[error("vocabulary of one phrase leaves the log-odds undefined")]
    DegenerateVocabulary,
}

/// Thresholds splitting [0, 1] into score bins. Bin `k` (1-based) holds
/// scores in `[edges[k-2], edges[k-1])`; the last bin is closed at 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinSpec {
    edges: Vec<f64>,
}

impl Default for BinSpec {
    fn default() -> Self {
        BinSpec { edges: vec![0.316, 0.579] }
    }
}

impl BinSpec {
    pub fn new(edges: Vec<f64>) -> Result<Self, AnalyticsError> {
        let inside = edges.iter().all(|&e| e > 0.0 && e < 1.0);
        let ascending = edges.windows(2).all(|w| w[0] < w[1]);
        if !inside || !ascending {
            return Err(AnalyticsError::BadEdges(edges));
        }
        Ok(BinSpec { edges })
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }

    /// 1-based bin of a scaled score.
    pub fn bin_of(&self, score: f64) -> usize {
        1 + self.edges.iter().take_while(|&&e| e <= score).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinAssignment {
    /// `(item_id, bin)` in input order; bins are 1-based.
    pub items: Vec<(String, usize)>,
    /// `counts[k - 1]` is the size of bin `k`.
    pub counts: Vec<usize>,
}

impl BinAssignment {
    pub fn bin_of(&self, item_id: &str) -> Option<usize> {
        self.items.iter().find(|(id, _)| id == item_id).map(|&(_, b)| b)
    }
}

pub fn assign_bins(scores: &[ScoreRecord], spec: &BinSpec) -> BinAssignment {
    let mut counts = vec![0; spec.n_bins()];
    let items = scores
        .iter()
        .map(|s| {
            let bin = spec.bin_of(s.scaled);
            counts[bin - 1] += 1;
            (s.item_id.clone(), bin)
        })
        .collect();
    BinAssignment { items, counts }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    SeedType,
    PromptType,
}

impl Facet {
    fn columns(self) -> Vec<&'static str> {
        match self {
            Facet::SeedType => SeedCategory::ALL.iter().map(|c| c.as_str()).collect(),
            Facet::PromptType => PromptType::ALL.iter().map(|p| p.as_str()).collect(),
        }
    }

    fn value(self, item: &Item) -> &'static str {
        match self {
            Facet::SeedType => item.seed_type.as_str(),
            Facet::PromptType => item.prompt_type.as_str(),
        }
    }
}

/// Bin-by-facet counts. `counts[bin - 1][column]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossTab {
    pub facet: Facet,
    pub columns: Vec<&'static str>,
    pub counts: Vec<Vec<usize>>,
}

impl CrossTab {
    pub fn row_sums(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_sums(&self) -> Vec<usize> {
        (0..self.columns.len()).map(|c| self.counts.iter().map(|r| r[c]).sum()).collect()
    }
}

pub fn crosstab(items: &[Item], assignment: &BinAssignment, facet: Facet) -> Result<CrossTab, AnalyticsError> {
    let by_id: HashMap<&str, &Item> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let columns = facet.columns();
    let mut counts = vec![vec![0; columns.len()]; assignment.counts.len()];
    for (id, bin) in &assignment.items {
        let item = by_id.get(id.as_str()).ok_or_else(|| AnalyticsError::MissingFacet(id.clone()))?;
        let col = columns.iter().position(|&c| c == facet.value(item)).expect("facet value is a column");
        counts[bin - 1][col] += 1;
    }
    Ok(CrossTab { facet, columns, counts })
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Function words dropped before PMI ranking.
pub const STOPWORDS: &[&str] = &[
    "a",
    "about",
    "after",
    "all",
    "also",
    "am",
    "an",
    "and",
    "any",
    "are",
    "as",
    "at",
    "be",
    "because",
    "been",
    "before",
    "being",
    "but",
    "by",
    "can",
    "could",
    "did",
    "do",
    "does",
    "doing",
    "for",
    "from",
    "had",
    "has",
    "have",
    "having",
    "he",
    "her",
    "here",
    "hers",
    "herself",
    "him",
    "himself",
    "his",
    "how",
    "i",
    "if",
    "in",
    "into",
    "is",
    "it",
    "its",
    "itself",
    "just",
    "me",
    "more",
    "most",
    "my",
    "myself",
    "no",
    "nor",
    "not",
    "of",
    "off",
    "on",
    "once",
    "only",
    "or",
    "other",
    "our",
    "ours",
    "out",
    "over",
    "own",
    "s",
    "same",
    "she",
    "should",
    "so",
    "some",
    "such",
    "t",
    "than",
    "that",
    "the",
    "their",
    "theirs",
    "them",
    "themselves",
    "then",
    "there",
    "these",
    "they",
    "this",
    "those",
    "through",
    "to",
    "too",
    "under",
    "until",
    "up",
    "very",
    "was",
    "we",
    "were",
    "what",
    "when",
    "where",
    "which",
    "while",
    "who",
    "whom",
    "why",
    "will",
    "with",
    "would",
    "you",
    "your",
    "yours",
];

fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmiConfig {
    pub top_k: usize,
    pub min_count: usize,
    /// Add-alpha smoothing constant.
    pub alpha: f64,
}

impl Default for PmiConfig {
    fn default() -> Self {
        PmiConfig { top_k: 10, min_count: 3, alpha: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeywordScore {
    pub word: String,
    pub pmi: f64,
    /// Occurrences of the word inside the bin.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinKeywords {
    pub bin: usize,
    pub words: Vec<KeywordScore>,
}

/// Per-bin token counts over the filtered vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenStats {
    /// word -> count in each bin (index `bin - 1`).
    pub counts: BTreeMap<String, Vec<usize>>,
    pub totals: Vec<usize>,
}

impl TokenStats {
    fn collect<'a>(docs: impl IntoIterator<Item = (&'a str, usize)>, n_bins: usize, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (text, bin) in docs {
            for token in tokenize(text) {
                if !is_stopword(&token) {
                    counts.entry(token).or_insert_with(|| vec![0; n_bins])[bin - 1] += 1;
                }
            }
        }
        counts.retain(|_, per_bin| per_bin.iter().sum::<usize>() >= min_count);
        let mut totals = vec![0; n_bins];
        for per_bin in counts.values() {
            for (t, c) in totals.iter_mut().zip(per_bin) {
                *t += c;
            }
        }
        TokenStats { counts, totals }
    }
}

/// Ranks each bin's words by `log2(p(w | bin) / p(w))`.
///
/// With vocabulary V (non-stopwords seen at least `min_count` times) and B
/// bins, `p(w | b) = (c_wb + a) / (n_b + a|V|)` and
/// `p(w) = (c_w + aB) / (n + aB|V|)`. Only words present in a bin are
/// listed for it; ties go to the more frequent word, then alphabetically.
pub fn pmi_keywords(items: &[Item], assignment: &BinAssignment, config: &PmiConfig) -> Result<Vec<BinKeywords>, AnalyticsError> {
    let by_id: HashMap<&str, &Item> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    let n_bins = assignment.counts.len();
    if let Some(empty) = assignment.counts.iter().position(|&c| c == 0) {
        return Err(AnalyticsError::EmptyBin(empty + 1));
    }
    let docs = assignment
        .items
        .iter()
        .map(|(id, bin)| {
            by_id.get(id.as_str()).map(|item| (item.text.as_str(), *bin)).ok_or_else(|| AnalyticsError::MissingFacet(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let stats = TokenStats::collect(docs, n_bins, config.min_count);
    if stats.counts.is_empty() {
        return Err(AnalyticsError::EmptyVocabulary);
    }

    let a = config.alpha;
    let v = stats.counts.len() as f64;
    let b = n_bins as f64;
    let n: usize = stats.totals.iter().sum();
    let mut out = Vec::with_capacity(n_bins);
    for bin in 0..n_bins {
        let denom_bin = stats.totals[bin] as f64 + a * v;
        let denom_all = n as f64 + a * b * v;
        let mut words: Vec<KeywordScore> = stats
            .counts
            .iter()
            .filter(|(_, per_bin)| per_bin[bin] > 0)
            .map(|(word, per_bin)| {
                let c_wb = per_bin[bin] as f64;
                let c_w = per_bin.iter().sum::<usize>() as f64;
                let p_given = (c_wb + a) / denom_bin;
                let p = (c_w + a * b) / denom_all;
                KeywordScore { word: word.clone(), pmi: (p_given / p).log2(), count: per_bin[bin] }
            })
            .collect();
        words.sort_by(|x, y| y.pmi.total_cmp(&x.pmi).then(y.count.cmp(&x.count)).then_with(|| x.word.cmp(&y.word)));
        words.truncate(config.top_k);
        out.push(BinKeywords { bin: bin + 1, words });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogOddsConfig {
    pub ngram_orders: Vec<usize>,
    /// Total prior mass; each phrase gets a share proportional to its
    /// prior count.
    pub alpha0: f64,
}

impl Default for LogOddsConfig {
    fn default() -> Self {
        LogOddsConfig { ngram_orders: vec![2, 3], alpha0: 500.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhraseScore {
    pub phrase: String,
    pub z: f64,
    pub delta: f64,
    pub count_a: usize,
    pub count_b: usize,
}

/// Phrases ordered by z, most associated with corpus `a` first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogOddsReport {
    pub phrases: Vec<PhraseScore>,
}

impl LogOddsReport {
    pub fn top_a(&self, k: usize) -> Vec<&PhraseScore> {
        self.phrases.iter().take(k).collect()
    }

    pub fn top_b(&self, k: usize) -> Vec<&PhraseScore> {
        self.phrases.iter().rev().take(k).collect()
    }

    pub fn get(&self, phrase: &str) -> Option<&PhraseScore> {
        self.phrases.iter().find(|p| p.phrase == phrase)
    }
}

/// Space-joined n-grams of each requested order, never crossing documents.
pub fn ngram_counts<S: AsRef<str>>(docs: &[S], orders: &[usize]) -> Result<HashMap<String, usize>, AnalyticsError> {
    if orders.contains(&0) {
        return Err(AnalyticsError::BadOrder);
    }
    let mut counts = HashMap::new();
    for doc in docs {
        let tokens = tokenize(doc.as_ref());
        for &order in orders {
            for gram in tokens.windows(order) {
                *counts.entry(gram.join(" ")).or_insert(0) += 1;
            }
        }
    }
    Ok(counts)
}

/// Informed-Dirichlet log-odds z-scores comparing n-gram use in two corpora.
///
/// For phrase w with counts `y_a`, `y_b`, corpus totals `n_a`, `n_b` and prior
/// mass `alpha_w` (summing to `alpha0`):
///
/// ```text
/// delta = ln((y_a + alpha_w) / (n_a + alpha0 - y_a - alpha_w))
///       - ln((y_b + alpha_w) / (n_b + alpha0 - y_b - alpha_w))
/// var   = 1 / (y_a + alpha_w) + 1 / (y_b + alpha_w)
/// z     = delta / sqrt(var)
/// ```
///
/// The prior defaults to the pooled counts of both corpora.
pub fn log_odds_zscores<S: AsRef<str>>(
    corpus_a: &[S],
    corpus_b: &[S],
    prior: Option<&[S]>,
    config: &LogOddsConfig,
) -> Result<LogOddsReport, AnalyticsError> {
    let counts_a = ngram_counts(corpus_a, &config.ngram_orders)?;
    let counts_b = ngram_counts(corpus_b, &config.ngram_orders)?;
    let n_a: usize = counts_a.values().sum();
    let n_b: usize = counts_b.values().sum();
    if n_a == 0 {
        return Err(AnalyticsError::EmptyCorpus("a"));
    }
    if n_b == 0 {
        return Err(AnalyticsError::EmptyCorpus("b"));
    }
    let prior_counts = match prior {
        Some(docs) => ngram_counts(docs, &config.ngram_orders)?,
        None => {
            let mut pooled = counts_a.clone();
            for (w, c) in &counts_b {
                *pooled.entry(w.clone()).or_insert(0) += c;
            }
            pooled
        }
    };
    let prior_total: usize = prior_counts.values().sum();
    if prior_total == 0 || config.alpha0 <= 0.0 {
        return Err(AnalyticsError::ZeroPrior);
    }

    let mut vocab: Vec<&String> = counts_a.keys().chain(counts_b.keys()).collect();
    vocab.sort_unstable();
    vocab.dedup();
    let alpha0 = config.alpha0;
    let (n_a, n_b) = (n_a as f64, n_b as f64);
    let mut phrases = Vec::with_capacity(vocab.len());
    for w in vocab {
        let prior_w = prior_counts.get(w).copied().unwrap_or(0);
        if prior_w == 0 {
            return Err(AnalyticsError::PriorMissing(w.clone()));
        }
        let alpha_w = prior_w as f64 * alpha0 / prior_total as f64;
        let ya = counts_a.get(w).copied().unwrap_or(0);
        let yb = counts_b.get(w).copied().unwrap_or(0);
        let (fa, fb) = (ya as f64, yb as f64);
        let rest_a = n_a + alpha0 - fa - alpha_w;
        let rest_b = n_b + alpha0 - fb - alpha_w;
        if rest_a <= 0.0 || rest_b <= 0.0 {
            return Err(AnalyticsError::DegenerateVocabulary);
        }
        let delta = ((fa + alpha_w) / rest_a).ln() - ((fb + alpha_w) / rest_b).ln();
        let var = 1.0 / (fa + alpha_w) + 1.0 / (fb + alpha_w);
        phrases.push(PhraseScore { phrase: w.clone(), z: delta / var.sqrt(), delta, count_a: ya, count_b: yb });
    }
    phrases.sort_by(|x, y| y.z.total_cmp(&x.z).then_with(|| x.phrase.cmp(&y.phrase)));
    Ok(LogOddsReport { phrases })
}
