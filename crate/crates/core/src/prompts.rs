//! Seed catalog handling, prompt templates and batch generation through a
//! pluggable text generator.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{sequential_id, Item, PromptType, Seed, SeedCategory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Completion,
    Conversion,
    Conversation,
}

impl Strategy {
    /// Item prompt type for strategies whose output becomes an item.
    pub fn prompt_type(self) -> Option<PromptType> {
        match self {
            Strategy::Completion => Some(PromptType::Completion),
            Strategy::Conversion => Some(PromptType::Conversion),
            Strategy::Conversation => None,
        }
    }

    /// Strategies run by default; conversation is opt-in.
    pub fn enabled(include_conversation: bool) -> Vec<Strategy> {
        let mut out = vec![Strategy::Completion, Strategy::Conversion];
        if include_conversation {
            out.push(Strategy::Conversation);
        }
        out
    }

    pub fn default_header(self) -> &'static str {
        match self {
            Strategy::Completion => "Using the given statement as a start, You generate only one gender-biased sentence to complete the provided seed. Some examples that you can follow are:",
            Strategy::Conversion => "You convert any given statement into one statement that is biased against a gender. Follow the examples specified below:",
            Strategy::Conversation => "Using the given statement as a start, You generate a long gender-biased conversation between 2 people like the conversations given as examples here:",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub seed: String,
    pub generated: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub strategy: Strategy,
    pub header: String,
    pub in_context_examples: Vec<ExamplePair>,
}

impl PromptTemplate {
    /// Stock header with a single placeholder example. Operators replace
    /// the placeholder with hand-written pairs before a real run.
    pub fn stock(strategy: Strategy) -> Self {
        PromptTemplate {
            strategy,
            header: strategy.default_header().to_string(),
            in_context_examples: vec![ExamplePair {
                seed: "<example seed statement>".into(),
                generated: "<hand-written example output>".into(),
            }],
        }
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        if self.header.trim().is_empty() {
            return Err(GenerationError::EmptyHeader(self.strategy));
        }
        Ok(())
    }
}

/// Renders a prompt: the header, then each example as an input/output
/// pair, then the seed as the final open input. The result always ends
/// with the seed text.
pub fn build_prompt(seed_text: &str, template: &PromptTemplate) -> String {
    let mut prompt = String::with_capacity(template.header.len() + 64 * (template.in_context_examples.len() + 1));
    prompt.push_str(template.header.trim_end());
    prompt.push_str("\n\n");
    for ex in &template.in_context_examples {
        prompt.push_str("Input: ");
        prompt.push_str(ex.seed.trim());
        prompt.push_str("\nOutput: ");
        prompt.push_str(ex.generated.trim());
        prompt.push_str("\n\n");
    }
    prompt.push_str("Input: ");
    prompt.push_str(seed_text.trim());
    prompt
}

#[derive(Debug, Error, PartialEq)]
pub enum GenerationError {
    #[error("{category} has {available} seeds, need {needed}")]
    PoolTooSmall { category: SeedCategory, available: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0:?} template has an empty header")]
    EmptyHeader(Strategy),
    #[error("{0:?} template has no in-context examples")]
    NoExamples(Strategy),
    #[error("every generation call failed; last error: {0}")]
    AllFailed(TransportError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReservedGroup {
    pub category: SeedCategory,
    pub strategy: Strategy,
    pub seed_ids: Vec<String>,
}

/// Seeds held back as in-context examples, and the rest left as targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InContextReservation {
    pub groups: Vec<ReservedGroup>,
    /// Generation targets in catalog order.
    pub targets: Vec<String>,
}

impl InContextReservation {
    pub fn reserved_count(&self) -> usize {
        self.groups.iter().map(|g| g.seed_ids.len()).sum()
    }
}

/// Categories that donate in-context examples.
pub const EXAMPLE_CATEGORIES: [SeedCategory; 3] = [SeedCategory::Explicit, SeedCategory::Implicit, SeedCategory::Neutral];

/// Draws `per_category` seeds from each example category and deals them
/// `per_strategy` at a time to completion and conversion.
pub fn sample_incontext(
    seeds: &[Seed],
    per_category: usize,
    per_strategy: usize,
    rng_seed: u64,
) -> Result<InContextReservation, GenerationError> {
    let strategies = Strategy::enabled(false);
    if per_strategy * strategies.len() != per_category {
        return Err(GenerationError::InvalidConfig(format!(
            "per_category ({per_category}) must equal per_strategy ({per_strategy}) x {} strategies",
            strategies.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut groups = Vec::new();
    let mut reserved: HashMap<&str, ()> = HashMap::new();
    for category in EXAMPLE_CATEGORIES {
        let mut pool: Vec<&Seed> = seeds.iter().filter(|s| s.category == category).collect();
        if pool.len() < per_category {
            return Err(GenerationError::PoolTooSmall { category, available: pool.len(), needed: per_category });
        }
        pool.shuffle(&mut rng);
        for (strategy, chunk) in strategies.iter().zip(pool[..per_category].chunks(per_strategy)) {
            let mut ids: Vec<String> = chunk.iter().map(|s| s.seed_id.clone()).collect();
            ids.sort();
            for id in chunk {
                reserved.insert(id.seed_id.as_str(), ());
            }
            groups.push(ReservedGroup { category, strategy: *strategy, seed_ids: ids });
        }
    }
    let targets = seeds.iter().filter(|s| !reserved.contains_key(s.seed_id.as_str())).map(|s| s.seed_id.clone()).collect();
    Ok(InContextReservation { groups, targets })
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[error("{0}")]
pub struct TransportError(pub String);

/// Synchronous text generation client: prompt in, text out.
pub trait TextGenerator: Sync {
    fn generate(&self, prompt: &str) -> Result<String, TransportError>;
}

/// Connection settings for an external generator, read from the
/// environment by front ends.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientConfig {
    pub endpoint: String,
    pub credential: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: usize,
}

impl ClientConfig {
    pub const ENDPOINT_VAR: &'static str = "BWS_GEN_ENDPOINT";
    pub const CREDENTIAL_VAR: &'static str = "BWS_GEN_API_KEY";
    pub const TIMEOUT_VAR: &'static str = "BWS_GEN_TIMEOUT_MS";
    pub const RETRIES_VAR: &'static str = "BWS_GEN_MAX_RETRIES";

    /// `None` when no endpoint is configured.
    pub fn from_env() -> Result<Option<Self>, GenerationError> {
        let Ok(endpoint) = std::env::var(Self::ENDPOINT_VAR) else {
            return Ok(None);
        };
        let parse = |var: &str, default: u64| -> Result<u64, GenerationError> {
            match std::env::var(var) {
                Ok(v) => v.parse().map_err(|_| GenerationError::InvalidConfig(format!("{var}={v} is not a number"))),
                Err(_) => Ok(default),
            }
        };
        Ok(Some(ClientConfig {
            endpoint,
            credential: std::env::var(Self::CREDENTIAL_VAR).ok(),
            timeout_ms: parse(Self::TIMEOUT_VAR, 30_000)?,
            max_retries: parse(Self::RETRIES_VAR, 2)? as usize,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Empty,
    EchoesSeed,
    TransportError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub seed_id: String,
    pub strategy: Strategy,
    pub prompt_text: String,
    pub raw_output: String,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<RejectReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchConfig {
    /// Extra attempts after a transport failure.
    pub max_retries: usize,
    pub max_in_flight: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig { max_retries: 0, max_in_flight: 4 }
    }
}

/// A finished record and the transport failure behind it, if any.
type Slot = (GenerationRecord, Option<TransportError>);

fn echoes(output: &str, seed: &str) -> bool {
    let norm = |s: &str| s.trim().trim_end_matches(['.', '!', '?']).to_lowercase();
    norm(output) == norm(seed)
}

/// Runs one generation per seed. Transport failures are recorded per seed;
/// the batch only fails when every call failed. Records come back in seed
/// order whatever order the calls complete in.
pub fn generate_batch(
    seeds: &[Seed],
    template: &PromptTemplate,
    client: &dyn TextGenerator,
    config: &BatchConfig,
) -> Result<Vec<GenerationRecord>, GenerationError> {
    template.validate()?;
    if template.in_context_examples.is_empty() {
        return Err(GenerationError::NoExamples(template.strategy));
    }
    if config.max_in_flight == 0 {
        return Err(GenerationError::InvalidConfig("max_in_flight must be at least 1".into()));
    }
    let call = |prompt: &str| {
        let mut last = None;
        for _ in 0..=config.max_retries {
            match client.generate(prompt) {
                Ok(text) => return Ok(text),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    };

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Slot>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..config.max_in_flight.min(seeds.len()) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(seed) = seeds.get(idx) else { break };
                let prompt_text = build_prompt(&seed.text, template);
                let (raw_output, reason, failure) = match call(&prompt_text) {
                    Ok(text) => {
                        let text = text.trim().to_string();
                        let reason = if text.is_empty() {
                            Some(RejectReason::Empty)
                        } else if echoes(&text, &seed.text) {
                            Some(RejectReason::EchoesSeed)
                        } else {
                            None
                        };
                        (text, reason, None)
                    }
                    Err(e) => (String::new(), Some(RejectReason::TransportError), Some(e)),
                };
                let record = GenerationRecord {
                    seed_id: seed.seed_id.clone(),
                    strategy: template.strategy,
                    prompt_text,
                    raw_output,
                    accepted: reason.is_none(),
                    reject_reason: reason,
                };
                *slots[idx].lock().expect("slot lock") = Some((record, failure));
            });
        }
    });

    let mut records = Vec::with_capacity(seeds.len());
    let mut last_failure = None;
    let mut failures = 0;
    for slot in slots {
        let (record, failure) = slot.into_inner().expect("slot lock").expect("every seed processed");
        if let Some(f) = failure {
            failures += 1;
            last_failure = Some(f);
        }
        records.push(record);
    }
    if !seeds.is_empty() && failures == seeds.len() {
        return Err(GenerationError::AllFailed(last_failure.expect("failures recorded")));
    }
    Ok(records)
}

/// Turns accepted records into items, numbering ids from `first_index`.
/// Conversation outputs have no item prompt type and are skipped.
pub fn records_to_items(records: &[GenerationRecord], seeds: &[Seed], first_index: usize) -> Vec<Item> {
    let by_id: BTreeMap<&str, &Seed> = seeds.iter().map(|s| (s.seed_id.as_str(), s)).collect();
    let mut items = Vec::new();
    for record in records.iter().filter(|r| r.accepted) {
        let (Some(prompt_type), Some(seed)) = (record.strategy.prompt_type(), by_id.get(record.seed_id.as_str())) else {
            continue;
        };
        items.push(Item {
            item_id: sequential_id("i", first_index + items.len(), 5),
            text: record.raw_output.clone(),
            seed_id: Some(seed.seed_id.clone()),
            seed_type: seed.category,
            prompt_type,
        });
    }
    items
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SeedSource;

    fn catalog(counts: [usize; 4]) -> Vec<Seed> {
        let mut out = Vec::new();
        for (category, n) in SeedCategory::ALL.into_iter().zip(counts) {
            for i in 0..n {
                out.push(Seed {
                    seed_id: format!("{}-{i:03}", category.as_str()),
                    text: format!("{} seed number {i}", category.as_str()),
                    category,
                    source: SeedSource::Copa,
                });
            }
        }
        out
    }

    #[test]
    fn reservation_on_full_catalog() {
        let seeds = catalog([150, 150, 150, 50]);
        let r = sample_incontext(&seeds, 40, 20, 7).unwrap();
        assert_eq!(r.reserved_count(), 120);
        assert_eq!(r.targets.len(), 380);
        assert_eq!(r.groups.len(), 6);
        assert!(r.groups.iter().all(|g| g.seed_ids.len() == 20));
        let reserved: Vec<&String> = r.groups.iter().flat_map(|g| &g.seed_ids).collect();
        assert!(reserved.iter().all(|id| !r.targets.contains(id)));
        assert_eq!(sample_incontext(&seeds, 40, 20, 7).unwrap(), r);
        assert_ne!(sample_incontext(&seeds, 40, 20, 8).unwrap(), r);
    }

    #[test]
    fn reservation_pool_too_small() {
        let seeds = catalog([30, 150, 150, 50]);
        assert!(matches!(
            sample_incontext(&seeds, 40, 20, 0),
            Err(GenerationError::PoolTooSmall { category: SeedCategory::Explicit, available: 30, needed: 40 })
        ));
        assert!(matches!(sample_incontext(&seeds, 40, 15, 0), Err(GenerationError::InvalidConfig(_))));
    }

    #[test]
    fn prompt_ends_with_seed() {
        let t = PromptTemplate::stock(Strategy::Conversion);
        let p = build_prompt("She cares about herself too much", &t);
        assert!(p.starts_with("You convert any given statement"));
        assert!(p.ends_with("She cares about herself too much"));
    }

    #[test]
    fn zero_example_prompt_is_header_and_seed() {
        let t = PromptTemplate { strategy: Strategy::Completion, header: "Header.".into(), in_context_examples: vec![] };
        assert_eq!(build_prompt("The male entered the office", &t), "Header.\n\nInput: The male entered the office");
    }

    #[test]
    fn prompts_differ_only_in_final_slot() {
        let t = PromptTemplate::stock(Strategy::Completion);
        let a = build_prompt("The country discovered new land.", &t);
        let b = build_prompt("The climbers failed to reach the peak.", &t);
        let prefix = a.len() - "The country discovered new land.".len();
        assert_eq!(a[..prefix], b[..prefix]);
        assert_eq!(&b[prefix..], "The climbers failed to reach the peak.");
        assert_eq!(a, build_prompt("The country discovered new land.", &t));
    }

    struct Canned;
    impl TextGenerator for Canned {
        fn generate(&self, prompt: &str) -> Result<String, TransportError> {
            Ok(format!("  generated for {}  ", prompt.len()))
        }
    }

    struct Echo;
    impl TextGenerator for Echo {
        fn generate(&self, prompt: &str) -> Result<String, TransportError> {
            Ok(prompt.rsplit("Input: ").next().unwrap().to_string())
        }
    }

    #[test]
    fn canned_client_accepts_everything_with_provenance() {
        let seeds = catalog([3, 2, 0, 0]);
        let t = PromptTemplate::stock(Strategy::Conversion);
        let records = generate_batch(&seeds, &t, &Canned, &BatchConfig::default()).unwrap();
        assert_eq!(records.len(), 5);
        assert!(records.iter().all(|r| r.accepted && !r.raw_output.starts_with(' ')));
        assert_eq!(
            records.iter().map(|r| r.seed_id.as_str()).collect::<Vec<_>>(),
            seeds.iter().map(|s| s.seed_id.as_str()).collect::<Vec<_>>()
        );
        let items = records_to_items(&records, &seeds, 1);
        assert_eq!(items.len(), 5);
        assert_eq!(items[0].item_id, "i00001");
        for (item, seed) in items.iter().zip(&seeds) {
            assert_eq!(item.seed_id.as_deref(), Some(seed.seed_id.as_str()));
            assert_eq!(item.seed_type, seed.category);
            assert_eq!(item.prompt_type, PromptType::Conversion);
        }
    }

    #[test]
    fn echoed_seed_is_rejected() {
        let seeds = catalog([2, 0, 0, 0]);
        let records = generate_batch(&seeds, &PromptTemplate::stock(Strategy::Completion), &Echo, &BatchConfig::default()).unwrap();
        assert!(records.iter().all(|r| !r.accepted && r.reject_reason == Some(RejectReason::EchoesSeed)));
        assert!(records_to_items(&records, &seeds, 1).is_empty());
    }

    #[test]
    fn template_without_examples_cannot_generate() {
        let t = PromptTemplate { in_context_examples: vec![], ..PromptTemplate::stock(Strategy::Completion) };
        assert_eq!(
            generate_batch(&catalog([1, 0, 0, 0]), &t, &Canned, &BatchConfig::default()),
            Err(GenerationError::NoExamples(Strategy::Completion))
        );
    }

    #[test]
    fn conversation_outputs_do_not_become_items() {
        let seeds = catalog([1, 0, 0, 0]);
        let records = generate_batch(&seeds, &PromptTemplate::stock(Strategy::Conversation), &Canned, &BatchConfig::default()).unwrap();
        assert!(records[0].accepted);
        assert!(records_to_items(&records, &seeds, 1).is_empty());
    }
}
