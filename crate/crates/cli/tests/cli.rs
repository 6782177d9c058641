use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use bws_core::corpus::{read_records, write_jsonl_file, ANNOTATIONS_FILE, ITEMS_FILE, SEEDS_FILE};
use bws_core::prompts::GenerationRecord;
use bws_core::synth::placeholder_items;
use bws_core::{Corpus, Item, Seed, SeedCategory, SeedSource};
use serde_json::Value;

fn bws(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bws")).current_dir(dir).args(args).env_remove("BWS_ADMIN_TOKEN").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    assert_eq!(code(o), 0, "stderr: {}", stderr(o));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn write_items(dir: &Path, n: usize) {
    write_jsonl_file(&dir.join(ITEMS_FILE), &placeholder_items(n)).unwrap();
}

/// Items, tuples, fidelity-1.0 annotations and scores in `dir`.
fn pipeline(dir: &Path, seed: &str, per_tuple: &str) {
    write_items(dir, 100);
    for args in [
        vec!["tuples", "--corpus", ".", "--seed", seed],
        vec!["simulate", "--corpus", ".", "--seed", seed, "--fidelity", "1.0", "--per-tuple", per_tuple, "--latent-out", "latent.csv"],
        vec!["score", "--corpus", "."],
    ] {
        let o = bws(dir, &args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn help_documents_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cases: &[(&[&str], &[&str])] = &[
        (&["tuples"], &["--items", "--appearances", "--size", "--overlap", "--max-attempts"]),
        (&["serve"], &["--bind", "--port", "--admin-token", "--target", "--floor", "--cap-fraction", "--cap-basis", "--ttl-minutes"]),
        (&["score"], &["--skip-uncovered", "--show"]),
        (&["shr"], &["--iterations"]),
        (&["analyze"], &[]),
        (&["analyze", "bins"], &["--scores", "--edges"]),
        (&["analyze", "crosstab"], &["--scores", "--edges", "--facet"]),
        (&["analyze", "pmi"], &["--scores", "--edges", "--topk", "--min-count", "--alpha"]),
        (&["analyze", "logodds"], &["--scores", "--edges", "--topk", "--alpha0", "--ngrams", "--bin-a", "--bin-b"]),
        (&["analyze", "histogram"], &["--scores", "--bin-width"]),
        (&["eval"], &["--gold", "--preds", "--format", "--model", "--dimension"]),
        (&["prompts"], &[]),
        (&["prompts", "templates"], &[]),
        (&["prompts", "build"], &["--seeds", "--templates", "--strategy", "--seed-id", "--no-examples"]),
        (&["prompts", "reserve"], &["--seeds", "--per-category", "--per-strategy"]),
        (
            &["prompts", "generate"],
            &["--seeds", "--templates", "--per-category", "--per-strategy", "--include-conversation", "--max-in-flight"],
        ),
        (&["simulate"], &["--tuples", "--latent", "--latent-out", "--fidelity", "--per-tuple"]),
        (&["export"], &["--url", "--admin-token"]),
        (&["validate"], &[]),
    ];
    for (sub, flags) in cases {
        let mut args = sub.to_vec();
        args.push("--help");
        let o = bws(dir.path(), &args);
        assert_eq!(code(&o), 0, "{sub:?}");
        let help = stdout(&o);
        for flag in flags.iter().chain(&["--json", "--corpus", "--out", "--seed"]) {
            assert!(help.contains(flag), "{sub:?} help lacks {flag}");
        }
    }
    let top = stdout(&bws(dir.path(), &["--help"]));
    for sub in ["tuples", "serve", "score", "shr", "analyze", "eval", "prompts", "simulate", "export", "validate"] {
        assert!(top.contains(sub), "top-level help lacks {sub}");
    }
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    write_items(dir.path(), 16);
    for args in [
        vec!["tuples", "--corpus", "."],
        vec!["simulate", "--corpus", "."],
        vec!["shr", "--corpus", "."],
        vec!["prompts", "reserve", "--corpus", "."],
        vec!["serve", "--corpus", "."],
    ] {
        let o = bws(dir.path(), &args);
        assert_eq!(code(&o), 2, "{args:?}");
        assert!(stderr(&o).contains("--seed"), "{args:?}: {}", stderr(&o));
    }
    assert_eq!(code(&bws(dir.path(), &["frobnicate"])), 2);
    assert_eq!(code(&bws(dir.path(), &["score", "--no-such-flag"])), 2);
    assert_eq!(code(&bws(dir.path(), &["tuples", "--seed", "1"])), 2, "no --corpus and no --items");
    assert!(!dir.path().join("tuples.jsonl").exists());
}

#[test]
fn validate_good_and_broken_corpora() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "5", "2");
    let o = bws(dir.path(), &["validate", "--corpus", "."]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("status:"));
    assert_eq!(json(&bws(dir.path(), &["validate", "--corpus", ".", "--json"]))["valid"], true);

    let tuples = std::fs::read_to_string(dir.path().join("tuples.jsonl")).unwrap();
    let broken = tuples.replacen("\"i00001\"", "\"ghost\"", 1);
    std::fs::write(dir.path().join("tuples.jsonl"), broken).unwrap();
    let o = bws(dir.path(), &["validate", "--corpus", "."]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("tuples.jsonl:") && stderr(&o).contains("ghost"), "{}", stderr(&o));
}

#[test]
fn score_without_annotations_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    write_items(dir.path(), 16);
    assert_eq!(code(&bws(dir.path(), &["tuples", "--corpus", ".", "--seed", "1"])), 0);
    let o = bws(dir.path(), &["score", "--corpus", "."]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("16 item(s) never appear in an annotated tuple"), "{}", stderr(&o));
    assert!(!dir.path().join("scores.csv").exists());
}

#[test]
fn full_pipeline_reaches_perfect_reliability() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "9", "2");
    let report = json(&bws(dir.path(), &["shr", "--corpus", ".", "--seed", "9", "--iterations", "50", "--json"]));
    let pearson = report["pearson_mean"].as_f64().unwrap();
    assert!(pearson >= 0.99, "shr pearson {pearson}");
    assert_eq!(report["iterations"], 50);
    let corpus = Corpus::load(dir.path()).unwrap();
    assert_eq!(corpus.tuples.len(), 200);
    assert_eq!(corpus.annotations.len(), 400);
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    pipeline(a.path(), "21", "3");
    pipeline(b.path(), "21", "3");
    pipeline(c.path(), "22", "3");
    for file in ["tuples.jsonl", "annotations.jsonl", "scores.csv", "latent.csv"] {
        let fa = std::fs::read(a.path().join(file)).unwrap();
        assert_eq!(fa, std::fs::read(b.path().join(file)).unwrap(), "{file}");
        assert_ne!(fa, std::fs::read(c.path().join(file)).unwrap(), "{file}");
    }
    let shr = |d: &Path| stdout(&bws(d, &["shr", "--corpus", ".", "--seed", "4", "--iterations", "10", "--json"]));
    assert_eq!(shr(a.path()), shr(b.path()));
}

#[test]
fn analyze_reports_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "31", "3");
    let d = dir.path();
    let bins = json(&bws(d, &["analyze", "bins", "--corpus", ".", "--json"]));
    let counts: Vec<u64> = bins["counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(counts.len(), 3);
    assert_eq!(counts.iter().sum::<u64>(), 100);

    let tab = json(&bws(d, &["analyze", "crosstab", "--corpus", ".", "--facet", "seed-type", "--json"]));
    let rows = tab["tables"][0]["counts"].as_array().unwrap();
    for (row, want) in rows.iter().zip(&counts) {
        assert_eq!(row.as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum::<u64>(), *want);
    }

    let four = json(&bws(d, &["analyze", "bins", "--corpus", ".", "--edges", "0.25,0.5,0.75", "--json"]));
    assert_eq!(four["counts"].as_array().unwrap().len(), 4);
    assert_eq!(code(&bws(d, &["analyze", "bins", "--corpus", ".", "--edges", "0.6,0.3"])), 1);

    let hist = json(&bws(d, &["analyze", "histogram", "--corpus", ".", "--bin-width", "0.1", "--json"]));
    assert_eq!(hist["counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum::<u64>(), 100);

    // placeholder texts differ only in their number, so every bin shares its words
    let pmi = bws(d, &["analyze", "pmi", "--corpus", ".", "--min-count", "1"]);
    assert_eq!(code(&pmi), 0, "{}", stderr(&pmi));
    assert!(stdout(&pmi).contains("bin 1 [0, 0.316)"));
    let lo = json(&bws(d, &["analyze", "logodds", "--corpus", ".", "--ngrams", "1", "--json"]));
    assert_eq!((lo["bin_a"].as_u64(), lo["bin_b"].as_u64()), (Some(3), Some(2)));
    assert_eq!(code(&bws(d, &["analyze", "logodds", "--corpus", ".", "--bin-a", "4"])), 1);
}

#[test]
fn eval_against_own_scores_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path(), "41", "3");
    let scores = std::fs::read_to_string(dir.path().join("scores.csv")).unwrap();
    let mut preds = String::from("item_id,score\n");
    for line in scores.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        preds.push_str(&format!("{},{}\n", cols[0], cols[5]));
    }
    preds.push_str("nobody,0.5\n");
    std::fs::write(dir.path().join("preds.csv"), preds).unwrap();
    let r = json(&bws(dir.path(), &["eval", "--corpus", ".", "--preds", "preds.csv", "--json"]));
    assert_eq!(r["pearson"].as_f64(), Some(1.0));
    assert_eq!(r["mse"].as_f64(), Some(0.0));
    assert_eq!(r["n_unknown"], 1);
    assert_eq!(r["model_name"], "preds");
}

fn catalog(counts: [usize; 4]) -> Vec<Seed> {
    let mut out = Vec::new();
    for (category, n) in SeedCategory::ALL.into_iter().zip(counts) {
        for i in 0..n {
            out.push(Seed {
                seed_id: format!("s{:04}", out.len() + 1),
                text: format!("{category} seed statement {i}"),
                category,
                source: SeedSource::Manual,
            });
        }
    }
    out
}

#[test]
fn prompt_templates_build_and_reserve() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut seeds = catalog([150, 150, 150, 50]);
    seeds[0].text = "She cares about herself too much".into();
    write_jsonl_file(&d.join(SEEDS_FILE), &seeds).unwrap();

    assert_eq!(code(&bws(d, &["prompts", "templates", "--corpus", "."])), 0);
    assert_eq!(std::fs::read_to_string(d.join("templates.jsonl")).unwrap().lines().count(), 3);

    let built = json(&bws(
        d,
        &[
            "prompts",
            "build",
            "--corpus",
            ".",
            "--templates",
            "templates.jsonl",
            "--strategy",
            "conversion",
            "--seed-id",
            "s0001",
            "--json",
        ],
    ));
    let prompt = built[0]["prompt"].as_str().unwrap();
    assert!(prompt.starts_with("You convert any given statement"));
    assert!(prompt.ends_with("She cares about herself too much"));
    let bare =
        json(&bws(d, &["prompts", "build", "--corpus", ".", "--strategy", "completion", "--seed-id", "s0002", "--no-examples", "--json"]));
    assert!(!bare[0]["prompt"].as_str().unwrap().contains("Output:"));
    assert_eq!(code(&bws(d, &["prompts", "build", "--corpus", ".", "--strategy", "completion", "--seed-id", "nope"])), 1);

    let r = json(&bws(d, &["prompts", "reserve", "--corpus", ".", "--seed", "3", "--out", "reserve.json", "--json"]));
    let reserved: usize = r["groups"].as_array().unwrap().iter().map(|g| g["seed_ids"].as_array().unwrap().len()).sum();
    assert_eq!(reserved, 120);
    assert_eq!(r["targets"].as_array().unwrap().len(), 380);
    let again = json(&bws(d, &["prompts", "reserve", "--corpus", ".", "--seed", "3", "--json"]));
    assert_eq!(r, again);
    assert_eq!(code(&bws(d, &["prompts", "reserve", "--corpus", ".", "--seed", "3", "--per-category", "200", "--per-strategy", "100"])), 1);
}

/// Minimal HTTP generator: answers `{"text": ...}`, fails with 500 for
/// seeds containing "seed statement 1" and echoes seeds containing
/// "seed statement 2".
fn stub_generator() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/generate", listener.local_addr().unwrap());
    let calls = Arc::new(AtomicUsize::new(0));
    let counter = calls.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let counter = counter.clone();
            std::thread::spawn(move || {
                let mut writer = stream.try_clone().unwrap();
                let mut reader = BufReader::new(stream);
                loop {
                    let mut length = 0usize;
                    let mut line = String::new();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        return;
                    }
                    loop {
                        line.clear();
                        reader.read_line(&mut line).unwrap();
                        let lower = line.to_ascii_lowercase();
                        if let Some(v) = lower.strip_prefix("content-length:") {
                            length = v.trim().parse().unwrap();
                        }
                        if line == "\r\n" {
                            break;
                        }
                    }
                    let mut body = vec![0; length];
                    reader.read_exact(&mut body).unwrap();
                    counter.fetch_add(1, Ordering::SeqCst);
                    let request: Value = serde_json::from_slice(&body).unwrap();
                    let prompt = request["prompt"].as_str().unwrap();
                    let seed = prompt.rsplit("Input: ").next().unwrap();
                    let (status, reply) = if seed.contains("seed statement 1") {
                        ("500 Internal Server Error", String::from("{}"))
                    } else if seed.contains("seed statement 2") {
                        ("200 OK", serde_json::json!({ "text": format!("  {seed}. ") }).to_string())
                    } else {
                        ("200 OK", serde_json::json!({ "text": format!("generated from {seed}") }).to_string())
                    };
                    let head = format!("HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n", reply.len());
                    writer.write_all(head.as_bytes()).unwrap();
                    writer.write_all(reply.as_bytes()).unwrap();
                }
            });
        }
    });
    (url, calls)
}

#[test]
fn prompts_generate_through_a_stub_generator() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // per category: seeds 0..4; two go to in-context examples, the rest are targets
    write_jsonl_file(&d.join(SEEDS_FILE), &catalog([4, 4, 4, 2])).unwrap();
    write_jsonl_file(&d.join(ITEMS_FILE), &placeholder_items(3)).unwrap();
    assert_eq!(code(&bws(d, &["prompts", "templates", "--out", "templates.jsonl"])), 0);

    let missing = bws(
        d,
        &[
            "prompts",
            "generate",
            "--corpus",
            ".",
            "--templates",
            "templates.jsonl",
            "--seed",
            "1",
            "--per-category",
            "2",
            "--per-strategy",
            "1",
        ],
    );
    assert_eq!(code(&missing), 2, "no endpoint configured");

    let (url, calls) = stub_generator();
    let o = Command::new(env!("CARGO_BIN_EXE_bws"))
        .current_dir(d)
        .args(["prompts", "generate", "--corpus", ".", "--templates", "templates.jsonl", "--seed", "1"])
        .args(["--per-category", "2", "--per-strategy", "1", "--json"])
        .env("BWS_GEN_ENDPOINT", &url)
        .env("BWS_GEN_MAX_RETRIES", "1")
        .output()
        .unwrap();
    let report = json(&o);

    let records: Vec<GenerationRecord> = read_records(d.join("generations.jsonl")).unwrap();
    let seeds: Vec<Seed> = read_records(d.join(SEEDS_FILE)).unwrap();
    let n_targets = seeds.len() - 6;
    assert_eq!(records.len(), 2 * n_targets);
    assert_eq!(report["n_records"], records.len());
    let text_of = |id: &str| seeds.iter().find(|s| s.seed_id == id).unwrap().text.clone();
    let mut failing = 0;
    for r in &records {
        let text = text_of(&r.seed_id);
        let want = if text.contains("seed statement 1") {
            failing += 1;
            Some("TransportError")
        } else if text.contains("seed statement 2") {
            Some("EchoesSeed")
        } else {
            None
        };
        assert_eq!(r.reject_reason.map(|x| format!("{x:?}")).as_deref(), want, "{}", r.seed_id);
        assert_eq!(r.accepted, want.is_none());
        assert!(r.prompt_text.ends_with(&text));
    }
    // each failing seed is tried twice
    assert_eq!(calls.load(Ordering::SeqCst), records.len() + failing);

    let items: Vec<Item> = read_records(d.join(ITEMS_FILE)).unwrap();
    let accepted: Vec<&GenerationRecord> = records.iter().filter(|r| r.accepted).collect();
    assert_eq!(items.len(), 3 + accepted.len());
    for (item, record) in items[3..].iter().zip(&accepted) {
        assert_eq!(item.seed_id.as_deref(), Some(record.seed_id.as_str()));
        assert_eq!(item.text, record.raw_output);
        assert_eq!(format!("{:?}", item.prompt_type), format!("{:?}", record.strategy));
    }
    assert_eq!(items[3].item_id, "i00004");
}

#[test]
fn serve_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_items(d, 16);
    assert_eq!(code(&bws(d, &["tuples", "--corpus", ".", "--seed", "2"])), 0);
    let mut server = Command::new(env!("CARGO_BIN_EXE_bws"))
        .current_dir(d)
        .args(["serve", "--corpus", ".", "--seed", "3", "--port", "0", "--cap-fraction", "1.0"])
        .env("BWS_ADMIN_TOKEN", "let-me-in")
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut first).unwrap();
    let base = first.trim().strip_prefix("listening on ").unwrap().to_string();

    let client = reqwest::blocking::Client::new();
    for who in ["ann1", "ann2", "ann3"] {
        let a: Value = client.get(format!("{base}/api/v1/tuple?annotator={who}")).send().unwrap().json().unwrap();
        let body = serde_json::json!({
            "tuple_id": a["tuple_id"],
            "annotator_id": who,
            "best_id": a["items"][0]["item_id"],
            "worst_id": a["items"][3]["item_id"],
        });
        assert_eq!(client.post(format!("{base}/api/v1/annotation")).json(&body).send().unwrap().status(), 201);
    }

    let run_export = |token: &str| {
        Command::new(env!("CARGO_BIN_EXE_bws"))
            .current_dir(d)
            .args(["export", "--url", &base, "--corpus", ".", "--out", "exported.jsonl", "--json"])
            .env("BWS_ADMIN_TOKEN", token)
            .output()
            .unwrap()
    };
    assert_eq!(code(&run_export("wrong")), 1);
    assert!(!d.join("exported.jsonl").exists());
    let report = json(&run_export("let-me-in"));
    assert_eq!(report["n_annotations"], 3);
    let exported = std::fs::read_to_string(d.join("exported.jsonl")).unwrap();
    assert_eq!(exported, std::fs::read_to_string(d.join(ANNOTATIONS_FILE)).unwrap());
    server.kill().unwrap();
    server.wait().unwrap();
}
