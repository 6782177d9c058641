//! `serve` and `export`.

use std::io::Write;
use std::sync::Arc;

use anyhow::{bail, Context};
use bws_core::corpus::read_jsonl;
use bws_core::{Annotation, Corpus};
use bws_service::{AppState, AssignmentPolicy, CapBasis, Store, SystemClock};
use clap::Args;
use serde_json::json;
use tokio::net::TcpListener;

use crate::report::{fields, Report};
use crate::{Globals, UsageError};

const TOKEN_VAR: &str = "BWS_ADMIN_TOKEN";

#[derive(Args)]
pub struct ServeArgs {
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    /// Port to listen on; 0 picks a free one.
    #[arg(long, env = "BWS_PORT", default_value_t = 8080)]
    port: u16,
    /// Bearer token for the export endpoint; export stays disabled without one.
    #[arg(long, env = TOKEN_VAR, hide_env_values = true)]
    admin_token: Option<String>,
    /// Judgments wanted per tuple.
    #[arg(long, default_value_t = 3)]
    target: usize,
    /// Judgments every tuple should reach before any goes past it.
    #[arg(long, default_value_t = 2)]
    floor: usize,
    /// Share of the work one annotator may complete.
    #[arg(long, default_value_t = 0.08)]
    cap_fraction: f64,
    /// What the cap fraction applies to: `workload` (tuples x target) or `tuples`.
    #[arg(long, default_value = "workload")]
    cap_basis: CapBasis,
    /// Minutes a handed-out tuple stays reserved.
    #[arg(long, default_value_t = 15)]
    ttl_minutes: i64,
}

pub fn serve(g: &Globals, args: &ServeArgs) -> anyhow::Result<()> {
    let seed = g.seed()?;
    let dir = g.corpus()?.to_path_buf();
    let policy = AssignmentPolicy {
        target_annotations_per_tuple: args.target,
        floor_annotations_per_tuple: args.floor,
        annotator_cap_fraction: args.cap_fraction,
        reservation_ttl: chrono::Duration::minutes(args.ttl_minutes),
        cap_basis: args.cap_basis,
    };
    policy.validate().map_err(UsageError)?;
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let store = Store::open(&dir, policy, seed, Box::new(SystemClock)).context("opening the corpus")?;
    let token = args.admin_token.clone().unwrap_or_default();
    if token.is_empty() {
        tracing::warn!("no admin token set; export is disabled");
    }
    let state = AppState { store: Arc::new(store), admin_token: token.into() };

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener =
            TcpListener::bind((args.bind.as_str(), args.port)).await.with_context(|| format!("binding {}:{}", args.bind, args.port))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        bws_service::serve(listener, state, shutdown).await?;
        Ok(())
    })
}

#[derive(Args)]
pub struct ExportArgs {
    /// Base URL of the running service.
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    url: String,
    /// Bearer token configured on the service.
    #[arg(long, env = TOKEN_VAR, hide_env_values = true)]
    admin_token: String,
}

pub fn export(g: &Globals, args: &ExportArgs) -> anyhow::Result<Report> {
    let out = g.out_opt().ok_or_else(|| UsageError("--out <PATH> is required".into()))?;
    let url = format!("{}/api/v1/export", args.url.trim_end_matches('/'));
    let response =
        reqwest::blocking::Client::new().get(&url).bearer_auth(&args.admin_token).send().with_context(|| format!("GET {url}"))?;
    let status = response.status();
    if !status.is_success() {
        bail!("GET {url} returned {status}");
    }
    let body = response.text()?;
    let (annotations, _) = read_jsonl::<Annotation, _>(body.as_bytes(), "export")?;
    // check against the corpus before anything is written
    if let Some(dir) = g.corpus_opt() {
        let mut corpus = Corpus::load(dir)?;
        corpus.annotations = annotations.clone();
        corpus.validate().context("export does not match the corpus")?;
    }
    std::fs::write(out, &body).with_context(|| format!("{}", out.display()))?;
    let text = fields(&[
        ("annotations", annotations.len().to_string()),
        ("validated", g.corpus_opt().is_some().to_string()),
        ("written", out.display().to_string()),
    ]);
    Ok(Report::new(json!({ "n_annotations": annotations.len(), "validated": g.corpus_opt().is_some(), "out": out }), text))
}
