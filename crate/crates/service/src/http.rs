use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;

use crate::store::{ReserveOutcome, Store, StoreError, Submission};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub admin_token: Arc<str>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/tuple", get(next_tuple))
        .route("/api/v1/annotation", post(submit))
        .route("/api/v1/progress", get(progress))
        .route("/api/v1/export", get(export))
        .route("/api/v1/instructions", get(instructions))
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

fn error(status: StatusCode, kind: &str, message: impl ToString) -> Response {
    (status, Json(json!({ "error": kind, "message": message.to_string() }))).into_response()
}

impl IntoResponse for StoreError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            StoreError::UnknownTuple(_) => (StatusCode::NOT_FOUND, "unknown_tuple"),
            StoreError::NoReservation { .. } => (StatusCode::NOT_FOUND, "no_reservation"),
            StoreError::Expired { .. } => (StatusCode::GONE, "reservation_expired"),
            StoreError::Duplicate { .. } => (StatusCode::CONFLICT, "duplicate"),
            StoreError::Invalid(_) => (StatusCode::BAD_REQUEST, "invalid"),
            StoreError::CapExceeded { .. } => (StatusCode::TOO_MANY_REQUESTS, "cap_reached"),
            StoreError::Policy(_) | StoreError::Corpus(_) | StoreError::Log { .. } => {
                tracing::error!(error = %self, "internal failure");
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        error(status, kind, self)
    }
}

#[derive(Deserialize)]
struct TupleQuery {
    annotator: String,
}

async fn next_tuple(State(app): State<AppState>, Query(q): Query<TupleQuery>) -> Response {
    match app.store.reserve(&q.annotator) {
        Ok(ReserveOutcome::Assigned(a)) => Json(a).into_response(),
        Ok(ReserveOutcome::NoneRemaining) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => e.into_response(),
    }
}

async fn submit(State(app): State<AppState>, body: Result<Json<Submission>, JsonRejection>) -> Response {
    let Json(submission) = match body {
        Ok(b) => b,
        Err(rejection) => return error(StatusCode::BAD_REQUEST, "invalid", rejection.body_text()),
    };
    let store = app.store.clone();
    // the log append syncs to disk, so keep it off the async workers
    match tokio::task::spawn_blocking(move || store.submit(submission)).await {
        Ok(Ok(annotation)) => {
            tracing::info!(annotation = %annotation.annotation_id, tuple = %annotation.tuple_id, "annotation stored");
            (StatusCode::CREATED, Json(annotation)).into_response()
        }
        Ok(Err(e)) => e.into_response(),
        Err(join) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", join),
    }
}

async fn progress(State(app): State<AppState>) -> Response {
    Json(app.store.progress()).into_response()
}

fn authorized(headers: &HeaderMap, token: &str) -> bool {
    let Some(value) = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()) else {
        return false;
    };
    let Some(given) = value.strip_prefix("Bearer ") else {
        return false;
    };
    // length-independent comparison
    given.len() == token.len() && given.bytes().zip(token.bytes()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
}

async fn export(State(app): State<AppState>, headers: HeaderMap) -> Response {
    if app.admin_token.is_empty() || !authorized(&headers, &app.admin_token) {
        return error(StatusCode::UNAUTHORIZED, "unauthorized", "a valid admin bearer token is required");
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], app.store.export()).into_response()
}

async fn instructions(State(app): State<AppState>) -> Response {
    let text = format!(
        "Annotation guidelines\n\
         \n\
         Each task shows four statements. Pick the statement that is the most\n\
         negatively biased against a gender, and the statement that is the least\n\
         biased. The two picks must be different statements.\n\
         \n\
         Judge the statement itself, not whether you agree with it. Some of the\n\
         statements are offensive. You may stop at any time, and each person can\n\
         complete at most {cap} tasks.\n\
         \n\
         Use the optional feedback box for anything unclear about a task. A task\n\
         is held for you for {ttl} minutes; after that it may go to someone else.\n",
        cap = app.store.annotator_cap(),
        ttl = app.store.policy().reservation_ttl.num_minutes(),
    );
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response()
}
