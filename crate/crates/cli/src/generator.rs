//! HTTP text generator.
//!
//! Sends `POST <endpoint>` with body `{"prompt": "..."}` and an optional
//! `Authorization: Bearer <credential>` header, and expects `{"text": "..."}`
//! back. Anything vendor-specific belongs in a proxy behind that endpoint.

use std::time::Duration;

use bws_core::prompts::{ClientConfig, TextGenerator, TransportError};
use serde::{Deserialize, Serialize};

pub struct HttpGenerator {
    client: reqwest::blocking::Client,
    endpoint: String,
    credential: Option<String>,
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
}

impl HttpGenerator {
    pub fn new(config: &ClientConfig) -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpGenerator { client, endpoint: config.endpoint.clone(), credential: config.credential.clone() })
    }
}

impl TextGenerator for HttpGenerator {
    fn generate(&self, prompt: &str) -> Result<String, TransportError> {
        let mut request = self.client.post(&self.endpoint).json(&GenerateRequest { prompt });
        if let Some(token) = &self.credential {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| TransportError(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(TransportError(format!("generator returned {status}")));
        }
        let body: GenerateResponse = response.json().map_err(|e| TransportError(format!("bad generator response: {e}")))?;
        Ok(body.text)
    }
}
