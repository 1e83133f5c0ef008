use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Semaphore;

use super::prompt::PromptText;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteHttp,
    Simulated,
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub persona_id: String,
    pub market_id: String,
    pub prompt: PromptText,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub provider_id: String,
    pub latency_ms: f64,
}

/// Transport-level failures. Parse failures are handled by the caller.
#[derive(Debug, Clone, Error)]
pub enum ProviderError {
    #[error("provider {provider} timed out")]
    Timeout { provider: String },
    #[error("provider {provider} transport error: {detail}")]
    Transport { provider: String, detail: String },
}

/// One inference backend. Implementations must be safe to call concurrently.
#[async_trait]
pub trait InferenceProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn kind(&self) -> ProviderKind;
    fn max_in_flight(&self) -> usize;
    fn timeout(&self) -> Duration;
    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError>;
}

/// HTTP adapter: `POST {url}` with `{model, prompt, max_tokens}`, expecting
/// `{text}` back.
pub struct RemoteHttpProvider {
    id: String,
    url: String,
    api_key: Option<String>,
    model: String,
    max_tokens: u32,
    max_in_flight: usize,
    timeout: Duration,
    client: reqwest::Client,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct RemoteResponse {
    text: String,
}

impl RemoteHttpProvider {
    pub fn new(
        id: impl Into<String>,
        url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        max_in_flight: usize,
        timeout: Duration,
    ) -> Self {
        Self {
            id: id.into(),
            url: url.into(),
            api_key,
            model: model.into(),
            max_tokens: 1024,
            max_in_flight: max_in_flight.max(1),
            timeout,
            client: reqwest::Client::new(),
        }
    }

    /// Reads `PROVIDER_<NAME>_URL` and `PROVIDER_<NAME>_KEY` (and optionally
    /// `PROVIDER_<NAME>_MODEL`) from the environment.
    pub fn from_env(name: &str, max_in_flight: usize, timeout: Duration) -> Option<Self> {
        let upper = name.to_ascii_uppercase();
        let url = std::env::var(format!("PROVIDER_{upper}_URL")).ok()?;
        let key = std::env::var(format!("PROVIDER_{upper}_KEY")).ok();
        let model =
            std::env::var(format!("PROVIDER_{upper}_MODEL")).unwrap_or_else(|_| name.to_owned());
        Some(Self::new(name, url, key, model, max_in_flight, timeout))
    }
}

#[async_trait]
impl InferenceProvider for RemoteHttpProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::RemoteHttp
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn timeout(&self) -> Duration {
        self.timeout
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let started = Instant::now();
        let transport = |detail: String| ProviderError::Transport {
            provider: self.id.clone(),
            detail,
        };
        let mut req = self
            .client
            .post(&self.url)
            .timeout(self.timeout)
            .json(&RemoteRequest {
                model: &self.model,
                prompt: request.prompt.as_str(),
                max_tokens: self.max_tokens,
            });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout {
                    provider: self.id.clone(),
                }
            } else {
                transport(e.to_string())
            }
        })?;
        if !resp.status().is_success() {
            return Err(transport(format!("HTTP {}", resp.status())));
        }
        let body: RemoteResponse = resp.json().await.map_err(|e| transport(e.to_string()))?;
        Ok(Completion {
            text: body.text,
            provider_id: self.id.clone(),
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
        })
    }
}

/// Spreads personas across several providers. Each persona always maps to the
/// same provider; each provider keeps its own in-flight bound.
pub struct ProviderRouter {
    id: String,
    routes: Vec<(Arc<dyn InferenceProvider>, Arc<Semaphore>)>,
}

impl ProviderRouter {
    pub fn new(providers: Vec<Arc<dyn InferenceProvider>>) -> Self {
        assert!(!providers.is_empty(), "router needs at least one provider");
        let id = providers
            .iter()
            .map(|p| p.provider_id())
            .collect::<Vec<_>>()
            .join("+");
        let routes = providers
            .into_iter()
            .map(|p| {
                let sem = Arc::new(Semaphore::new(p.max_in_flight()));
                (p, sem)
            })
            .collect();
        Self { id, routes }
    }

    fn route(&self, persona_id: &str) -> &(Arc<dyn InferenceProvider>, Arc<Semaphore>) {
        let h = Sha256::digest(persona_id.as_bytes());
        let idx = u64::from_le_bytes(h[..8].try_into().unwrap()) as usize % self.routes.len();
        &self.routes[idx]
    }
}

#[async_trait]
impl InferenceProvider for ProviderRouter {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> ProviderKind {
        self.routes[0].0.kind()
    }

    fn max_in_flight(&self) -> usize {
        self.routes.iter().map(|(p, _)| p.max_in_flight()).sum()
    }

    fn timeout(&self) -> Duration {
        self.routes.iter().map(|(p, _)| p.timeout()).max().unwrap_or_default()
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let (provider, sem) = self.route(&request.persona_id);
        let _permit = sem.acquire().await.expect("router semaphore closed");
        provider.complete(request).await
    }
}
