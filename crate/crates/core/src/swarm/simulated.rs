//! Deterministic inference test double. Agent probabilities are the hidden
//! truth perturbed in logit space by a persona bias and Gaussian noise.

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::provider::{Completion, CompletionRequest, InferenceProvider, ProviderError, ProviderKind};
use crate::domain::Probability;

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Stable 64-bit seed from a base seed and any number of string parts.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// The noisy probability a simulated agent reports, plus its confidence.
pub fn simulated_draw(
    seed: u64,
    prompt: &str,
    ground_truth: Probability,
    noise_sigma: f64,
    bias: f64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[prompt]));
    let z: f64 = rng.sample(StandardNormal);
    let confidence = 1.0 - 0.7 * rng.random::<f64>();
    let p = if noise_sigma == 0.0 && bias == 0.0 {
        ground_truth.value()
    } else {
        logistic(logit(ground_truth.value()) + bias + noise_sigma * z)
    };
    (p, confidence)
}

/// Renders a well-formed agent response, deterministic in `(seed, prompt)`.
pub fn simulated_provider_complete(
    seed: u64,
    prompt: &str,
    ground_truth: Probability,
    noise_sigma: f64,
    bias: f64,
) -> String {
    assert!(noise_sigma >= 0.0, "noise_sigma must be non-negative");
    let (p, confidence) = simulated_draw(seed, prompt, ground_truth, noise_sigma, bias);
    format!(
        "Weighing base rates against the specifics of the question.\n\
         The evidence is mixed and I have accounted for my usual blind spots.\n\n\
         PROBABILITY: {p}\n\
         CONFIDENCE: {confidence}\n\
         REASONING: Simulated analysis anchored on the base rate, adjusted for \
         question-specific evidence.\nUncertainty stems from limited information.\n"
    )
}

/// Where the simulated provider gets each market's hidden truth.
#[derive(Debug, Clone, Default)]
pub struct TruthTable {
    pub known: HashMap<String, f64>,
}

impl TruthTable {
    /// Known truth, or a pseudo-random value in `[0.05, 0.95]` keyed by market.
    pub fn truth_for(&self, seed: u64, market_id: &str) -> Probability {
        if let Some(p) = self.known.get(market_id) {
            return Probability::saturating(*p);
        }
        let u = (derive_seed(seed, &["truth", market_id]) >> 11) as f64 / (1u64 << 53) as f64;
        Probability::saturating(0.05 + 0.9 * u)
    }
}

/// Fault injection knobs for tests.
#[derive(Debug, Default)]
pub struct FaultPlan {
    /// These personas always answer with unparseable text.
    pub unparseable_personas: HashSet<String>,
    /// Every call for these markets fails at the transport layer.
    pub failing_markets: HashSet<String>,
    /// The first call for these personas fails at the transport layer.
    pub flaky_once_personas: HashSet<String>,
    flaked: Mutex<HashSet<(String, String)>>,
}

impl FaultPlan {
    pub fn new() -> Self {
        Self::default()
    }
}

pub struct SimulatedProvider {
    id: String,
    seed: u64,
    noise_sigma: f64,
    bias_sigma: f64,
    truth: TruthTable,
    latency: Duration,
    max_in_flight: usize,
    timeout: Duration,
    faults: FaultPlan,
    calls: AtomicUsize,
}

impl SimulatedProvider {
    pub fn new(seed: u64, noise_sigma: f64, bias_sigma: f64) -> Self {
        Self {
            id: "simulated".into(),
            seed,
            noise_sigma,
            bias_sigma,
            truth: TruthTable::default(),
            latency: Duration::ZERO,
            max_in_flight: 64,
            timeout: Duration::from_secs(30),
            faults: FaultPlan::default(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn with_truth(mut self, truth: TruthTable) -> Self {
        self.truth = truth;
        self
    }

    pub fn with_faults(mut self, faults: FaultPlan) -> Self {
        self.faults = faults;
        self
    }

    pub fn with_max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n.max(1);
        self
    }

    pub fn with_timeout(mut self, t: Duration) -> Self {
        self.timeout = t;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Per-persona logit bias, drawn once from `N(0, bias_sigma^2)`.
    pub fn persona_bias(&self, persona_id: &str) -> f64 {
        if self.bias_sigma == 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &["bias", persona_id]));
        let z: f64 = rng.sample(StandardNormal);
        self.bias_sigma * z
    }

    pub fn truth_for(&self, market_id: &str) -> Probability {
        self.truth.truth_for(self.seed, market_id)
    }
}

#[async_trait]
impl InferenceProvider for SimulatedProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Simulated
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    fn timeout(&self) -> Duration {
        self.timeout
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        if self.faults.failing_markets.contains(&request.market_id) {
            return Err(ProviderError::Transport {
                provider: self.id.clone(),
                detail: "injected market failure".into(),
            });
        }
        if self.faults.flaky_once_personas.contains(&request.persona_id) {
            let key = (request.persona_id.clone(), request.market_id.clone());
            if self.faults.flaked.lock().insert(key) {
                return Err(ProviderError::Transport {
                    provider: self.id.clone(),
                    detail: "injected transient failure".into(),
                });
            }
        }
        let text = if self.faults.unparseable_personas.contains(&request.persona_id) {
            "I would rather not commit to a number.".to_owned()
        } else {
            simulated_provider_complete(
                self.seed,
                request.prompt.as_str(),
                self.truth_for(&request.market_id),
                self.noise_sigma,
                self.persona_bias(&request.persona_id),
            )
        };
        Ok(Completion {
            text,
            provider_id: self.id.clone(),
            latency_ms: self.latency.as_secs_f64() * 1e3,
        })
    }
}
