//! Uniform completion gateway over text and vision providers.
//!
//! Pipeline stages never talk to a provider directly: they name a role, a
//! template, and bindings, and the gateway renders the prompt, enforces the
//! image contract, retries transport failures, extracts the summary, and
//! records tokens in the cost ledger. Every call yields an [`LlmExchange`]
//! suitable for the audit transcript.

pub mod ledger;
pub mod parse;
pub mod provider;
pub mod template;

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ledger::{CostLedger, LedgerReport, Money, UnitPrices};
pub use parse::parse_summary;
pub use provider::{
    HallucinatingProvider, PipelineMock, Provider, ProviderError, ProviderRequest, ReplayProvider,
    ScriptedProvider,
};
pub use template::{PromptCatalog, PromptTemplate, TemplateError};

/// The three provider roles the pipeline binds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Vision model for map interpretation.
    MapVlm,
    /// Lightweight text model for SSID interpretation.
    SsidLlm,
    /// Mid-tier text model for fusion, calibration, and journaling.
    MainLlm,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::MapVlm, Role::SsidLlm, Role::MainLlm];

    pub fn as_str(&self) -> &'static str {
        match self {
            Role::MapVlm => "map_vlm",
            Role::SsidLlm => "ssid_llm",
            Role::MainLlm => "main_llm",
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("role {0} is not bound to a provider")]
    UnboundRole(&'static str),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("template {template} image contract violated: expects_image={expects}, image supplied={supplied}")]
    ImageMismatch {
        template: String,
        expects: bool,
        supplied: bool,
    },
    #[error("provider unavailable after {attempts} attempts: {detail}")]
    ProviderUnavailable { attempts: u32, detail: String },
    #[error("no fixture for digest {0}")]
    MissingFixture(String),
    #[error("provider rejected request: {0}")]
    Rejected(String),
}

/// One completed provider call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    /// Request digest; doubles as the replay fixture name.
    pub id: String,
    pub template: String,
    pub role: Role,
    pub model: String,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_digest: Option<String>,
    pub response: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub hallucinated: bool,
    pub latency_ms: u64,
    pub retries: u32,
}

/// One role's provider binding.
pub struct ProviderBinding {
    pub model: String,
    pub provider: Box<dyn Provider>,
    /// True for live providers: report measured latency and true token
    /// counts. Mocks and replay report zero latency and estimated tokens so
    /// transcripts stay byte-stable.
    pub live: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 2,
            initial_backoff_ms: 1000,
        }
    }
}

/// Counting semaphore bounding in-flight provider calls.
struct InFlight {
    limit: usize,
    state: Mutex<usize>,
    cv: Condvar,
}

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight {
            limit: limit.max(1),
            state: Mutex::new(0),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.limit {
            in_flight = self.cv.wait(in_flight).unwrap();
        }
        *in_flight += 1;
    }

    fn release(&self) {
        *self.state.lock().unwrap() -= 1;
        self.cv.notify_one();
    }
}

/// Estimated token count for providers that do not report true counts:
/// ceil(characters / 4).
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// The completion gateway. Shareable across worker threads.
pub struct Gateway {
    bindings: HashMap<Role, ProviderBinding>,
    catalog: PromptCatalog,
    ledger: Mutex<CostLedger>,
    retry: RetryPolicy,
    in_flight: InFlight,
}

impl Gateway {
    pub fn new(catalog: PromptCatalog, retry: RetryPolicy, max_in_flight: usize) -> Self {
        Gateway {
            bindings: HashMap::new(),
            catalog,
            ledger: Mutex::new(CostLedger::new()),
            retry,
            in_flight: InFlight::new(max_in_flight),
        }
    }

    pub fn bind(&mut self, role: Role, binding: ProviderBinding) {
        self.bindings.insert(role, binding);
    }

    pub fn set_price(&self, model: &str, prices: UnitPrices) {
        self.ledger.lock().unwrap().set_price(model, prices);
    }

    pub fn catalog(&self) -> &PromptCatalog {
        &self.catalog
    }

    pub fn model_for(&self, role: Role) -> Option<&str> {
        self.bindings.get(&role).map(|b| b.model.as_str())
    }

    /// Snapshot of the ledger for reports.
    pub fn ledger(&self) -> CostLedger {
        self.ledger.lock().unwrap().clone()
    }

    /// Renders the template with `bindings` and completes it through the
    /// role's provider, retrying transport failures with exponential
    /// backoff. The returned exchange is already recorded in the ledger.
    pub fn complete(
        &self,
        role: Role,
        template_id: &str,
        bindings: &HashMap<&str, String>,
        image: Option<&[u8]>,
    ) -> Result<LlmExchange, GatewayError> {
        let binding = self
            .bindings
            .get(&role)
            .ok_or(GatewayError::UnboundRole(role.as_str()))?;
        let template = self.catalog.get(template_id)?;
        if template.expects_image != image.is_some() {
            return Err(GatewayError::ImageMismatch {
                template: template_id.to_string(),
                expects: template.expects_image,
                supplied: image.is_some(),
            });
        }
        let prompt = template.render(bindings)?;
        let request = ProviderRequest {
            template_id,
            model: &binding.model,
            prompt: &prompt,
            image,
        };

        self.in_flight.acquire();
        let started = Instant::now();
        let mut retries = 0u32;
        let result = loop {
            match binding.provider.complete(&request) {
                Ok(resp) => break Ok(resp),
                Err(ProviderError::Transport(detail)) => {
                    if retries >= self.retry.max_retries {
                        break Err(GatewayError::ProviderUnavailable {
                            attempts: retries + 1,
                            detail,
                        });
                    }
                    std::thread::sleep(std::time::Duration::from_millis(
                        self.retry.initial_backoff_ms << retries,
                    ));
                    retries += 1;
                }
                Err(ProviderError::MissingFixture(digest)) => {
                    break Err(GatewayError::MissingFixture(digest))
                }
                Err(ProviderError::Rejected(detail)) => break Err(GatewayError::Rejected(detail)),
            }
        };
        self.in_flight.release();
        let response = result?;

        let latency_ms = if binding.live {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        let input_tokens = response.input_tokens.unwrap_or_else(|| {
            estimate_tokens(&prompt) + image.map_or(0, |i| i.len() as u64 / 1024)
        });
        let output_tokens = response
            .output_tokens
            .unwrap_or_else(|| estimate_tokens(&response.text));
        let summary = parse_summary(&response.text);
        let exchange = LlmExchange {
            id: provider::request_digest(&binding.model, &prompt, image),
            template: template_id.to_string(),
            role,
            model: binding.model.clone(),
            prompt,
            image_digest: image.map(provider::sha256_hex),
            response: response.text,
            hallucinated: summary.is_none(),
            summary,
            input_tokens,
            output_tokens,
            latency_ms,
            retries,
        };
        self.ledger.lock().unwrap().record(
            template_id,
            &binding.model,
            input_tokens,
            output_tokens,
        );
        Ok(exchange)
    }
}

/// Hallucination rate over a set of exchanges.
pub fn hallucination_rate(exchanges: &[LlmExchange]) -> f64 {
    if exchanges.is_empty() {
        return 0.0;
    }
    exchanges.iter().filter(|e| e.hallucinated).count() as f64 / exchanges.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gateway_with(provider: impl Provider + 'static) -> Gateway {
        let mut gw = Gateway::new(
            PromptCatalog::default_catalog(),
            RetryPolicy {
                max_retries: 2,
                initial_backoff_ms: 1,
            },
            4,
        );
        gw.bind(
            Role::SsidLlm,
            ProviderBinding {
                model: "mock-1".into(),
                provider: Box::new(provider),
                live: false,
            },
        );
        gw
    }

    fn ssid_bindings(list: &str) -> HashMap<&'static str, String> {
        let mut b = HashMap::new();
        b.insert("ssids", list.to_string());
        b
    }

    #[test]
    fn complete_records_ledger_and_parses_summary() {
        let gw = gateway_with(PipelineMock);
        let exchange = gw
            .complete(
                Role::SsidLlm,
                "ssid_context",
                &ssid_bindings("Starbucks-Guest"),
                None,
            )
            .unwrap();
        assert_eq!(
            exchange.summary.as_deref(),
            Some("likely near or inside Starbucks-Guest")
        );
        assert!(!exchange.hallucinated);
        assert_eq!(exchange.latency_ms, 0);
        let ledger = gw.ledger();
        let usage = ledger.usage("ssid_context").unwrap();
        assert_eq!(usage.calls, 1);
        assert_eq!(usage.input_tokens, estimate_tokens(&exchange.prompt));
        assert_eq!(usage.output_tokens, estimate_tokens(&exchange.response));
    }

    #[test]
    fn image_contract_enforced_both_ways() {
        let gw = gateway_with(PipelineMock);
        let err = gw
            .complete(
                Role::SsidLlm,
                "ssid_context",
                &ssid_bindings("x"),
                Some(b"img"),
            )
            .unwrap_err();
        assert!(matches!(err, GatewayError::ImageMismatch { .. }));
        // map_context demands an image.
        let err = gw
            .complete(Role::SsidLlm, "map_context", &HashMap::new(), None)
            .unwrap_err();
        assert!(matches!(err, GatewayError::ImageMismatch { .. }));
    }

    #[test]
    fn unbound_role_is_an_error() {
        let gw = gateway_with(PipelineMock);
        let err = gw
            .complete(Role::MainLlm, "journal_cleaning", &HashMap::new(), None)
            .unwrap_err();
        assert!(matches!(err, GatewayError::UnboundRole("main_llm")));
    }

    struct FailingThenOk {
        failures: std::sync::atomic::AtomicU32,
    }

    impl Provider for FailingThenOk {
        fn complete(
            &self,
            _: &ProviderRequest,
        ) -> Result<provider::ProviderResponse, ProviderError> {
            use std::sync::atomic::Ordering;
            if self.failures.fetch_sub(1, Ordering::SeqCst) > 0 {
                Err(ProviderError::Transport("connection reset".into()))
            } else {
                Ok(provider::ProviderResponse {
                    text: "summary: ok".into(),
                    input_tokens: None,
                    output_tokens: None,
                })
            }
        }
    }

    #[test]
    fn transport_failures_are_retried() {
        let gw = gateway_with(FailingThenOk {
            failures: std::sync::atomic::AtomicU32::new(2),
        });
        let exchange = gw
            .complete(Role::SsidLlm, "ssid_context", &ssid_bindings("x"), None)
            .unwrap();
        assert_eq!(exchange.retries, 2);
        assert_eq!(exchange.summary.as_deref(), Some("ok"));
        // One exchange, one ledger row.
        assert_eq!(gw.ledger().usage("ssid_context").unwrap().calls, 1);
    }

    #[test]
    fn retries_are_bounded() {
        let gw = gateway_with(FailingThenOk {
            failures: std::sync::atomic::AtomicU32::new(100),
        });
        let err = gw
            .complete(Role::SsidLlm, "ssid_context", &ssid_bindings("x"), None)
            .unwrap_err();
        match err {
            GatewayError::ProviderUnavailable { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("expected ProviderUnavailable, got {other}"),
        }
    }

    #[test]
    fn hallucination_rate_counts_flags() {
        let mk = |hallucinated: bool| LlmExchange {
            id: "x".into(),
            template: "t".into(),
            role: Role::MainLlm,
            model: "m".into(),
            prompt: String::new(),
            image_digest: None,
            response: String::new(),
            summary: (!hallucinated).then(|| "s".to_string()),
            input_tokens: 0,
            output_tokens: 0,
            hallucinated,
            latency_ms: 0,
            retries: 0,
        };
        assert_eq!(hallucination_rate(&[]), 0.0);
        let set: Vec<LlmExchange> = (0..10).map(|i| mk(i == 0)).collect();
        assert!((hallucination_rate(&set) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }

    /// Provider that records how many calls overlap in time.
    struct ConcurrencyProbe {
        current: std::sync::Arc<std::sync::atomic::AtomicUsize>,
        peak: std::sync::Arc<std::sync::atomic::AtomicUsize>,
    }

    impl Provider for ConcurrencyProbe {
        fn complete(
            &self,
            _: &ProviderRequest,
        ) -> Result<provider::ProviderResponse, ProviderError> {
            use std::sync::atomic::Ordering;
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(std::time::Duration::from_millis(10));
            self.current.fetch_sub(1, Ordering::SeqCst);
            Ok(provider::ProviderResponse {
                text: "summary: ok".into(),
                input_tokens: None,
                output_tokens: None,
            })
        }
    }

    #[test]
    fn in_flight_calls_respect_the_bound() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let peak = Arc::new(AtomicUsize::new(0));
        let mut gw = Gateway::new(PromptCatalog::default_catalog(), RetryPolicy::default(), 2);
        gw.bind(
            Role::SsidLlm,
            ProviderBinding {
                model: "mock-1".into(),
                provider: Box::new(ConcurrencyProbe {
                    current: Arc::new(AtomicUsize::new(0)),
                    peak: peak.clone(),
                }),
                live: false,
            },
        );
        let gw = &gw;
        std::thread::scope(|scope| {
            for i in 0..8 {
                scope.spawn(move || {
                    let mut b = HashMap::new();
                    b.insert("ssids", format!("net-{i}"));
                    gw.complete(Role::SsidLlm, "ssid_context", &b, None)
                        .unwrap();
                });
            }
        });
        assert_eq!(gw.ledger().usage("ssid_context").unwrap().calls, 8);
        let peak = peak.load(Ordering::SeqCst);
        assert!(peak <= 2, "peak concurrency {peak} exceeded the bound of 2");
        assert!(peak >= 1);
    }
}
