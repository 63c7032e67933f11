//! Completion providers: live HTTP, replay fixtures, and deterministic mocks.
//!
//! All providers answer the same request shape and are interchangeable
//! behind a role binding. Mocks and replay make the whole pipeline a pure
//! function of its inputs, which the test suites and the determinism checks
//! rely on.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// One completion request as a provider sees it.
pub struct ProviderRequest<'a> {
    pub template_id: &'a str,
    pub model: &'a str,
    pub prompt: &'a str,
    pub image: Option<&'a [u8]>,
}

/// Raw provider answer. Token counts are `None` when the provider cannot
/// report true counts (mocks, replay); the gateway then applies its
/// character-based estimate.
#[derive(Debug)]
pub struct ProviderResponse {
    pub text: String,
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    /// Retryable transport-level failure.
    #[error("transport: {0}")]
    Transport(String),
    #[error("no fixture for digest {0}")]
    MissingFixture(String),
    #[error("provider rejected request: {0}")]
    Rejected(String),
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stable digest of a request: model id, prompt text, and image digest. The
/// model id is included so fixture sets for different models can coexist.
pub fn request_digest(model: &str, prompt: &str, image: Option<&[u8]>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    hasher.update([0u8]);
    hasher.update(prompt.as_bytes());
    hasher.update([0u8]);
    if let Some(image) = image {
        hasher.update(sha256_hex(image).as_bytes());
    }
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

// ---------------------------------------------------------------------------
// Replay fixtures

/// Resolves responses from one UTF-8 file per request digest.
pub struct ReplayProvider {
    dir: std::path::PathBuf,
}

impl ReplayProvider {
    pub fn new(dir: impl Into<std::path::PathBuf>) -> Self {
        ReplayProvider { dir: dir.into() }
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let digest = request_digest(request.model, request.prompt, request.image);
        let bare = self.dir.join(&digest);
        let txt = self.dir.join(format!("{digest}.txt"));
        let path = if txt.is_file() {
            txt
        } else if bare.is_file() {
            bare
        } else {
            return Err(ProviderError::MissingFixture(digest));
        };
        let text =
            std::fs::read_to_string(path).map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(ProviderResponse {
            text,
            input_tokens: None,
            output_tokens: None,
        })
    }
}

/// Records live responses as replay fixtures (one file per digest).
pub fn record_fixture(
    dir: &std::path::Path,
    model: &str,
    prompt: &str,
    image: Option<&[u8]>,
    response: &str,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let digest = request_digest(model, prompt, image);
    std::fs::write(dir.join(format!("{digest}.txt")), response)
}

// ---------------------------------------------------------------------------
// Scripted mock (tests and fault injection)

type FallbackFn = dyn Fn(&ProviderRequest) -> String + Send + Sync;

/// Mock with explicit scripts: per-template response queues and per-digest
/// canned responses, with an optional fallback closure.
#[derive(Default)]
pub struct ScriptedProvider {
    by_digest: HashMap<String, String>,
    queues: Mutex<HashMap<String, VecDeque<String>>>,
    fallback: Option<Box<FallbackFn>>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn respond_to_digest(mut self, digest: &str, response: &str) -> Self {
        self.by_digest
            .insert(digest.to_string(), response.to_string());
        self
    }

    /// Queues a response for the next call using `template_id`.
    pub fn push_response(&self, template_id: &str, response: &str) {
        self.queues
            .lock()
            .unwrap()
            .entry(template_id.to_string())
            .or_default()
            .push_back(response.to_string());
    }

    pub fn with_fallback(
        mut self,
        f: impl Fn(&ProviderRequest) -> String + Send + Sync + 'static,
    ) -> Self {
        self.fallback = Some(Box::new(f));
        self
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        if let Some(queued) = self
            .queues
            .lock()
            .unwrap()
            .get_mut(request.template_id)
            .and_then(VecDeque::pop_front)
        {
            return Ok(ProviderResponse {
                text: queued,
                input_tokens: None,
                output_tokens: None,
            });
        }
        let digest = request_digest(request.model, request.prompt, request.image);
        if let Some(text) = self.by_digest.get(&digest) {
            return Ok(ProviderResponse {
                text: text.clone(),
                input_tokens: None,
                output_tokens: None,
            });
        }
        if let Some(f) = &self.fallback {
            return Ok(ProviderResponse {
                text: f(request),
                input_tokens: None,
                output_tokens: None,
            });
        }
        Err(ProviderError::MissingFixture(digest))
    }
}

// ---------------------------------------------------------------------------
// Built-in pipeline mock

/// Deterministic offline annotator covering every pipeline template.
///
/// Responses are pure functions of the request, so runs back themselves.
/// The mock reads the same payload markers the templates render (`SSIDs:`,
/// `Candidates:`, bracketed log lines) and produces small, well-formed
/// summaries, which makes offline end-to-end runs exercise the real parsing
/// and fallback machinery.
pub struct PipelineMock;

const MAP_PALETTE: [&str; 6] = [
    "a dense residential block with small shops along the street",
    "a waterfront area with a promenade and ferry pier",
    "a commercial district with office towers and a shopping mall",
    "a hillside area crossed by hiking trails and a country park road",
    "a quiet suburban neighborhood near a school and playground",
    "a transit area around a major road and a railway station",
];

fn line_payload<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|l| l.strip_prefix(marker))
        .map(str::trim)
}

fn looks_like_time(label: &str) -> bool {
    label.len() == 5
        && label.bytes().enumerate().all(|(i, b)| {
            if i == 2 {
                b == b':'
            } else {
                b.is_ascii_digit()
            }
        })
}

fn bracketed_lines(prompt: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for line in prompt.lines() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('[') {
            if let Some((time, tail)) = rest.split_once("](") {
                if let Some(inner) = tail.strip_suffix(')') {
                    // Skip the instruction's own [time](...) placeholder lines.
                    if looks_like_time(time) {
                        out.push((time.to_string(), inner.to_string()));
                    }
                }
            }
        }
    }
    out
}

/// Splits a comma-joined context-log line into `[time](inner)` entries.
fn log_entries(prompt: &str) -> Vec<(String, String, String)> {
    let mut entries = Vec::new();
    for line in prompt.lines() {
        let line = line.trim();
        if !line.starts_with('[') {
            continue;
        }
        for piece in line.split(", [") {
            let piece = piece.trim_start_matches('[').trim_end_matches(',');
            if let Some((time, tail)) = piece.split_once("](") {
                let inner = tail.strip_suffix(')').unwrap_or(tail);
                let (motion, location) = match inner.split_once(", ") {
                    Some((m, l)) => (m.to_string(), l.to_string()),
                    None => (inner.to_string(), String::new()),
                };
                entries.push((time.to_string(), motion, location));
            }
        }
    }
    entries
}

fn wrap(summary: &str) -> String {
    format!("reasoning: deterministic offline annotator\nsummary: {summary}")
}

impl Provider for PipelineMock {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        use super::template::ids;
        let summary = match request.template_id {
            ids::MAP_CONTEXT => {
                let digest = request.image.map(sha256_hex).unwrap_or_default();
                let pick = digest.as_bytes().first().copied().unwrap_or(0) as usize;
                MAP_PALETTE[pick % MAP_PALETTE.len()].to_string()
            }
            ids::SSID_CONTEXT => {
                let list = line_payload(request.prompt, "SSIDs:").unwrap_or("");
                match list.split(", ").next().filter(|s| !s.is_empty()) {
                    Some(first) => format!("likely near or inside {first}"),
                    None => "the SSIDs are not informative".to_string(),
                }
            }
            ids::LOCATION_FUSION => {
                let mut lines = Vec::new();
                for (time, inner) in bracketed_lines(request.prompt) {
                    // Most detailed wins: keep the longer of the two sides.
                    let fused = match inner.split_once(", ") {
                        Some((map, ssid)) => {
                            let map = map.trim();
                            let ssid = ssid.trim();
                            let best = if ssid.len() > map.len() && ssid != "unknown" {
                                ssid
                            } else if map != "unknown" {
                                map
                            } else {
                                ssid
                            };
                            best.to_string()
                        }
                        None => inner,
                    };
                    lines.push(format!("[{time}]({fused})"));
                }
                format!("\n{}", lines.join("\n"))
            }
            ids::MOTION_CALIBRATION => {
                let candidates: Vec<&str> = line_payload(request.prompt, "Candidates:")
                    .unwrap_or("")
                    .split(" | ")
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .collect();
                let location = line_payload(request.prompt, "Location:")
                    .unwrap_or("")
                    .to_lowercase();
                let keyword_match = |cand: &str| -> bool {
                    let c = cand.to_lowercase();
                    let groups: [(&str, &[&str]); 3] = [
                        (
                            "vehicle",
                            &[
                                "highway", "road", "ferry", "rail", "sea", "harbour", "harbor",
                                "transit",
                            ],
                        ),
                        (
                            "walking",
                            &["trail", "park", "beach", "street", "promenade", "hiking"],
                        ),
                        (
                            "stationary",
                            &[
                                "restaurant",
                                "cafe",
                                "home",
                                "residential",
                                "library",
                                "office",
                                "mall",
                            ],
                        ),
                    ];
                    groups.iter().any(|(label, words)| {
                        c.contains(label) && words.iter().any(|w| location.contains(w))
                    })
                };
                candidates
                    .iter()
                    .find(|c| keyword_match(c))
                    .or(candidates.first())
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| "stationary".to_string())
            }
            ids::JOURNAL_GENERATION => {
                let entries = log_entries(request.prompt);
                let mut sentences: Vec<String> = Vec::new();
                let mut last: Option<(String, String)> = None;
                for (time, motion, location) in entries {
                    let pair = (motion.clone(), location.clone());
                    if last.as_ref() == Some(&pair) {
                        continue;
                    }
                    last = Some(pair);
                    if location.is_empty() {
                        sentences.push(format!("Around {time}, the user was {motion}."));
                    } else {
                        sentences.push(format!(
                            "Around {time}, the user was {motion} ({location})."
                        ));
                    }
                }
                if sentences.is_empty() {
                    "No activity could be inferred from the logs.".to_string()
                } else {
                    sentences.join(" ")
                }
            }
            ids::JOURNAL_CLEANING => {
                let text = request.prompt;
                let draft = text
                    .split_once("Draft: ")
                    .map(|(_, rest)| rest)
                    .and_then(|rest| rest.split("\n\nRemove any subjective").next())
                    .unwrap_or("")
                    .trim();
                draft.to_string()
            }
            ids::BASELINE_JOURNAL => {
                let windows = request
                    .prompt
                    .lines()
                    .filter(|l| l.starts_with("t="))
                    .count();
                let mut ssids: Vec<String> = Vec::new();
                for line in request.prompt.lines() {
                    if let Some(pos) = line.find("ssids=[") {
                        let rest = &line[pos + 7..];
                        if let Some(end) = rest.find(']') {
                            for s in rest[..end].split(", ") {
                                if !s.is_empty() && !ssids.iter().any(|t| t == s) {
                                    ssids.push(s.to_string());
                                }
                            }
                        }
                    }
                }
                if ssids.is_empty() {
                    format!("Raw sensor log of {windows} windows; the user alternated movement and rest.")
                } else {
                    format!(
                        "Raw sensor log of {windows} windows; networks seen: {}. The user alternated movement and rest.",
                        ssids.join(", ")
                    )
                }
            }
            other => format!("no canned behavior for template {other}"),
        };
        Ok(ProviderResponse {
            text: wrap(&summary),
            input_tokens: None,
            output_tokens: None,
        })
    }
}

// ---------------------------------------------------------------------------
// Seeded hallucination wrapper

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Wraps a provider and replaces a seeded fraction of responses with text
/// that lacks the summary section. Call order drives the draw, so runs are
/// reproducible when calls are sequential.
pub struct HallucinatingProvider<P> {
    inner: P,
    rate: f64,
    seed: u64,
    counter: AtomicU64,
}

impl<P> HallucinatingProvider<P> {
    pub fn new(inner: P, rate: f64, seed: u64) -> Self {
        HallucinatingProvider {
            inner,
            rate,
            seed,
            counter: AtomicU64::new(0),
        }
    }
}

impl<P: Provider> Provider for HallucinatingProvider<P> {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let idx = self.counter.fetch_add(1, Ordering::SeqCst);
        let draw = splitmix64(self.seed ^ idx.wrapping_mul(0x9E37_79B9)) as f64 / u64::MAX as f64;
        if draw < self.rate {
            return Ok(ProviderResponse {
                text: "I cannot help with that.".to_string(),
                input_tokens: None,
                output_tokens: None,
            });
        }
        self.inner.complete(request)
    }
}

// ---------------------------------------------------------------------------
// Live HTTP provider

/// Chat-completions-style HTTP provider. Sends the prompt (and optionally a
/// base64 data-URI image) to `endpoint` and reads the first choice's
/// content plus reported token usage.
pub struct LiveProvider {
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl LiveProvider {
    pub fn new(endpoint: String, api_key: Option<String>) -> Self {
        LiveProvider {
            endpoint,
            api_key,
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl Provider for LiveProvider {
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        use base64::Engine;
        let content = match request.image {
            Some(image) => {
                let encoded = base64::engine::general_purpose::STANDARD.encode(image);
                serde_json::json!([
                    {"type": "text", "text": request.prompt},
                    {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{encoded}")}},
                ])
            }
            None => serde_json::json!(request.prompt),
        };
        let body = serde_json::json!({
            "model": request.model,
            "messages": [{"role": "user", "content": content}],
        });
        let mut builder = self
            .client
            .post(&self.endpoint)
            .header("content-type", "application/json");
        if let Some(key) = &self.api_key {
            builder = builder.header("authorization", format!("Bearer {key}"));
        }
        let resp = builder
            .body(body.to_string())
            .send()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if status.is_server_error() {
            return Err(ProviderError::Transport(format!("http status {status}")));
        }
        if !status.is_success() {
            return Err(ProviderError::Rejected(format!(
                "http status {status}: {text}"
            )));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| ProviderError::Transport(e.to_string()))?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| {
                ProviderError::Transport("response missing choices[0].message.content".into())
            })?
            .to_string();
        Ok(ProviderResponse {
            text: content,
            input_tokens: value["usage"]["prompt_tokens"].as_u64(),
            output_tokens: value["usage"]["completion_tokens"].as_u64(),
        })
    }
}
