//! Chat transports: replay from a transcript, live OpenAI-compatible HTTP,
//! and a recording wrapper that appends every exchange to a transcript.

use std::collections::HashMap;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{request_hash, LlmError, TranscriptEntry, TranscriptStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub provider: String,
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub requests_per_minute: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            provider: "openai-compatible".into(),
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            temperature: 0.0,
            max_tokens: None,
            api_key_env: "WELLNESS_LLM_API_KEY".into(),
            timeout_secs: 60,
            max_retries: 4,
            initial_backoff_ms: 1000,
            max_backoff_ms: 30_000,
            requests_per_minute: 20,
        }
    }
}

pub trait ChatTransport {
    fn send(&mut self, prompt: &str, cfg: &ProviderConfig) -> Result<String, LlmError>;
}

/// Serves recorded replies by request hash; never touches the network.
#[derive(Debug, Clone, Default)]
pub struct ReplayTransport {
    replies: HashMap<String, String>,
}

impl ReplayTransport {
    pub fn new(replies: HashMap<String, String>) -> Self {
        ReplayTransport { replies }
    }

    pub fn from_store(store: &TranscriptStore) -> Result<Self, LlmError> {
        Ok(ReplayTransport { replies: store.replies()? })
    }
}

impl ChatTransport for ReplayTransport {
    fn send(&mut self, prompt: &str, cfg: &ProviderConfig) -> Result<String, LlmError> {
        let hash = request_hash(prompt, cfg);
        self.replies.get(&hash).cloned().ok_or(LlmError::ReplayMiss { hash })
    }
}

/// Forwards to `inner` and appends each successful exchange to `store`.
pub struct RecordingTransport<T> {
    inner: T,
    store: TranscriptStore,
}

impl<T: ChatTransport> RecordingTransport<T> {
    pub fn new(inner: T, store: TranscriptStore) -> Self {
        RecordingTransport { inner, store }
    }
}

impl<T: ChatTransport> ChatTransport for RecordingTransport<T> {
    fn send(&mut self, prompt: &str, cfg: &ProviderConfig) -> Result<String, LlmError> {
        let reply = self.inner.send(prompt, cfg)?;
        self.store.append(&TranscriptEntry {
            request_hash: request_hash(prompt, cfg),
            prompt: prompt.to_string(),
            reply: reply.clone(),
            provider: cfg.provider.clone(),
            model: cfg.model.clone(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        })?;
        Ok(reply)
    }
}

/// Exponential backoff: `initial * 2^attempt`, capped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial: Duration,
    pub max: Duration,
}

impl RetryPolicy {
    pub fn from_config(cfg: &ProviderConfig) -> Self {
        RetryPolicy {
            max_retries: cfg.max_retries,
            initial: Duration::from_millis(cfg.initial_backoff_ms),
            max: Duration::from_millis(cfg.max_backoff_ms),
        }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        self.initial.saturating_mul(1u32.checked_shl(attempt).unwrap_or(u32::MAX)).min(self.max)
    }

    /// Runs `op` until it succeeds, fails with a non-transient error, or
    /// the retries are used up.
    pub fn run<T>(
        &self,
        mut sleep: impl FnMut(Duration),
        mut op: impl FnMut() -> Result<T, LlmError>,
    ) -> Result<T, LlmError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_transient() && attempt < self.max_retries => {
                    sleep(self.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

/// Spaces requests at least `60 / requests_per_minute` seconds apart.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    interval: Duration,
    next: Option<Instant>,
}

impl RateLimiter {
    pub fn per_minute(requests: u32) -> Self {
        let interval = if requests == 0 { Duration::ZERO } else { Duration::from_secs(60) / requests };
        RateLimiter { interval, next: None }
    }

    pub fn wait(&mut self) {
        let now = Instant::now();
        if let Some(next) = self.next {
            if next > now {
                thread::sleep(next - now);
            }
        }
        self.next = Some(Instant::now() + self.interval);
    }
}

/// OpenAI-compatible `/chat/completions` client.
pub struct LiveTransport {
    agent: ureq::Agent,
    api_key: String,
    limiter: RateLimiter,
}

impl LiveTransport {
    /// Reads the key from `cfg.api_key_env`; a missing or empty variable is
    /// an authentication error.
    pub fn from_env(cfg: &ProviderConfig) -> Result<Self, LlmError> {
        let api_key = std::env::var(&cfg.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::Auth(format!("environment variable {} is not set", cfg.api_key_env)))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(LiveTransport { agent, api_key, limiter: RateLimiter::per_minute(cfg.requests_per_minute) })
    }

    fn attempt(&mut self, prompt: &str, cfg: &ProviderConfig) -> Result<String, LlmError> {
        self.limiter.wait();
        let mut body = serde_json::json!({
            "model": cfg.model,
            "temperature": cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        if let Some(max) = cfg.max_tokens {
            body["max_tokens"] = max.into();
        }
        let url = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(classify_transport_error)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(classify_transport_error)?;
        if status != 200 {
            return Err(classify_status(status, &text));
        }
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| LlmError::Provider(format!("reply is not JSON: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Provider("reply has no choices[0].message.content".into()))
    }
}

fn classify_transport_error(e: ureq::Error) -> LlmError {
    match e {
        ureq::Error::Timeout(t) => LlmError::Timeout(t.to_string()),
        ureq::Error::Io(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
            LlmError::Transient(e.to_string())
        }
        other => LlmError::Provider(other.to_string()),
    }
}

fn classify_status(status: u16, body: &str) -> LlmError {
    let snippet: String = body.chars().take(200).collect();
    match status {
        401 | 403 => LlmError::Auth(format!("HTTP {status}: {snippet}")),
        429 if body.contains("insufficient_quota") => LlmError::Quota(format!("HTTP 429: {snippet}")),
        408 | 429 | 500..=599 => LlmError::Transient(format!("HTTP {status}: {snippet}")),
        _ => LlmError::Provider(format!("HTTP {status}: {snippet}")),
    }
}

impl ChatTransport for LiveTransport {
    fn send(&mut self, prompt: &str, cfg: &ProviderConfig) -> Result<String, LlmError> {
        let policy = RetryPolicy::from_config(cfg);
        policy.run(thread::sleep, || self.attempt(prompt, cfg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_hit_and_miss() {
        let cfg = ProviderConfig::default();
        let mut t = ReplayTransport::new(HashMap::from([(request_hash("p", &cfg), "[1, \"x\"]".to_string())]));
        assert_eq!(t.send("p", &cfg).unwrap(), "[1, \"x\"]");
        assert!(matches!(t.send("q", &cfg), Err(LlmError::ReplayMiss { .. })));
    }

    #[test]
    fn live_without_credentials_is_auth_error() {
        let cfg = ProviderConfig { api_key_env: "WELLNESS_EVAL_TEST_UNSET_KEY".into(), ..Default::default() };
        assert!(matches!(LiveTransport::from_env(&cfg), Err(LlmError::Auth(_))));
    }

    #[test]
    fn backoff_retries_transient_only() {
        let policy = RetryPolicy { max_retries: 3, initial: Duration::from_millis(100), max: Duration::from_millis(250) };
        let mut slept = Vec::new();
        let mut calls = 0;
        let out: Result<(), _> = policy.run(|d| slept.push(d), || {
            calls += 1;
            Err(LlmError::Transient("503".into()))
        });
        assert!(matches!(out, Err(LlmError::Transient(_))));
        assert_eq!(calls, 4);
        assert_eq!(slept, [100, 200, 250].map(Duration::from_millis));

        let mut calls = 0;
        let out: Result<(), _> = policy.run(|_| {}, || {
            calls += 1;
            Err(LlmError::Quota("out".into()))
        });
        assert!(matches!(out, Err(LlmError::Quota(_))));
        assert_eq!(calls, 1);

        let mut calls = 0;
        let out = policy.run(|_| {}, || {
            calls += 1;
            if calls < 3 { Err(LlmError::Timeout("slow".into())) } else { Ok(calls) }
        });
        assert_eq!(out.unwrap(), 3);
    }

    #[test]
    fn status_classes() {
        assert!(matches!(classify_status(401, ""), LlmError::Auth(_)));
        assert!(matches!(classify_status(429, r#"{"error":{"code":"insufficient_quota"}}"#), LlmError::Quota(_)));
        assert!(matches!(classify_status(429, "slow down"), LlmError::Transient(_)));
        assert!(matches!(classify_status(502, ""), LlmError::Transient(_)));
        assert!(matches!(classify_status(400, ""), LlmError::Provider(_)));
    }

    #[test]
    fn recording_appends() {
        let dir = tempfile::tempdir().unwrap();
        let store = TranscriptStore::new(dir.path().join("t.jsonl"));
        let cfg = ProviderConfig::default();
        let inner = ReplayTransport::new(HashMap::from([(request_hash("p", &cfg), "r".to_string())]));
        let mut t = RecordingTransport::new(inner, store.clone());
        t.send("p", &cfg).unwrap();
        let entries = store.load().unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].reply, "r");
        let mut replay = ReplayTransport::from_store(&store).unwrap();
        assert_eq!(replay.send("p", &cfg).unwrap(), "r");
    }
}
