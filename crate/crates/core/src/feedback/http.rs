use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{GenerateError, Generator, SamplingConfig};

/// Counting semaphore bounding in-flight requests across clients.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL such as `http://localhost:8000/v1`; `/chat/completions` is appended.
    pub endpoint: String,
    pub model_id: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub backoff_max: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, model_id: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            api_key: std::env::var("HELM_API_KEY").ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(60),
            max_attempts: 5,
            backoff_base: Duration::from_millis(500),
            backoff_max: Duration::from_secs(8),
        }
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Chat-completions client with retry on transient failures.
pub struct HttpGenerator {
    cfg: HttpConfig,
    url: String,
    client: reqwest::blocking::Client,
    limiter: Arc<Semaphore>,
    attempts: AtomicU64,
}

enum Attempt {
    Done(String),
    Retry(GenerateError),
    Fail(GenerateError),
}

impl HttpGenerator {
    pub fn new(cfg: HttpConfig, limiter: Arc<Semaphore>) -> Result<Self, GenerateError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| GenerateError::Transport(e.to_string()))?;
        Ok(HttpGenerator {
            url: cfg.url(),
            cfg,
            client,
            limiter,
            attempts: AtomicU64::new(0),
        })
    }

    /// Total HTTP attempts made, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.cfg.backoff_base.saturating_mul(factor).min(self.cfg.backoff_max)
    }

    fn attempt(&self, body: &Value) -> Attempt {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Attempt::Retry(GenerateError::Transport(e.to_string()))
            }
            Err(e) => return Attempt::Fail(GenerateError::Transport(e.to_string())),
        };
        let status = resp.status().as_u16();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(GenerateError::Transport(e.to_string())),
        };
        match status {
            200..=299 => match extract_content(&text) {
                Ok(s) => Attempt::Done(s),
                Err(e) => Attempt::Fail(e),
            },
            401 | 403 => Attempt::Fail(GenerateError::Auth(format!("HTTP {status}"))),
            429 => Attempt::Retry(GenerateError::RateLimit { attempts: 0 }),
            408 | 500 | 502 | 503 | 504 => Attempt::Retry(GenerateError::Transport(format!("HTTP {status}"))),
            _ => Attempt::Fail(GenerateError::Http {
                status,
                body: text.chars().take(200).collect(),
            }),
        }
    }
}

fn extract_content(body: &str) -> Result<String, GenerateError> {
    let v: Value =
        serde_json::from_str(body).map_err(|e| GenerateError::MalformedResponse(format!("invalid JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GenerateError::MalformedResponse("missing choices[0].message.content".into()))
}

fn prompt_digest(prompt: &str) -> String {
    hex::encode(&Sha256::digest(prompt.as_bytes())[..8])
}

impl Generator for HttpGenerator {
    fn model_id(&self) -> &str {
        &self.cfg.model_id
    }

    fn generate(&self, prompt: &str, cfg: &SamplingConfig) -> Result<String, GenerateError> {
        let body = json!({
            "model": self.cfg.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "top_p": cfg.nucleus_p,
            "max_tokens": cfg.max_new_tokens,
        });
        let digest = prompt_digest(prompt);
        let _permit = self.limiter.acquire();
        let max = self.cfg.max_attempts.max(1);
        let mut last = GenerateError::Transport("no attempt made".into());
        for attempt in 1..=max {
            log::debug!(
                "POST {} model={} prompt={} attempt={}",
                self.url,
                self.cfg.model_id,
                digest,
                attempt
            );
            match self.attempt(&body) {
                Attempt::Done(s) => {
                    log::debug!("prompt={} response_chars={}", digest, s.chars().count());
                    return Ok(s);
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => {
                    log::debug!("prompt={} attempt={} transient failure: {}", digest, attempt, e);
                    last = e;
                    if attempt < max {
                        std::thread::sleep(self.backoff(attempt));
                    }
                }
            }
        }
        Err(match last {
            GenerateError::RateLimit { .. } => GenerateError::RateLimit { attempts: max },
            other => other,
        })
    }
}
