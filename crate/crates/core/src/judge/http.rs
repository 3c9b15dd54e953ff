//! HTTP LLM-judge client speaking the OpenAI-compatible chat-completions
//! wire format.
//!
//! One user message carries the rendered ranking prompt; the verdict is
//! parsed from the first choice's message content. Transport failures,
//! non-2xx statuses, malformed bodies, and verdict parse failures are all
//! retried up to the configured budget. A counting semaphore bounds the
//! number of in-flight requests.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::data::{ComparisonOutcome, Verdict};
use crate::error::{Error, Result};

use super::{parse_verdict, render_judge_prompt, DuelRequest, Judge, JudgeVerdict};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpJudgeConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Bearer token, usually taken from the environment by the CLI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Additional attempts after the first failed one.
    pub max_retries: u32,
    /// Base backoff; attempt k sleeps k * retry_backoff.
    pub retry_backoff: Duration,
    pub max_in_flight: usize,
    /// Decoding temperature for the judge. 0 keeps verdicts deterministic
    /// and cacheable.
    pub temperature: f64,
    /// Judge both orderings and return Tie when the two verdicts disagree.
    /// Off by default: a single ordering keeps the (M−1)-call budget.
    pub symmetrize: bool,
    /// Map an unparseable verdict (after retries) to Tie instead of failing.
    pub parse_error_as_tie: bool,
}

impl Default for HttpJudgeConfig {
    fn default() -> Self {
        HttpJudgeConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".to_string(),
            model: "judge".to_string(),
            api_key: None,
            timeout: Duration::from_secs(60),
            max_retries: 2,
            retry_backoff: Duration::from_millis(250),
            max_in_flight: 4,
            temperature: 0.0,
            symmetrize: false,
            parse_error_as_tie: false,
        }
    }
}

/// Running request counters, readable while the judge is in use.
#[derive(Debug, Default)]
pub struct HttpJudgeStats {
    requests: AtomicU64,
    retries: AtomicU64,
}

impl HttpJudgeStats {
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }
}

struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().unwrap();
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

pub struct HttpJudge {
    config: HttpJudgeConfig,
    client: reqwest::blocking::Client,
    gate: Semaphore,
    stats: HttpJudgeStats,
    id: String,
}

impl HttpJudge {
    pub fn new(config: HttpJudgeConfig) -> Result<Self> {
        if config.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        let gate = Semaphore::new(config.max_in_flight);
        let id = format!("http:{}", config.model);
        Ok(HttpJudge {
            config,
            client,
            gate,
            stats: HttpJudgeStats::default(),
            id,
        })
    }

    pub fn stats(&self) -> &HttpJudgeStats {
        &self.stats
    }

    pub fn config(&self) -> &HttpJudgeConfig {
        &self.config
    }

    fn post_once(&self, prompt: &str) -> std::result::Result<String, String> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.config.temperature,
        };
        let mut request = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| format!("transport: {e}"))?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("status {status}"));
        }
        let parsed: ChatResponse = response
            .json()
            .map_err(|e| format!("malformed response body: {e}"))?;
        parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| "response had no choices".to_string())
    }

    /// One judged ordering: request, retry, parse. Returns the verdict and
    /// the raw completion it was parsed from.
    fn ask(&self, prompt: &str) -> Result<(JudgeVerdict, String)> {
        let _permit = self.gate.acquire();
        let attempts = self.config.max_retries + 1;
        let mut last_parse_error: Option<Error> = None;
        let mut last_transport_error: Option<String> = None;

        for attempt in 0..attempts {
            if attempt > 0 {
                self.stats.retries.fetch_add(1, Ordering::Relaxed);
                std::thread::sleep(self.config.retry_backoff * attempt);
            }
            self.stats.requests.fetch_add(1, Ordering::Relaxed);
            match self.post_once(prompt) {
                Ok(raw) => match parse_verdict(&raw) {
                    Ok(verdict) => return Ok((verdict, raw)),
                    Err(e) => last_parse_error = Some(e),
                },
                Err(message) => {
                    last_parse_error = None;
                    last_transport_error = Some(message);
                }
            }
        }

        if let Some(parse_error) = last_parse_error {
            if self.config.parse_error_as_tie {
                let raw = match &parse_error {
                    Error::VerdictParse { raw } => raw.clone(),
                    _ => String::new(),
                };
                return Ok((JudgeVerdict::Tie, raw));
            }
            return Err(parse_error);
        }
        Err(Error::Http {
            attempts,
            message: last_transport_error.unwrap_or_else(|| "unknown".to_string()),
        })
    }
}

impl Judge for HttpJudge {
    fn id(&self) -> &str {
        &self.id
    }

    fn compare(&self, duel: &DuelRequest<'_>) -> Result<ComparisonOutcome> {
        let forward = render_judge_prompt(duel.prompt, duel.baseline_text, duel.candidate_text)?;
        let (verdict, raw) = self.ask(&forward)?;
        let mut mapped = verdict.into_verdict();
        let mut evidence = raw;

        if self.config.symmetrize {
            let reversed =
                render_judge_prompt(duel.prompt, duel.candidate_text, duel.baseline_text)?;
            let (rev_verdict, rev_raw) = self.ask(&reversed)?;
            // In the reversed ordering assistant A is the candidate.
            let rev_mapped = rev_verdict.into_verdict().flipped();
            if rev_mapped != mapped {
                mapped = Verdict::Tie;
            }
            evidence = format!("forward: {evidence}\nreversed: {rev_raw}");
        }

        Ok(ComparisonOutcome {
            verdict: mapped,
            baseline_index: duel.baseline_index.unwrap_or(0),
            candidate_index: duel.candidate_index.unwrap_or(1),
            judge_id: self.id.clone(),
            raw_evidence: Some(evidence),
        })
    }
}
