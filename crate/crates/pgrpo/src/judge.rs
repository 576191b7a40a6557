//! HTTP client for a remote 0-5 grader.
//!
//! Wire protocol: `POST {base}/score` with `{"question", "gold", "answer"}`,
//! answered by `{"score": <int>}`.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use pgrpo_core::eval::{Judge, JudgeRequest, JudgeVerdict};
use serde::Deserialize;

use crate::error::{Error, Result};

/// What to do once retries against an unreachable or failing endpoint run out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Failover {
    Error,
    /// Score the request 0 and log a warning.
    Zero,
}

#[derive(Debug, Clone)]
pub struct RemoteJudgeConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: u32,
    /// Delay before the first retry; doubles after each attempt.
    pub backoff: Duration,
    pub failover: Failover,
    pub max_in_flight: usize,
}

impl RemoteJudgeConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteJudgeConfig {
            base_url: base_url.into(),
            timeout: Duration::from_secs(10),
            retries: 3,
            backoff: Duration::from_millis(200),
            failover: Failover::Error,
            max_in_flight: 4,
        }
    }
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: i64,
}

enum Attempt {
    /// Transport failure or server error; worth retrying.
    Transient(String),
    /// Protocol violation; retrying will not help.
    Fatal(String),
}

pub struct RemoteJudge {
    agent: ureq::Agent,
    config: RemoteJudgeConfig,
    in_flight: Mutex<usize>,
    slot_freed: Condvar,
    warnings: AtomicUsize,
}

impl RemoteJudge {
    pub fn new(config: RemoteJudgeConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteJudge { agent, config, in_flight: Mutex::new(0), slot_freed: Condvar::new(), warnings: AtomicUsize::new(0) }
    }

    /// Number of requests that were scored 0 by failover.
    pub fn warnings(&self) -> usize {
        self.warnings.load(Ordering::Relaxed)
    }

    fn endpoint(&self) -> String {
        format!("{}/score", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, body: &str) -> std::result::Result<JudgeVerdict, Attempt> {
        let mut resp = self
            .agent
            .post(&self.endpoint())
            .header("content-type", "application/json")
            .send(body)
            .map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| Attempt::Transient(e.to_string()))?;
        match status {
            200..=299 => {}
            500..=599 | 429 => return Err(Attempt::Transient(format!("HTTP {status}"))),
            _ => return Err(Attempt::Fatal(format!("HTTP {status}: {text}"))),
        }
        let parsed: ScoreResponse =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(format!("malformed response {text:?}: {e}")))?;
        JudgeVerdict::new(parsed.score).map_err(|e| Attempt::Fatal(e.to_string()))
    }

    /// Scores one request, blocking while `max_in_flight` requests are pending.
    pub fn score(&self, request: &JudgeRequest) -> Result<JudgeVerdict> {
        let body = serde_json::to_string(request)?;
        let _slot = self.acquire();
        let mut delay = self.config.backoff;
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.attempt(&body) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(m)) => return Err(Error::Judge(m)),
                Err(Attempt::Transient(m)) => last = m,
            }
        }
        let message = format!("{} unavailable after {} attempts: {last}", self.endpoint(), self.config.retries + 1);
        match self.config.failover {
            Failover::Error => Err(Error::Judge(message)),
            Failover::Zero => {
                log::warn!("{message}; scoring 0");
                self.warnings.fetch_add(1, Ordering::Relaxed);
                Ok(JudgeVerdict::zero())
            }
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let limit = self.config.max_in_flight.max(1);
        let mut n = self.in_flight.lock().unwrap();
        while *n >= limit {
            n = self.slot_freed.wait(n).unwrap();
        }
        *n += 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a RemoteJudge);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.slot_freed.notify_one();
    }
}

impl Judge for RemoteJudge {
    fn judge(&mut self, request: &JudgeRequest) -> pgrpo_core::Result<JudgeVerdict> {
        self.score(request).map_err(|e| pgrpo_core::Error::Judge(e.to_string()))
    }
}
