use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::prompt::{build_prompt, ContextWindow, Prompt};
use super::verdict::{parse_verdict, Verdict};
use crate::error::{Error, Result};
use crate::evaluation::judged_precision;
use crate::repio::{AnnotatedSequence, PredictionRecord};
use crate::spanspace::Span;

pub const DEFAULT_SAMPLE_K: usize = 10_000;

/// Uniform sample of `min(k, len)` items without replacement, kept in their
/// original order.
pub fn sample_spans<T: Clone>(items: &[T], k: usize, seed: u64) -> Vec<T> {
    if k >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, items.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

/// A span to be judged with its rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgeItem {
    pub seq_id: String,
    pub span: Span,
    pub prompt: Prompt,
}

/// One item per predicted span, in prediction order. Sequences need token
/// texts.
pub fn judge_items(
    predictions: &[PredictionRecord],
    dataset: &[AnnotatedSequence],
    window: ContextWindow,
) -> Result<Vec<JudgeItem>> {
    let by_id: std::collections::HashMap<&str, &AnnotatedSequence> =
        dataset.iter().map(|s| (s.seq_id.as_str(), s)).collect();
    let mut out = Vec::new();
    for rec in predictions {
        let seq = by_id
            .get(rec.seq_id.as_str())
            .ok_or_else(|| Error::KeyMismatch(format!("no sequence {:?}", rec.seq_id)))?;
        let tokens = seq.token_texts.as_ref().ok_or_else(|| {
            Error::Config(format!("sequence {:?} has no token texts", seq.seq_id))
        })?;
        for s in &rec.spans {
            out.push(JudgeItem {
                seq_id: rec.seq_id.clone(),
                span: s.span,
                prompt: build_prompt(tokens, s.span, window)?,
            });
        }
    }
    Ok(out)
}

/// Audit record for one judged span. `verdict` is `None` when every attempt
/// failed; `error` then holds the last failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeRecord {
    pub seq_id: String,
    pub span: (usize, usize),
    pub context_window: String,
    pub raw_response: Option<String>,
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub requests: usize,
}

#[derive(Debug, Clone)]
pub enum CallError {
    /// Rate limits, server errors and transport failures.
    Retryable(String),
    Fatal(String),
}

/// A chat-completion endpoint.
pub trait ChatBackend: Sync {
    fn complete(&self, system: &str, user: &str) -> std::result::Result<String, CallError>;
}

#[derive(Debug, Clone)]
pub struct JudgeConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub concurrency: usize,
    pub max_attempts: usize,
    /// Delay before the second attempt; doubles for each later one.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4.1-mini".into(),
            api_key: None,
            concurrency: 4,
            max_attempts: 3,
            backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(60),
        }
    }
}

/// OpenAI-compatible `POST {base_url}/chat/completions`.
pub struct HttpChat {
    agent: ureq::Agent,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpChat {
    pub fn new(config: &JudgeConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpChat {
            agent,
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            api_key: config.api_key.clone(),
        }
    }
}

impl ChatBackend for HttpChat {
    fn complete(&self, system: &str, user: &str) -> std::result::Result<String, CallError> {
        let body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        });
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| CallError::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(CallError::Retryable(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(CallError::Fatal(format!("HTTP {status}")));
        }
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| CallError::Retryable(format!("bad response body: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| CallError::Fatal(format!("no message content in {v}")))
    }
}

/// Calls the backend up to `max_attempts` times with exponential backoff.
fn call_with_retries(
    backend: &dyn ChatBackend,
    prompt: &Prompt,
    config: &JudgeConfig,
    requests: &mut usize,
) -> std::result::Result<String, String> {
    let mut last = String::new();
    for attempt in 0..config.max_attempts.max(1) {
        if attempt > 0 {
            thread::sleep(config.backoff * 2u32.saturating_pow(attempt as u32 - 1));
        }
        *requests += 1;
        match backend.complete(&prompt.system, &prompt.user) {
            Ok(text) => return Ok(text),
            Err(CallError::Retryable(e)) => {
                debug!("attempt {} failed: {e}", attempt + 1);
                last = e;
            }
            Err(CallError::Fatal(e)) => return Err(e),
        }
    }
    Err(last)
}

fn judge_one(backend: &dyn ChatBackend, item: &JudgeItem, config: &JudgeConfig) -> JudgeRecord {
    let mut requests = 0;
    let mut outcome = call_with_retries(backend, &item.prompt, config, &mut requests);
    if let Ok(text) = &outcome {
        if parse_verdict(text) == Verdict::Unparsed {
            // one fresh request for an unparseable answer
            if let Ok(again) = call_with_retries(backend, &item.prompt, config, &mut requests) {
                outcome = Ok(again);
            }
        }
    }
    let (raw_response, verdict, error) = match outcome {
        Ok(text) => {
            let v = parse_verdict(&text);
            (Some(text), Some(v), None)
        }
        Err(e) => {
            warn!("giving up on {} {}: {e}", item.seq_id, item.span);
            (None, None, Some(e))
        }
    };
    JudgeRecord {
        seq_id: item.seq_id.clone(),
        span: (item.span.start, item.span.end),
        context_window: item.prompt.context.clone(),
        raw_response,
        verdict,
        error,
        requests,
    }
}

/// Judges every item with up to `config.concurrency` requests in flight.
/// Records come back in input order.
pub fn judge_spans(
    items: &[JudgeItem],
    backend: &dyn ChatBackend,
    config: &JudgeConfig,
) -> Vec<JudgeRecord> {
    let slots: Vec<Mutex<Option<JudgeRecord>>> = items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = config.concurrency.clamp(1, items.len().max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let rec = judge_one(backend, item, config);
                *slots[i].lock().expect("slot lock poisoned") = Some(rec);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| {
            s.into_inner()
                .expect("slot lock poisoned")
                .expect("every slot is filled")
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub unparsed: usize,
    pub failed: usize,
    /// Accepted over accepted + rejected; unparsed and failed excluded.
    pub precision: Option<f64>,
}

pub fn summarize(records: &[JudgeRecord]) -> JudgeReport {
    let parsed: Vec<bool> = records
        .iter()
        .filter_map(|r| r.verdict.and_then(Verdict::as_bool))
        .collect();
    let accepted = parsed.iter().filter(|&&b| b).count();
    JudgeReport {
        total: records.len(),
        accepted,
        rejected: parsed.len() - accepted,
        unparsed: records
            .iter()
            .filter(|r| r.verdict == Some(Verdict::Unparsed))
            .count(),
        failed: records.iter().filter(|r| r.verdict.is_none()).count(),
        precision: judged_precision(&parsed).ok(),
    }
}

pub fn write_audit(records: &[JudgeRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_audit(path: impl AsRef<Path>) -> Result<Vec<JudgeRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling() {
        let items: Vec<usize> = (0..50).collect();
        assert_eq!(sample_spans(&items, 80, 1), items);
        let a = sample_spans(&items, 10, 7);
        assert_eq!(a, sample_spans(&items, 10, 7));
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }
}
