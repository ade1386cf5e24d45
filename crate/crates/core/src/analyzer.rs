//! Analyzer: submit rendered prompts to a chat-completion backend and
//! decode replies into answer vectors.
//!
//! Two backends are provided. [`HttpBackend`] speaks the OpenAI-compatible
//! chat-completions protocol with retry, a concurrency cap, and an optional
//! request rate limit. [`ScriptedBackend`] is a deterministic offline double
//! keyed by a `// scenario-id:` tag embedded in the prompt, so pipelines can
//! be exercised end to end without a network.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};
use thiserror::Error;

use crate::corpus::ScenarioRecord;
use crate::promptgen::{
    build_prompt, enforce_budget, FewShotBlock, PromptError, PromptTemplate, RenderedPrompt,
};

/// Tag line embedded in every prompt's scenario section; the scripted
/// backend reads it to pick a reply.
pub const SCENARIO_TAG: &str = "// scenario-id: ";

/// Instruction appended when a reply could not be decoded.
pub const REPAIR_INSTRUCTION: &str = "Answer ONLY with the JSON object.";

/// Ordered YES/NO answers to Q1..Q5. Bit i holds the answer to Q(i+1);
/// `true` means YES. Renders as a 5-character bitstring, leftmost = Q1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AnswerVector([bool; 5]);

impl AnswerVector {
    pub const fn new(bits: [bool; 5]) -> Self {
        AnswerVector(bits)
    }

    pub fn bits(&self) -> &[bool; 5] {
        &self.0
    }

    /// The canonical reply object for this vector, e.g.
    /// `{"Q1":"YES","Q2":"NO","Q3":"NO","Q4":"YES","Q5":"NO"}`.
    pub fn canonical_json(&self) -> String {
        let yn = |b: bool| if b { "YES" } else { "NO" };
        format!(
            "{{\"Q1\":\"{}\",\"Q2\":\"{}\",\"Q3\":\"{}\",\"Q4\":\"{}\",\"Q5\":\"{}\"}}",
            yn(self.0[0]),
            yn(self.0[1]),
            yn(self.0[2]),
            yn(self.0[3]),
            yn(self.0[4])
        )
    }
}

impl fmt::Display for AnswerVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for AnswerVector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 5 {
            return Err(format!("answer vector must have 5 bits, got {:?}", s));
        }
        let mut bits = [false; 5];
        for (i, c) in chars.iter().enumerate() {
            bits[i] = match c {
                '1' => true,
                '0' => false,
                _ => return Err(format!("answer vector must be 0/1 bits, got {:?}", s)),
            };
        }
        Ok(AnswerVector(bits))
    }
}

impl Serialize for AnswerVector {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AnswerVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One chat turn on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".to_string(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".to_string(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".to_string(),
            content: content.into(),
        }
    }
}

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct BackendConfig {
    /// Full URL of the chat-completions route.
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    /// Retries after the first attempt, for retryable failures only.
    pub max_retries: u32,
    pub timeout: Duration,
    /// Name of the environment variable holding the API key; the
    /// Authorization header is omitted when the variable is unset.
    pub api_key_env: Option<String>,
    /// First retry delay; doubles on each subsequent retry.
    pub backoff_base: Duration,
    /// Maximum concurrent in-flight requests.
    pub max_in_flight: usize,
    /// Optional request budget per minute, enforced as a token bucket.
    pub requests_per_minute: Option<u32>,
}

impl BackendConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        BackendConfig {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            temperature: 0.0,
            max_retries: 2,
            timeout: Duration::from_secs(60),
            api_key_env: None,
            backoff_base: Duration::from_secs(1),
            max_in_flight: 4,
            requests_per_minute: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    /// Non-retryable HTTP status (anything other than 429 and 5xx).
    #[error("backend returned HTTP {status}: {excerpt}")]
    Http { status: u16, excerpt: String },
    /// Retryable failures kept failing until the retry budget ran out.
    #[error("retries exhausted after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    /// 2xx response whose body was not a usable chat completion.
    #[error("malformed backend reply: {0}")]
    Protocol(String),
}

/// A chat-completion backend usable from concurrent workers.
pub trait ChatBackend: Send + Sync {
    /// Send one conversation and return the reply text. `turns` carries the
    /// user/assistant history; the system turn is prepended from `system`.
    fn complete(&self, system: &str, turns: &[ChatMessage]) -> Result<String, BackendError>;
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage>,
    temperature: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    state: Mutex<usize>,
    cv: Condvar,
    max: usize,
}

impl Gate {
    fn new(max: usize) -> Self {
        Gate {
            state: Mutex::new(0),
            cv: Condvar::new(),
            max: max.max(1),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut in_flight = self.state.lock().unwrap();
        while *in_flight >= self.max {
            in_flight = self.cv.wait(in_flight).unwrap();
        }
        *in_flight += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.gate.state.lock().unwrap();
        *in_flight -= 1;
        self.gate.cv.notify_one();
    }
}

/// Token bucket refilled at `rate` tokens per minute, capacity `rate`.
struct TokenBucket {
    rate_per_min: f64,
    tokens: f64,
    last_refill: Instant,
}

impl TokenBucket {
    fn new(rate_per_min: u32) -> Self {
        let rate = f64::from(rate_per_min.max(1));
        TokenBucket {
            rate_per_min: rate,
            tokens: rate,
            last_refill: Instant::now(),
        }
    }

    fn refill(&mut self) {
        let now = Instant::now();
        let elapsed = now.duration_since(self.last_refill).as_secs_f64();
        self.tokens = (self.tokens + elapsed * self.rate_per_min / 60.0).min(self.rate_per_min);
        self.last_refill = now;
    }
}

fn take_token(bucket: &Mutex<TokenBucket>) {
    loop {
        let wait = {
            let mut b = bucket.lock().unwrap();
            b.refill();
            if b.tokens >= 1.0 {
                b.tokens -= 1.0;
                return;
            }
            Duration::from_secs_f64((1.0 - b.tokens) * 60.0 / b.rate_per_min)
        };
        std::thread::sleep(wait);
    }
}

/// Blocking OpenAI-compatible client with bounded concurrency.
///
/// Retries network failures, timeouts, 429 and 5xx with exponential
/// backoff; any other non-2xx status surfaces immediately since it
/// indicates a prompt or configuration bug, not a transient fault.
pub struct HttpBackend {
    cfg: BackendConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
    bucket: Option<Mutex<TokenBucket>>,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Protocol(format!("client construction failed: {e}")))?;
        let gate = Gate::new(cfg.max_in_flight);
        let bucket = cfg
            .requests_per_minute
            .map(|rpm| Mutex::new(TokenBucket::new(rpm)));
        Ok(HttpBackend {
            cfg,
            client,
            gate,
            bucket,
        })
    }

    fn send_once(&self, body: &WireRequest<'_>) -> Result<String, AttemptFailure> {
        if let Some(bucket) = &self.bucket {
            take_token(bucket);
        }
        let mut req = self.client.post(&self.cfg.endpoint_url).json(body);
        if let Some(var) = &self.cfg.api_key_env {
            if let Ok(key) = std::env::var(var) {
                req = req.bearer_auth(key);
            }
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Err(AttemptFailure::Retryable(format!("request failed: {e}"))),
        };
        let status = resp.status();
        if status.is_success() {
            let parsed: WireResponse = resp.json().map_err(|e| {
                AttemptFailure::Fatal(BackendError::Protocol(format!("bad response body: {e}")))
            })?;
            let content = parsed
                .choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content);
            match content {
                Some(text) => Ok(text),
                None => Err(AttemptFailure::Fatal(BackendError::Protocol(
                    "response carried no message content".to_string(),
                ))),
            }
        } else {
            let code = status.as_u16();
            let body = resp.text().unwrap_or_default();
            let excerpt: String = body.chars().take(200).collect();
            if code == 429 || (500..600).contains(&code) {
                Err(AttemptFailure::Retryable(format!(
                    "HTTP {code}: {excerpt}"
                )))
            } else {
                Err(AttemptFailure::Fatal(BackendError::Http {
                    status: code,
                    excerpt,
                }))
            }
        }
    }
}

enum AttemptFailure {
    Retryable(String),
    Fatal(BackendError),
}

impl ChatBackend for HttpBackend {
    fn complete(&self, system: &str, turns: &[ChatMessage]) -> Result<String, BackendError> {
        let _slot = self.gate.acquire();
        let mut messages = Vec::with_capacity(turns.len() + 1);
        messages.push(ChatMessage::system(system));
        messages.extend_from_slice(turns);
        let body = WireRequest {
            model: &self.cfg.model_name,
            messages,
            temperature: self.cfg.temperature,
        };
        let mut last = String::new();
        for attempt in 0..=self.cfg.max_retries {
            match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err(AttemptFailure::Fatal(e)) => return Err(e),
                Err(AttemptFailure::Retryable(detail)) => {
                    last = detail;
                    if attempt < self.cfg.max_retries {
                        let delay = self.cfg.backoff_base * 2u32.pow(attempt);
                        std::thread::sleep(delay);
                    }
                }
            }
        }
        Err(BackendError::Exhausted {
            attempts: self.cfg.max_retries + 1,
            last,
        })
    }
}

/// Deterministic offline backend.
///
/// Replies are keyed by the scenario id read from the last `// scenario-id:`
/// tag in the first user turn. Each key maps to a reply sequence; the reply
/// index is the number of user turns so far minus one, clamped to the end of
/// the sequence. The backend holds no mutable state, so the same
/// conversation always yields the same reply, from any number of threads.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    replies: BTreeMap<String, Vec<String>>,
    default_reply: String,
}

impl ScriptedBackend {
    pub fn new(default_reply: impl Into<String>) -> Self {
        ScriptedBackend {
            replies: BTreeMap::new(),
            default_reply: default_reply.into(),
        }
    }

    /// Map a scenario id to a single reply used for every round.
    pub fn with_reply(mut self, scenario_id: impl Into<String>, reply: impl Into<String>) -> Self {
        self.replies
            .insert(scenario_id.into(), vec![reply.into()]);
        self
    }

    /// Map a scenario id to one reply per round; the last entry repeats.
    pub fn with_sequence(
        mut self,
        scenario_id: impl Into<String>,
        replies: Vec<String>,
    ) -> Self {
        self.replies.insert(scenario_id.into(), replies);
        self
    }

    /// Extract the scenario id from a prompt: the last tag wins, so few-shot
    /// example bodies embedded earlier in the prompt cannot shadow the
    /// scenario under analysis.
    pub fn scenario_key(prompt: &str) -> Option<&str> {
        prompt
            .rfind(SCENARIO_TAG)
            .map(|pos| prompt[pos + SCENARIO_TAG.len()..].lines().next().unwrap_or("").trim())
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, _system: &str, turns: &[ChatMessage]) -> Result<String, BackendError> {
        let first_user = turns.iter().find(|t| t.role == "user");
        let key = first_user.and_then(|t| Self::scenario_key(&t.content));
        let round = turns.iter().filter(|t| t.role == "user").count().max(1) - 1;
        let reply = key
            .and_then(|k| self.replies.get(k))
            .filter(|seq| !seq.is_empty())
            .map(|seq| seq[round.min(seq.len() - 1)].clone())
            .unwrap_or_else(|| self.default_reply.clone());
        Ok(reply)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no JSON object found in reply")]
    NoJson,
    #[error("missing {0}")]
    MissingKey(&'static str),
    #[error("unrecognizable value for {key}: {value}")]
    BadValue { key: &'static str, value: String },
}

const KEYS: [&str; 5] = ["Q1", "Q2", "Q3", "Q4", "Q5"];

/// Decode a raw reply into an answer vector.
///
/// The first parseable JSON object in the reply is used, which tolerates
/// surrounding prose and code fences. Keys Q1..Q5 are matched
/// case-insensitively; values may be YES/NO strings (any case) or JSON
/// booleans.
pub fn parse_answers(reply: &str) -> Result<AnswerVector, ParseError> {
    let object = first_json_object(reply).ok_or(ParseError::NoJson)?;
    let mut bits = [false; 5];
    for (i, key) in KEYS.iter().enumerate() {
        let value = object
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(key))
            .map(|(_, v)| v)
            .ok_or(ParseError::MissingKey(key))?;
        bits[i] = match value {
            serde_json::Value::Bool(b) => *b,
            serde_json::Value::String(s) => {
                let t = s.trim();
                if t.eq_ignore_ascii_case("yes") || t.eq_ignore_ascii_case("true") {
                    true
                } else if t.eq_ignore_ascii_case("no") || t.eq_ignore_ascii_case("false") {
                    false
                } else {
                    return Err(ParseError::BadValue {
                        key,
                        value: s.clone(),
                    });
                }
            }
            other => {
                return Err(ParseError::BadValue {
                    key,
                    value: other.to_string(),
                })
            }
        };
    }
    Ok(AnswerVector(bits))
}

fn first_json_object(text: &str) -> Option<serde_json::Map<String, serde_json::Value>> {
    for (pos, _) in text.match_indices('{') {
        let mut stream =
            serde_json::Deserializer::from_str(&text[pos..]).into_iter::<serde_json::Value>();
        if let Some(Ok(serde_json::Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

/// One line of the audit log: everything needed to reconstruct what was
/// asked and what came back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub scenario_id: String,
    pub model: String,
    pub prompt_sha256: String,
    /// Last raw reply received; empty when the backend never answered.
    pub reply: String,
    pub vector: Option<AnswerVector>,
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Result of analyzing one scenario, with its audit record.
#[derive(Debug)]
pub struct AnalysisOutcome {
    pub scenario_id: String,
    pub result: Result<AnswerVector, AnalyzeError>,
    pub audit: AuditRecord,
}

/// Drives build → budget → ask → parse for single scenarios, with a bounded
/// repair loop for undecodable replies.
pub struct Analyzer<B: ChatBackend + ?Sized> {
    pub backend: std::sync::Arc<B>,
    pub template: PromptTemplate,
    pub few_shot: FewShotBlock,
    pub budget: usize,
    /// Re-asks allowed when a reply fails to decode.
    pub repair_retries: u32,
    /// Recorded in audit lines; display only.
    pub model_name: String,
}

impl<B: ChatBackend + ?Sized> Analyzer<B> {
    pub fn analyze(&self, rec: &ScenarioRecord, context: Option<&str>) -> AnalysisOutcome {
        let prompt = build_prompt(rec, &self.template, &self.few_shot, context);
        let prompt = match enforce_budget(prompt, self.budget) {
            Ok(p) => p,
            Err(e) => {
                return self.outcome(rec, "", String::new(), Err(AnalyzeError::Prompt(e)))
            }
        };
        let hash = prompt_hash(&prompt);
        let mut turns = vec![ChatMessage::user(prompt.user_text.clone())];
        let mut reasks = 0;
        loop {
            let reply = match self.backend.complete(&prompt.system_text, &turns) {
                Ok(r) => r,
                Err(e) => {
                    return self.outcome(rec, &hash, String::new(), Err(AnalyzeError::Backend(e)))
                }
            };
            match parse_answers(&reply) {
                Ok(v) => return self.outcome(rec, &hash, reply, Ok(v)),
                Err(parse_err) => {
                    if reasks >= self.repair_retries {
                        return self.outcome(rec, &hash, reply, Err(AnalyzeError::Parse(parse_err)));
                    }
                    reasks += 1;
                    turns.push(ChatMessage::assistant(reply));
                    turns.push(ChatMessage::user(REPAIR_INSTRUCTION));
                }
            }
        }
    }

    fn outcome(
        &self,
        rec: &ScenarioRecord,
        prompt_sha256: &str,
        reply: String,
        result: Result<AnswerVector, AnalyzeError>,
    ) -> AnalysisOutcome {
        let audit = AuditRecord {
            scenario_id: rec.scenario_id.clone(),
            model: self.model_name.clone(),
            prompt_sha256: prompt_sha256.to_string(),
            reply,
            vector: result.as_ref().ok().copied(),
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        AnalysisOutcome {
            scenario_id: rec.scenario_id.clone(),
            result,
            audit,
        }
    }
}

/// Hex SHA-256 over the system and user texts.
pub fn prompt_hash(prompt: &RenderedPrompt) -> String {
    let mut hasher = Sha256::new();
    hasher.update(prompt.system_text.as_bytes());
    hasher.update([0u8]);
    hasher.update(prompt.user_text.as_bytes());
    hex::encode(hasher.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FocalMethod;

    fn record(id: &str) -> ScenarioRecord {
        ScenarioRecord {
            scenario_id: id.to_string(),
            focal: FocalMethod {
                id: "com.example.Calc.add(int,int)".to_string(),
                source_text: "int add(int a, int b) { return a + b; }".to_string(),
                project: "calc".to_string(),
                file_path: "src/Calc.java".to_string(),
            },
            test_suite_text: "void testAdd() { assertEquals(3, add(1, 2)); }".to_string(),
            scenario_text: "add(2, 2)".to_string(),
            label: None,
        }
    }

    fn analyzer(backend: ScriptedBackend) -> Analyzer<ScriptedBackend> {
        Analyzer {
            backend: std::sync::Arc::new(backend),
            template: PromptTemplate::default(),
            few_shot: FewShotBlock::default(),
            budget: 100_000,
            repair_retries: 2,
            model_name: "scripted".to_string(),
        }
    }

    fn all_vectors() -> Vec<AnswerVector> {
        (0u8..32)
            .map(|n| {
                AnswerVector::new([
                    n & 16 != 0,
                    n & 8 != 0,
                    n & 4 != 0,
                    n & 2 != 0,
                    n & 1 != 0,
                ])
            })
            .collect()
    }

    #[test]
    fn bitstring_round_trip() {
        for v in all_vectors() {
            let s = v.to_string();
            assert_eq!(s.len(), 5);
            assert_eq!(s.parse::<AnswerVector>().unwrap(), v);
        }
        assert!("1001".parse::<AnswerVector>().is_err());
        assert!("10012".parse::<AnswerVector>().is_err());
    }

    #[test]
    fn parses_plain_object() {
        let v = parse_answers(r#"{"Q1":"YES","Q2":"NO","Q3":"NO","Q4":"YES","Q5":"NO"}"#)
            .unwrap();
        assert_eq!(v.to_string(), "10010");
    }

    #[test]
    fn parses_fenced_and_prose_wrapped() {
        let reply = "Sure, here are my answers:\n```json\n{\"Q1\": \"NO\", \"Q2\": \"YES\", \
                     \"Q3\": \"NO\", \"Q4\": \"YES\", \"Q5\": \"NO\"}\n```\nLet me know!";
        assert_eq!(parse_answers(reply).unwrap().to_string(), "01010");
    }

    #[test]
    fn parse_ignores_key_order_and_case() {
        let reply = r#"{"q5":"yes","Q3":"YES","q1":"no","Q4":"NO","q2":"Yes"}"#;
        assert_eq!(parse_answers(reply).unwrap().to_string(), "01101");
    }

    #[test]
    fn parse_accepts_booleans() {
        let reply = r#"{"Q1":true,"Q2":false,"Q3":false,"Q4":true,"Q5":false}"#;
        assert_eq!(parse_answers(reply).unwrap().to_string(), "10010");
    }

    #[test]
    fn parse_reports_first_missing_key() {
        let err = parse_answers(r#"{"Q1":"YES"}"#).unwrap_err();
        assert_eq!(err.to_string(), "missing Q2");
    }

    #[test]
    fn parse_reports_bad_value() {
        let err =
            parse_answers(r#"{"Q1":"maybe","Q2":"NO","Q3":"NO","Q4":"NO","Q5":"NO"}"#)
                .unwrap_err();
        assert!(matches!(err, ParseError::BadValue { key: "Q1", .. }));
    }

    #[test]
    fn parse_rejects_reply_without_json() {
        assert_eq!(
            parse_answers("I cannot answer that."),
            Err(ParseError::NoJson)
        );
    }

    #[test]
    fn parse_skips_braces_in_prose() {
        let reply = "code {not json} then {\"Q1\":\"YES\",\"Q2\":\"NO\",\"Q3\":\"NO\",\
                     \"Q4\":\"YES\",\"Q5\":\"NO\"}";
        assert_eq!(parse_answers(reply).unwrap().to_string(), "10010");
    }

    #[test]
    fn canonical_round_trip_over_full_domain() {
        for v in all_vectors() {
            assert_eq!(parse_answers(&v.canonical_json()).unwrap(), v);
        }
    }

    #[test]
    fn scripted_backend_returns_mapped_reply() {
        let b = ScriptedBackend::new("{}").with_reply("s1", "mapped");
        let turns = vec![ChatMessage::user(format!("{}s1\nbody", SCENARIO_TAG))];
        assert_eq!(b.complete("sys", &turns).unwrap(), "mapped");
    }

    #[test]
    fn scripted_backend_uses_last_tag() {
        let b = ScriptedBackend::new("default")
            .with_reply("shot", "wrong")
            .with_reply("real", "right");
        let content = format!("{}shot\n...\n{}real\nscenario", SCENARIO_TAG, SCENARIO_TAG);
        let turns = vec![ChatMessage::user(content)];
        assert_eq!(b.complete("sys", &turns).unwrap(), "right");
    }

    #[test]
    fn scripted_backend_advances_per_user_turn() {
        let b = ScriptedBackend::new("default")
            .with_sequence("s1", vec!["first".to_string(), "second".to_string()]);
        let ask = ChatMessage::user(format!("{}s1", SCENARIO_TAG));
        let turns = vec![ask.clone()];
        assert_eq!(b.complete("sys", &turns).unwrap(), "first");
        let turns = vec![
            ask.clone(),
            ChatMessage::assistant("first"),
            ChatMessage::user("again"),
        ];
        assert_eq!(b.complete("sys", &turns).unwrap(), "second");
        let turns = vec![
            ask,
            ChatMessage::assistant("first"),
            ChatMessage::user("again"),
            ChatMessage::assistant("second"),
            ChatMessage::user("again"),
        ];
        assert_eq!(b.complete("sys", &turns).unwrap(), "second");
    }

    #[test]
    fn scripted_backend_falls_back_to_default() {
        let b = ScriptedBackend::new("fallback").with_reply("other", "nope");
        let turns = vec![ChatMessage::user(format!("{}unknown", SCENARIO_TAG))];
        assert_eq!(b.complete("sys", &turns).unwrap(), "fallback");
        let turns = vec![ChatMessage::user("no tag at all")];
        assert_eq!(b.complete("sys", &turns).unwrap(), "fallback");
    }

    #[test]
    fn analyze_decodes_prototype_reply() {
        let b = ScriptedBackend::new("").with_reply(
            "s1",
            r#"{"Q1":"NO","Q2":"YES","Q3":"NO","Q4":"YES","Q5":"NO"}"#,
        );
        let out = analyzer(b).analyze(&record("s1"), None);
        assert_eq!(out.result.unwrap().to_string(), "01010");
        assert_eq!(out.audit.vector.unwrap().to_string(), "01010");
        assert!(out.audit.error.is_none());
        assert_eq!(out.audit.prompt_sha256.len(), 64);
    }

    #[test]
    fn analyze_recovers_via_repair_round() {
        let b = ScriptedBackend::new("").with_sequence(
            "s1",
            vec![
                "I think the answer depends.".to_string(),
                r#"{"Q1":"YES","Q2":"NO","Q3":"NO","Q4":"YES","Q5":"NO"}"#.to_string(),
            ],
        );
        let out = analyzer(b).analyze(&record("s1"), None);
        assert_eq!(out.result.unwrap().to_string(), "10010");
    }

    #[test]
    fn analyze_surfaces_parse_error_after_retries() {
        let b = ScriptedBackend::new("still prose");
        let out = analyzer(b).analyze(&record("s1"), None);
        let err = out.result.unwrap_err();
        assert!(matches!(err, AnalyzeError::Parse(ParseError::NoJson)));
        assert_eq!(out.audit.error.as_deref(), Some("no JSON object found in reply"));
        assert_eq!(out.audit.reply, "still prose");
    }

    #[test]
    fn analyze_reports_budget_violation() {
        let b = ScriptedBackend::new("{}");
        let mut a = analyzer(b);
        a.budget = 1;
        let out = a.analyze(&record("s1"), None);
        let err = out.result.unwrap_err();
        assert_eq!(err.to_string(), "scenario exceeds context budget");
    }

    #[test]
    fn audit_line_has_no_volatile_fields() {
        let b = ScriptedBackend::new("").with_reply(
            "s1",
            r#"{"Q1":"YES","Q2":"NO","Q3":"NO","Q4":"YES","Q5":"NO"}"#,
        );
        let a = analyzer(b);
        let one = serde_json::to_string(&a.analyze(&record("s1"), None).audit).unwrap();
        let two = serde_json::to_string(&a.analyze(&record("s1"), None).audit).unwrap();
        assert_eq!(one, two);
    }
}
