//! Chat-completion client: prompt templates, cached and retried transport,
//! and strict parsing of model replies into response distributions.
//!
//! Exchanges are cached one JSON document per request under the cache
//! directory, named by the request hash. The hash covers the model id, the
//! rendered prompt and the decoding parameters.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::GroupedDistribution;
use crate::persona::Persona;
use crate::respond::{Method, ResponseBackend, Tier};
use crate::schema::{AttributeSchema, Question};

pub const API_KEY_ENV: &str = "PERSONA_SYNTH_API_KEY";
pub const CACHE_DIR_ENV: &str = "PERSONA_SYNTH_CACHE_DIR";

/// Accepted band for a reply's total before renormalization, as a fraction.
pub const PARSE_SUM_BAND: (f64, f64) = (0.98, 1.02);

const SYSTEM_PROMPT: &str = "You simulate answers of survey respondents. Reply with a single JSON object only.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmSettings {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_max_ms: u64,
    pub max_inflight: usize,
    pub timeout_secs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            temperature: 0.7,
            max_tokens: 400,
            max_retries: 3,
            backoff_base_ms: 500,
            backoff_max_ms: 30_000,
            max_inflight: 4,
            timeout_secs: 60,
            cache_dir: None,
        }
    }
}

impl LlmSettings {
    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .backoff_base_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.backoff_max_ms);
        Duration::from_millis(ms)
    }
}

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

const PLACEHOLDERS: [&str; 4] = ["question", "options", "persona", "stats"];

const NAIVE_TEMPLATE: &str = "Generate a population based on general demographic knowledge of Germany in 2017 \
and answer the following survey question for a typical member of that population.\n\n\
Question: {question}\nResponse options:\n{options}\n\n\
Reply with a JSON object mapping every response option to the percentage of people choosing it, \
for example {{\"option\": 25}}. Percentages must sum to 100.";

const STRUCTURED_TEMPLATE: &str = "Simulate mobility preferences while maintaining realistic correlations between age, \
household type and economic status based on MiD 2017 data.\n\n\
Respondent profile:\n{persona}\n\n\
Question: {question}\nResponse options:\n{options}\n\n\
Reply with a JSON object mapping every response option to the percentage of people with this profile \
choosing it, for example {{\"option\": 25}}. Percentages must sum to 100.";

const NAIVE_PERSONA_TEMPLATE: &str = "Using general demographic knowledge of Germany in 2017, simulate how people with \
the following profile answer a survey question.\n\n\
Respondent profile:\n{persona}\n\n\
Question: {question}\nResponse options:\n{options}\n\n\
Reply with a JSON object mapping every response option to the percentage of people with this profile \
choosing it, for example {{\"option\": 25}}. Percentages must sum to 100.";

const GUIDED_TEMPLATE: &str = "Simulate mobility preferences while maintaining realistic correlations between age, \
household type and economic status based on MiD 2017 data.\n\n\
Respondent profile:\n{persona}\n\n\
Question: {question}\nResponse options:\n{options}\n\n\
Expected response statistics from the benchmark survey:\n{stats}\n\n\
Keep your answer consistent with these statistics. Reply with a JSON object mapping every response option \
to the percentage of people with this profile choosing it, for example {{\"option\": 25}}. \
Percentages must sum to 100.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub method: Method,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(method: Method, text: impl Into<String>) -> Result<Self> {
        let t = PromptTemplate {
            method,
            text: text.into(),
        };
        t.placeholders()?;
        Ok(t)
    }

    /// Built-in template for a method.
    pub fn default_for(method: Method) -> Self {
        let text = match (method.tier, method.persona) {
            (Tier::Naive, false) => NAIVE_TEMPLATE,
            (Tier::Naive, true) => NAIVE_PERSONA_TEMPLATE,
            (Tier::Structured, _) => STRUCTURED_TEMPLATE,
            (Tier::Guided, _) => GUIDED_TEMPLATE,
        };
        PromptTemplate {
            method,
            text: text.to_string(),
        }
    }

    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        let mut chars = self.text.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' if chars.peek() == Some(&'{') => {
                    chars.next();
                }
                '}' if chars.peek() == Some(&'}') => {
                    chars.next();
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(ch) => name.push(ch),
                            None => return Err(Error::Template("unterminated placeholder".into())),
                        }
                    }
                    if !PLACEHOLDERS.contains(&name.as_str()) {
                        return Err(Error::Template(format!("unknown placeholder {{{name}}}")));
                    }
                    out.push(name);
                }
                '}' => return Err(Error::Template("unmatched '}'".into())),
                _ => {}
            }
        }
        Ok(out)
    }

    pub fn uses(&self, placeholder: &str) -> bool {
        self.placeholders()
            .map(|p| p.iter().any(|n| n == placeholder))
            .unwrap_or(false)
    }
}

fn format_persona(schema: &AttributeSchema, persona: &Persona) -> String {
    schema
        .attributes()
        .iter()
        .zip(persona.labels(schema))
        .map(|(a, l)| format!("- {}: {}", a.name, l))
        .collect::<Vec<_>>()
        .join("\n")
}

fn format_stats(stats: &GroupedDistribution) -> String {
    let mut lines = vec![format!("Share of each response by {}:", stats.group_attribute)];
    for g in &stats.groups {
        let cells: Vec<String> = stats
            .responses
            .iter()
            .zip(&g.shares)
            .map(|(r, s)| format!("{r} {:.2}%", s * 100.0))
            .collect();
        lines.push(format!("- {}: {}", g.category, cells.join(", ")));
    }
    lines.join("\n")
}

/// Fills a template. Every placeholder it uses must be satisfiable from the context.
pub fn render_prompt(
    template: &PromptTemplate,
    schema: &AttributeSchema,
    persona: Option<&Persona>,
    question: &Question,
    stats: Option<&GroupedDistribution>,
) -> Result<String> {
    template.placeholders()?;
    let mut out = String::with_capacity(template.text.len() + 256);
    let mut chars = template.text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '{' if chars.peek() == Some(&'{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek() == Some(&'}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let name: String = chars.by_ref().take_while(|&ch| ch != '}').collect();
                match name.as_str() {
                    "question" => out.push_str(&question.text),
                    "options" => {
                        let opts: Vec<String> = question.responses.iter().map(|r| format!("- {r}")).collect();
                        out.push_str(&opts.join("\n"));
                    }
                    "persona" => {
                        let p = persona.ok_or_else(|| {
                            Error::Template(format!("template for {} needs a persona", template.method))
                        })?;
                        out.push_str(&format_persona(schema, p));
                    }
                    "stats" => {
                        let s = stats.ok_or_else(|| {
                            Error::Template(format!("template for {} needs response statistics", template.method))
                        })?;
                        out.push_str(&format_stats(s));
                    }
                    other => return Err(Error::Template(format!("unknown placeholder {{{other}}}"))),
                }
            }
            _ => out.push(c),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Transport
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResponse {
    pub status: u16,
    pub body: String,
}

/// Sends one JSON request. `Err` is a connection-level failure.
pub trait Transport: Send + Sync {
    fn post(&self, url: &str, api_key: &str, body: &Value) -> std::result::Result<TransportResponse, String>;
}

/// HTTPS transport.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpTransport {
            agent: config.into(),
        }
    }
}

impl Transport for HttpTransport {
    fn post(&self, url: &str, api_key: &str, body: &Value) -> std::result::Result<TransportResponse, String> {
        let mut resp = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {api_key}"))
            .send_json(body)
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(TransportResponse { status, body })
    }
}

type Handler = dyn Fn(usize, &Value) -> std::result::Result<TransportResponse, String> + Send + Sync;

/// Transport backed by a closure; counts calls. Used for offline runs and tests.
pub struct FnTransport {
    handler: Box<Handler>,
    calls: AtomicUsize,
}

impl FnTransport {
    /// `handler` receives the zero-based call number and the request body.
    pub fn new(handler: impl Fn(usize, &Value) -> std::result::Result<TransportResponse, String> + Send + Sync + 'static) -> Self {
        FnTransport {
            handler: Box::new(handler),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Wraps `content` in a chat-completion response body.
    pub fn completion(content: &str) -> TransportResponse {
        TransportResponse {
            status: 200,
            body: json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string(),
        }
    }
}

impl Transport for FnTransport {
    fn post(&self, _url: &str, _api_key: &str, body: &Value) -> std::result::Result<TransportResponse, String> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        (self.handler)(n, body)
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn post(&self, url: &str, api_key: &str, body: &Value) -> std::result::Result<TransportResponse, String> {
        (**self).post(url, api_key, body)
    }
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub request_hash: String,
    pub model: String,
    pub prompt: String,
    pub raw_response: String,
    pub parse_status: String,
    /// Seconds since the Unix epoch when the exchange completed.
    pub timestamp: u64,
    /// Failed attempts before the successful one.
    pub retries: u32,
    #[serde(skip)]
    pub from_cache: bool,
}

#[derive(Serialize)]
struct HashInput<'a> {
    model: &'a str,
    system: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
}

/// Hex SHA-256 of (model, prompt, decoding parameters).
pub fn request_hash(settings: &LlmSettings, prompt: &str) -> String {
    let input = HashInput {
        model: &settings.model,
        system: SYSTEM_PROMPT,
        prompt,
        temperature: settings.temperature,
        max_tokens: settings.max_tokens,
    };
    let bytes = serde_json::to_vec(&input).expect("hash input serializes");
    hex::encode(Sha256::digest(&bytes))
}

pub struct LlmClient {
    settings: LlmSettings,
    transport: Box<dyn Transport>,
    api_key: String,
    memory: Mutex<HashMap<String, LlmExchange>>,
}

impl LlmClient {
    /// Fails before any network activity when no credential is given.
    pub fn new(settings: LlmSettings, transport: Box<dyn Transport>, api_key: Option<String>) -> Result<Self> {
        let api_key = match api_key {
            Some(k) if !k.trim().is_empty() => k,
            _ => {
                return Err(Error::Config(format!(
                    "no API credential; set {API_KEY_ENV}"
                )))
            }
        };
        if settings.max_inflight == 0 {
            return Err(Error::Config("max_inflight must be at least 1".into()));
        }
        Ok(LlmClient {
            settings,
            transport,
            api_key,
            memory: Mutex::new(HashMap::new()),
        })
    }

    /// HTTPS client with the credential taken from the environment.
    pub fn from_env(settings: LlmSettings) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV).ok();
        let transport = HttpTransport::new(Duration::from_secs(settings.timeout_secs));
        Self::new(settings, Box::new(transport), key)
    }

    pub fn settings(&self) -> &LlmSettings {
        &self.settings
    }

    fn cache_path(&self, hash: &str) -> Option<PathBuf> {
        self.settings.cache_dir.as_ref().map(|d| d.join(format!("{hash}.json")))
    }

    fn load_cached(&self, hash: &str) -> Result<Option<LlmExchange>> {
        if let Some(ex) = self.memory.lock().expect("cache lock").get(hash) {
            return Ok(Some(ex.clone()));
        }
        let Some(path) = self.cache_path(hash) else {
            return Ok(None);
        };
        match std::fs::read(&path) {
            Ok(bytes) => {
                let ex: LlmExchange = serde_json::from_slice(&bytes)?;
                Ok(Some(ex))
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn store(&self, ex: &LlmExchange) -> Result<()> {
        self.memory
            .lock()
            .expect("cache lock")
            .insert(ex.request_hash.clone(), ex.clone());
        if let Some(path) = self.cache_path(&ex.request_hash) {
            write_atomic(&path, &serde_json::to_vec_pretty(ex)?)?;
        }
        Ok(())
    }

    /// Records the outcome of parsing a cached exchange.
    pub fn record_parse_status(&self, hash: &str, status: &str) -> Result<()> {
        if let Some(mut ex) = self.load_cached(hash)? {
            if ex.parse_status != status {
                ex.parse_status = status.to_string();
                self.store(&ex)?;
            }
        }
        Ok(())
    }

    /// Returns the cached exchange for `prompt` or performs the call.
    pub fn complete(&self, prompt: &str) -> Result<LlmExchange> {
        let hash = request_hash(&self.settings, prompt);
        if let Some(mut ex) = self.load_cached(&hash)? {
            ex.from_cache = true;
            return Ok(ex);
        }
        let body = json!({
            "model": self.settings.model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": prompt},
            ],
            "temperature": self.settings.temperature,
            "max_tokens": self.settings.max_tokens,
        });
        let url = self.settings.endpoint();
        let mut attempt = 0u32;
        loop {
            let failure = match self.transport.post(&url, &self.api_key, &body) {
                Ok(resp) if (200..300).contains(&resp.status) => {
                    let content = extract_content(&resp.body)?;
                    let ex = LlmExchange {
                        request_hash: hash,
                        model: self.settings.model.clone(),
                        prompt: prompt.to_string(),
                        raw_response: content,
                        parse_status: "unparsed".into(),
                        timestamp: SystemTime::now()
                            .duration_since(UNIX_EPOCH)
                            .map(|d| d.as_secs())
                            .unwrap_or(0),
                        retries: attempt,
                        from_cache: false,
                    };
                    self.store(&ex)?;
                    return Ok(ex);
                }
                Ok(resp) => {
                    let retryable = resp.status == 429 || resp.status >= 500;
                    let err = Error::Transport {
                        status: Some(resp.status),
                        message: truncate(&resp.body, 300),
                    };
                    if !retryable {
                        return Err(err);
                    }
                    err
                }
                Err(message) => Error::Transport { status: None, message },
            };
            if attempt >= self.settings.max_retries {
                log::warn!("giving up after {} attempts: {failure}", attempt + 1);
                return Err(match failure {
                    Error::Transport { status, message } => Error::Transport {
                        status,
                        message: format!("retries exhausted after {} attempts: {message}", attempt + 1),
                    },
                    other => other,
                });
            }
            let delay = self.settings.backoff(attempt);
            log::debug!("attempt {} failed ({failure}); retrying in {delay:?}", attempt + 1);
            if !delay.is_zero() {
                std::thread::sleep(delay);
            }
            attempt += 1;
        }
    }
}

fn truncate(s: &str, n: usize) -> String {
    if s.len() <= n {
        s.to_string()
    } else {
        let mut end = n;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &s[..end])
    }
}

fn extract_content(body: &str) -> Result<String> {
    let v: Value = serde_json::from_str(body).map_err(|e| Error::Parse {
        message: format!("response body is not JSON: {e}"),
        raw: body.to_string(),
    })?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::Parse {
            message: "response has no choices[0].message.content".into(),
            raw: body.to_string(),
        })
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("exchange"),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Reply parsing
// ---------------------------------------------------------------------------

fn parse_err(message: impl Into<String>, raw: &str) -> Error {
    Error::Parse {
        message: message.into(),
        raw: raw.to_string(),
    }
}

/// Extracts one share per response option from a JSON object in the reply.
///
/// Shares may be percentages or fractions; the total must fall in
/// [`PARSE_SUM_BAND`] (after dividing by 100 for percentages) and is then
/// renormalized to exactly one.
pub fn parse_distribution(raw: &str, question: &Question) -> Result<Vec<f64>> {
    let start = raw.find('{').ok_or_else(|| parse_err("no JSON object in reply", raw))?;
    let end = raw.rfind('}').ok_or_else(|| parse_err("no JSON object in reply", raw))?;
    if end < start {
        return Err(parse_err("no JSON object in reply", raw));
    }
    let mut obj: Value =
        serde_json::from_str(&raw[start..=end]).map_err(|e| parse_err(format!("invalid JSON: {e}"), raw))?;
    // tolerate a single wrapping key such as {"distribution": {...}}
    if let Value::Object(map) = &obj {
        if map.len() == 1 {
            if let Some(inner @ Value::Object(_)) = map.values().next() {
                obj = inner.clone();
            }
        }
    }
    let map = obj
        .as_object()
        .ok_or_else(|| parse_err("reply is not a JSON object", raw))?;
    let by_label: BTreeMap<&str, &Value> = map.iter().map(|(k, v)| (k.trim(), v)).collect();
    let mut shares = Vec::with_capacity(question.responses.len());
    for option in &question.responses {
        let v = by_label
            .get(option.as_str())
            .ok_or_else(|| parse_err(format!("missing option {option:?}"), raw))?;
        let x = match v {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => s.trim().trim_end_matches('%').trim().parse().ok(),
            _ => None,
        }
        .ok_or_else(|| parse_err(format!("option {option:?} has a non-numeric share"), raw))?;
        if !x.is_finite() || x < 0.0 {
            return Err(parse_err(format!("option {option:?} has invalid share {x}"), raw));
        }
        shares.push(x);
    }
    let total: f64 = shares.iter().sum();
    let (lo, hi) = PARSE_SUM_BAND;
    let scale = if (lo..=hi).contains(&total) {
        1.0
    } else if (lo * 100.0..=hi * 100.0).contains(&total) {
        100.0
    } else {
        return Err(parse_err(format!("shares total {total}, outside the accepted band"), raw));
    };
    let normalized_total = total / scale;
    Ok(shares.into_iter().map(|s| s / scale / normalized_total).collect())
}

// ---------------------------------------------------------------------------
// Backend
// ---------------------------------------------------------------------------

/// Response backend that asks a language model for each persona's distribution.
pub struct LlmBackend {
    client: LlmClient,
    template: PromptTemplate,
}

impl LlmBackend {
    pub fn new(client: LlmClient, template: PromptTemplate) -> Self {
        LlmBackend { client, template }
    }

    pub fn client(&self) -> &LlmClient {
        &self.client
    }

    fn persona_for_prompt<'a>(&self, persona: &'a Persona) -> Option<&'a Persona> {
        self.template.uses("persona").then_some(persona)
    }

    fn ask(&self, prompt: &str, question: &Question) -> Result<Vec<f64>> {
        let ex = self.client.complete(prompt)?;
        match parse_distribution(&ex.raw_response, question) {
            Ok(v) => {
                self.client.record_parse_status(&ex.request_hash, "ok")?;
                Ok(v)
            }
            Err(e) => {
                self.client.record_parse_status(&ex.request_hash, &format!("error: {e}"))?;
                Err(Error::Backend {
                    message: format!("unusable model reply for request {}: {e}", ex.request_hash),
                    raw: Some(ex.raw_response),
                })
            }
        }
    }
}

impl ResponseBackend for LlmBackend {
    fn id(&self) -> String {
        format!("llm:{}", self.client.settings.model)
    }

    fn profile(
        &self,
        schema: &AttributeSchema,
        persona: &Persona,
        question: &Question,
        stats: Option<&GroupedDistribution>,
    ) -> Result<Vec<f64>> {
        let prompt = render_prompt(&self.template, schema, self.persona_for_prompt(persona), question, stats)?;
        self.ask(&prompt, question)
    }

    /// Renders every prompt first, sends each distinct prompt once with at
    /// most `max_inflight` requests outstanding, then maps results back.
    fn profiles(
        &self,
        schema: &AttributeSchema,
        personas: &[Persona],
        question: &Question,
        stats: Option<&GroupedDistribution>,
    ) -> Result<Vec<Vec<f64>>> {
        let prompts = personas
            .iter()
            .map(|p| render_prompt(&self.template, schema, self.persona_for_prompt(p), question, stats))
            .collect::<Result<Vec<_>>>()?;
        let mut unique: Vec<&str> = prompts.iter().map(String::as_str).collect();
        unique.sort_unstable();
        unique.dedup();

        let next = AtomicUsize::new(0);
        let results: Mutex<HashMap<&str, Result<Vec<f64>>>> = Mutex::new(HashMap::new());
        let workers = self.client.settings.max_inflight.min(unique.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&prompt) = unique.get(i) else { break };
                    let r = self.ask(prompt, question);
                    results.lock().expect("results lock").insert(prompt, r);
                });
            }
        });
        let mut results = results.into_inner().expect("results lock");
        // report the first failure in prompt order so errors are reproducible
        for p in &unique {
            if let Some(Err(_)) = results.get(p) {
                return Err(results.remove(p).unwrap().unwrap_err());
            }
        }
        Ok(prompts
            .iter()
            .map(|p| results[p.as_str()].as_ref().expect("checked").clone())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::GroupShares;
    use crate::schema::SurveyConfig;

    fn walking() -> (SurveyConfig, Question) {
        let cfg = SurveyConfig::default_config();
        let q = cfg.question("walking").unwrap().clone();
        (cfg, q)
    }

    fn settings() -> LlmSettings {
        LlmSettings {
            backoff_base_ms: 0,
            ..Default::default()
        }
    }

    #[test]
    fn parse_percentages() {
        let (_, q) = walking();
        let raw = r#"Sure: {"Completely Agree": 60, "Rather Agree": 25, "Partly Agree": 10, "Rather Disagree": 4, "Completely Disagree": 1}"#;
        let v = parse_distribution(raw, &q).unwrap();
        let expected = [0.60, 0.25, 0.10, 0.04, 0.01];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn parse_fraction_and_band() {
        let (_, q) = walking();
        let raw = r#"{"Completely Agree": 0.3, "Rather Agree": 0.3, "Partly Agree": 0.2, "Rather Disagree": 0.1, "Completely Disagree": 0.095}"#;
        let v = parse_distribution(raw, &q).unwrap();
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let pct = r#"{"Completely Agree": "30%", "Rather Agree": 30, "Partly Agree": 20, "Rather Disagree": 10, "Completely Disagree": 9.5}"#;
        let v = parse_distribution(pct, &q).unwrap();
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((v[0] - 30.0 / 99.5).abs() < 1e-12);
        let off = r#"{"Completely Agree": 50, "Rather Agree": 30, "Partly Agree": 20, "Rather Disagree": 10, "Completely Disagree": 10}"#;
        assert!(matches!(parse_distribution(off, &q), Err(Error::Parse { .. })));
    }

    #[test]
    fn parse_rejects_missing_and_negative() {
        let (_, q) = walking();
        let missing = r#"{"Completely Agree": 60, "Rather Agree": 25, "Partly Agree": 10, "Rather Disagree": 5}"#;
        let err = parse_distribution(missing, &q).unwrap_err();
        assert_eq!(err.raw_payload(), Some(missing));
        let neg = r#"{"Completely Agree": 70, "Rather Agree": 25, "Partly Agree": 10, "Rather Disagree": -5, "Completely Disagree": 0}"#;
        assert!(parse_distribution(neg, &q).is_err());
        assert!(parse_distribution("no json here", &q).is_err());
    }

    #[test]
    fn parse_wrapped_object() {
        let (_, q) = walking();
        let raw = r#"{"distribution": {"Completely Agree": 20, "Rather Agree": 20, "Partly Agree": 20, "Rather Disagree": 20, "Completely Disagree": 20}}"#;
        assert_eq!(parse_distribution(raw, &q).unwrap(), vec![0.2; 5]);
    }

    #[test]
    fn template_gating() {
        let (cfg, q) = walking();
        let naive = PromptTemplate::default_for("naive".parse().unwrap());
        let text = render_prompt(&naive, cfg.schema(), None, &q, None).unwrap();
        assert!(text.contains(&q.text));
        assert!(!text.contains("Respondent profile"));
        assert!(!text.contains("Expected response statistics"));
        assert!(text.contains("{\"option\": 25}"));
        assert!(text.contains("Generate a population based on general demographic knowledge"));
    }

    #[test]
    fn guided_persona_prompt_is_complete() {
        let (cfg, q) = walking();
        let t = PromptTemplate::default_for("guided-persona".parse().unwrap());
        let persona = Persona(vec![3, 2, 0, 4, 7]);
        let stats = GroupedDistribution {
            question_id: "walking".into(),
            group_attribute: "Age Group".into(),
            responses: q.responses.clone(),
            groups: vec![GroupShares { category: "40--49".into(), shares: vec![0.3, 0.32, 0.23, 0.1, 0.05] }],
            omitted: vec![],
        };
        let text = render_prompt(&t, cfg.schema(), Some(&persona), &q, Some(&stats)).unwrap();
        for label in persona.labels(cfg.schema()) {
            assert!(text.contains(label), "missing {label}");
        }
        for pct in ["30.00%", "32.00%", "23.00%", "10.00%", "5.00%"] {
            assert!(text.contains(pct), "missing {pct}");
        }
        assert!(text.contains("Simulate mobility preferences while maintaining realistic correlations"));
        assert!(render_prompt(&t, cfg.schema(), Some(&persona), &q, None).is_err());
        assert!(render_prompt(&t, cfg.schema(), None, &q, Some(&stats)).is_err());
    }

    #[test]
    fn unknown_placeholder() {
        let m = "naive".parse().unwrap();
        assert!(matches!(PromptTemplate::new(m, "hello {name}"), Err(Error::Template(_))));
        assert!(PromptTemplate::new(m, "literal {{braces}} and {question}").is_ok());
        let bad = PromptTemplate { method: m, text: "{weather}".into() };
        let (cfg, q) = walking();
        assert!(render_prompt(&bad, cfg.schema(), None, &q, None).is_err());
    }

    #[test]
    fn hash_covers_decoding_parameters() {
        let s = settings();
        let a = request_hash(&s, "p");
        assert_eq!(a, request_hash(&s, "p"));
        assert_ne!(a, request_hash(&s, "q"));
        let hot = LlmSettings { temperature: 1.0, ..s.clone() };
        assert_ne!(a, request_hash(&hot, "p"));
        let long = LlmSettings { max_tokens: 800, ..s.clone() };
        assert_ne!(a, request_hash(&long, "p"));
        let other = LlmSettings { model: "other".into(), ..s };
        assert_ne!(a, request_hash(&other, "p"));
    }

    #[test]
    fn missing_credential_fails_fast() {
        let t = std::sync::Arc::new(FnTransport::new(|_, _| Ok(FnTransport::completion("{}"))));
        let err = LlmClient::new(settings(), Box::new(t.clone()), None);
        assert!(matches!(err, Err(Error::Config(_))));
        assert!(LlmClient::new(settings(), Box::new(t.clone()), Some("  ".into())).is_err());
        assert_eq!(t.calls(), 0);
    }

    #[test]
    fn non_retryable_status_fails_immediately() {
        let t = std::sync::Arc::new(FnTransport::new(|_, _| {
            Ok(TransportResponse { status: 401, body: "unauthorized".into() })
        }));
        let c = LlmClient::new(settings(), Box::new(t.clone()), Some("k".into())).unwrap();
        match c.complete("p") {
            Err(Error::Transport { status: Some(401), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.calls(), 1);
    }

    #[test]
    fn retries_exhausted() {
        let t = std::sync::Arc::new(FnTransport::new(|_, _| {
            Ok(TransportResponse { status: 503, body: "busy".into() })
        }));
        let c = LlmClient::new(settings(), Box::new(t.clone()), Some("k".into())).unwrap();
        match c.complete("p") {
            Err(Error::Transport { status: Some(503), message }) => assert!(message.contains("exhausted")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(t.calls(), 4);
    }

    #[test]
    fn backoff_is_exponential_and_capped() {
        let s = LlmSettings { backoff_base_ms: 100, backoff_max_ms: 1000, ..Default::default() };
        assert_eq!(s.backoff(0), Duration::from_millis(100));
        assert_eq!(s.backoff(1), Duration::from_millis(200));
        assert_eq!(s.backoff(3), Duration::from_millis(800));
        assert_eq!(s.backoff(4), Duration::from_millis(1000));
    }
}
