//! Language-model access with deterministic record/replay.
//!
//! Every call is a [`CompletionRequest`]: a template id, its bindings, and
//! sampling parameters. The request's fingerprint keys the [`ReplayCache`].
//! In replay mode a cache miss is a hard error; in record mode a miss goes
//! to the [`Transport`] and the reply is stored before it is returned.

pub mod cache;
pub mod extract;
pub mod http;
pub mod limiter;
pub mod template;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CacheError, ReplayCache};
pub use limiter::RateLimiter;
pub use template::{TemplateError, TemplateSet};

use crate::hash::digest;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub template_id: String,
    pub bindings: BTreeMap<String, String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub sample_index: u32,
}

impl CompletionRequest {
    /// SHA-256 of the request's canonical JSON (bindings are sorted).
    pub fn fingerprint(&self) -> String {
        digest(&serde_json::to_vec(self).expect("request serializes"))
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("replay miss: no recorded reply for fingerprint {fingerprint} (template {template_id}, sample {sample_index})")]
    ReplayMiss {
        fingerprint: String,
        template_id: String,
        sample_index: u32,
    },
    #[error("retry budget exhausted after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Cache(#[from] CacheError),
}

impl LlmError {
    /// Errors that invalidate the whole run rather than one pair.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            LlmError::ReplayMiss { .. } | LlmError::Template(_) | LlmError::Cache(_)
        )
    }
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

/// Something that can answer a rendered prompt.
pub trait Transport: Send + Sync {
    fn send(&self, prompt: &str, temperature: f64, max_tokens: u32) -> Result<String, TransportError>;

    /// Transports that answer from structure rather than text can override
    /// this; the default forwards the rendered prompt.
    fn send_request(&self, req: &CompletionRequest, prompt: &str) -> Result<String, TransportError> {
        self.send(prompt, req.temperature, req.max_tokens)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Record,
    Replay,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "record" => Ok(Mode::Record),
            "replay" => Ok(Mode::Replay),
            other => Err(format!("unknown mode {other} (expected record or replay)")),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Cache-fronted client. Record mode reads through the cache too, so a
/// re-run after a crash does not pay for replies it already has.
pub struct Client {
    mode: Mode,
    cache: Arc<ReplayCache>,
    transport: Option<Box<dyn Transport>>,
    templates: Arc<TemplateSet>,
    limiter: RateLimiter,
    retry: RetryPolicy,
    network_calls: AtomicUsize,
}

impl Client {
    pub fn replay(cache: Arc<ReplayCache>, templates: Arc<TemplateSet>) -> Self {
        Self {
            mode: Mode::Replay,
            cache,
            transport: None,
            templates,
            limiter: RateLimiter::unlimited(),
            retry: RetryPolicy::default(),
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn record(
        cache: Arc<ReplayCache>,
        templates: Arc<TemplateSet>,
        transport: Box<dyn Transport>,
        limiter: RateLimiter,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            mode: Mode::Record,
            cache,
            transport: Some(transport),
            templates,
            limiter,
            retry,
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Transport calls made so far (cache hits excluded).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    fn fetch(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let transport = self
            .transport
            .as_ref()
            .ok_or_else(|| LlmError::Transport("record mode without a transport".into()))?;
        let prompt = self.templates.render(&req.template_id, &req.bindings)?;
        let mut delay = self.retry.base_delay;
        let mut last = String::new();
        for attempt in 1..=self.retry.max_attempts.max(1) {
            let result = {
                let _permit = self.limiter.acquire();
                self.network_calls.fetch_add(1, Ordering::SeqCst);
                transport.send_request(req, &prompt)
            };
            match result {
                Ok(reply) => return Ok(reply),
                Err(TransportError::Fatal(msg)) => return Err(LlmError::Transport(msg)),
                Err(TransportError::Transient(msg)) => {
                    log::warn!("transient model error (attempt {attempt}): {msg}");
                    last = msg;
                    if attempt < self.retry.max_attempts {
                        std::thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(LlmError::Exhausted {
            attempts: self.retry.max_attempts.max(1),
            last,
        })
    }
}

impl LanguageModel for Client {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        if let Some(reply) = self.cache.get(req)? {
            return Ok(reply);
        }
        match self.mode {
            Mode::Replay => Err(LlmError::ReplayMiss {
                fingerprint: req.fingerprint(),
                template_id: req.template_id.clone(),
                sample_index: req.sample_index,
            }),
            Mode::Record => {
                let reply = self.fetch(req)?;
                self.cache.insert(req, &reply)?;
                Ok(reply)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            max_tokens: 4096,
        }
    }
}

/// Sampling parameters per template id, with a default.
#[derive(Clone, Debug, Default)]
pub struct GenerationSettings {
    pub default: GenerationParams,
    pub per_template: BTreeMap<String, GenerationParams>,
}

impl GenerationSettings {
    pub fn for_template(&self, id: &str) -> GenerationParams {
        self.per_template.get(id).copied().unwrap_or(self.default)
    }
}

/// Builds validated requests from templates and sends them.
#[derive(Clone)]
pub struct Prompter {
    llm: Arc<dyn LanguageModel>,
    templates: Arc<TemplateSet>,
    settings: GenerationSettings,
}

impl Prompter {
    pub fn new(llm: Arc<dyn LanguageModel>, templates: Arc<TemplateSet>, settings: GenerationSettings) -> Self {
        Self {
            llm,
            templates,
            settings,
        }
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn request(
        &self,
        template_id: &str,
        bindings: BTreeMap<String, String>,
        sample_index: u32,
    ) -> Result<CompletionRequest, TemplateError> {
        let template = self.templates.get(template_id)?;
        if let Some(name) = template.unbound(&bindings) {
            return Err(TemplateError::Unbound {
                template: template_id.to_string(),
                name: name.to_string(),
            });
        }
        let params = self.settings.for_template(template_id);
        Ok(CompletionRequest {
            template_id: template_id.to_string(),
            bindings,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            sample_index,
        })
    }

    pub fn ask(
        &self,
        template_id: &str,
        bindings: BTreeMap<String, String>,
        sample_index: u32,
    ) -> Result<String, LlmError> {
        let req = self.request(template_id, bindings, sample_index)?;
        self.llm.complete(&req)
    }

    /// Asks up to `retries + 1` times (sample indices `first..`) until the
    /// reply holds a parseable structured block. `Ok(None)` means every
    /// reply was unparseable.
    pub fn ask_structured<T: DeserializeOwned>(
        &self,
        template_id: &str,
        bindings: &BTreeMap<String, String>,
        first: u32,
        retries: u32,
    ) -> Result<Option<T>, LlmError> {
        for attempt in 0..=retries {
            let reply = self.ask(template_id, bindings.clone(), first + attempt)?;
            if let Some(v) = extract::last_structured(&reply) {
                return Ok(Some(v));
            }
            log::debug!("{template_id}: unparseable reply on attempt {attempt}");
        }
        Ok(None)
    }
}

/// Builds a binding map from `(name, value)` pairs.
pub fn bindings<const N: usize>(pairs: [(&str, &str); N]) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

type Responder = dyn Fn(&CompletionRequest) -> Option<String> + Send + Sync;

/// A model answered by a closure, logging every request. Used for offline
/// tests and for recording fixture transcripts through [`Client`].
pub struct ScriptedModel {
    responder: Box<Responder>,
    log: Mutex<Vec<CompletionRequest>>,
}

impl ScriptedModel {
    pub fn new(responder: impl Fn(&CompletionRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        Self {
            responder: Box::new(responder),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.log.lock().expect("log poisoned").clone()
    }

    pub fn count(&self, template_id: &str) -> usize {
        self.log
            .lock()
            .expect("log poisoned")
            .iter()
            .filter(|r| r.template_id == template_id)
            .count()
    }
}

impl LanguageModel for ScriptedModel {
    fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        self.log.lock().expect("log poisoned").push(req.clone());
        (self.responder)(req).ok_or_else(|| LlmError::ReplayMiss {
            fingerprint: req.fingerprint(),
            template_id: req.template_id.clone(),
            sample_index: req.sample_index,
        })
    }
}

impl Transport for ScriptedModel {
    fn send(&self, _prompt: &str, _t: f64, _m: u32) -> Result<String, TransportError> {
        Err(TransportError::Fatal("scripted transport needs the request".into()))
    }

    fn send_request(&self, req: &CompletionRequest, _prompt: &str) -> Result<String, TransportError> {
        self.complete(req)
            .map_err(|e| TransportError::Fatal(e.to_string()))
    }
}
