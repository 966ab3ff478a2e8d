//! External capabilities the pipeline depends on: a chat model, an embedder
//! and a compile checker. Each has a live implementation and a deterministic
//! stub; [`BackendRegistry`] builds a [`Backends`] bundle by name.

mod cache;
mod compiler;
mod openai;
mod stub;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::model::Solution;

pub use cache::CachingEmbedder;
pub use compiler::{CommandChecker, CompilerSettings};
pub use openai::{LiveSettings, OpenAiClient};
pub use stub::{
    ChatFallback, ChatRule, ChatScript, CompileTable, NgramEmbedder, StubChat, StubCompiler,
    StubFixture,
};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),

    #[error("rate limited: {0}")]
    RateLimited(String),

    #[error("http status {status}: {body}")]
    Http { status: u16, body: String },

    #[error("malformed response: {0}")]
    Malformed(String),

    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::RateLimited(_) => true,
            BackendError::Http { status, .. } => *status >= 500,
            BackendError::Malformed(_) | BackendError::Config(_) => false,
        }
    }
}

/// Which side of the conversation authored a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    InstructorSide,
    AssistantSide,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(
        system_prompt: impl Into<String>,
        messages: Vec<ChatMessage>,
        temperature: f64,
        max_output_tokens: u32,
    ) -> Result<Self> {
        if messages.is_empty() {
            return Err(Error::Config("chat request needs at least one message".into()));
        }
        if temperature.is_nan() || temperature < 0.0 {
            return Err(Error::Config(format!("temperature must be >= 0, got {temperature}")));
        }
        if max_output_tokens == 0 {
            return Err(Error::Config("max_output_tokens must be positive".into()));
        }
        Ok(Self { system_prompt: system_prompt.into(), messages, temperature, max_output_tokens })
    }

    /// Stable digest used to key scripted stub responses: MD5 over the
    /// system prompt and messages, each field NUL-framed.
    pub fn digest(&self) -> String {
        let mut h = Md5::new();
        h.update(self.system_prompt.as_bytes());
        h.update([0u8]);
        for m in &self.messages {
            let role: &[u8] = match m.role {
                Role::InstructorSide => b"instructor-side",
                Role::AssistantSide => b"assistant-side",
            };
            h.update(role);
            h.update([0u8]);
            h.update(m.text.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn last_text(&self) -> &str {
        self.messages.last().map(|m| m.text.as_str()).unwrap_or("")
    }

    /// All prompt text, used by substring rules.
    pub fn full_text(&self) -> String {
        let mut s = self.system_prompt.clone();
        for m in &self.messages {
            s.push('\n');
            s.push_str(&m.text);
        }
        s
    }
}

pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedKind {
    Text,
    Code,
}

/// A unit-norm embedding, or the all-zero vector for empty input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// L2-normalizes `raw`. An all-zero input stays zero.
    pub fn normalized(mut raw: Vec<f64>) -> Self {
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            raw.iter_mut().for_each(|x| *x /= norm);
        }
        EmbeddingVector(raw)
    }

    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector(vec![0.0; dim])
    }

    /// Wraps stored values without renormalizing.
    pub fn from_raw(values: Vec<f64>) -> Self {
        EmbeddingVector(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Cosine similarity clamped to `[0, 1]`; zero vectors score 0.
pub fn clamped_cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 || a.dim() != b.dim() {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(0.0, 1.0)
}

pub trait Embedder: Send + Sync {
    /// Identifies the model/configuration; stored in pool headers.
    fn fingerprint(&self) -> String;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str, kind: EmbedKind) -> Result<EmbeddingVector, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileResult {
    pub ok: bool,
    pub diagnostics: String,
    pub per_file: BTreeMap<String, bool>,
}

impl CompileResult {
    /// Verdict for the empty solution, which never compiles.
    pub fn empty_solution() -> Self {
        CompileResult { ok: false, diagnostics: "empty solution".into(), per_file: BTreeMap::new() }
    }

    /// `ok` iff there is at least one checked file and all of them pass.
    pub fn from_per_file(per_file: BTreeMap<String, bool>, diagnostics: String) -> Self {
        let ok = !per_file.is_empty() && per_file.values().all(|&v| v);
        CompileResult { ok, diagnostics, per_file }
    }
}

pub trait CompileChecker: Send + Sync {
    fn name(&self) -> &str;
    fn check(&self, sol: &Solution) -> Result<CompileResult, BackendError>;
}

/// The three capabilities bundled for the pipeline stages.
#[derive(Clone)]
pub struct Backends {
    pub chat: Arc<dyn ChatBackend>,
    pub embedder: Arc<dyn Embedder>,
    pub compiler: Arc<dyn CompileChecker>,
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends")
            .field("chat", &self.chat.name())
            .field("embedder", &self.embedder.fingerprint())
            .field("compiler", &self.compiler.name())
            .finish()
    }
}

impl Backends {
    pub fn stub(fixture: StubFixture) -> Self {
        Backends {
            chat: Arc::new(StubChat::new(fixture.chat)),
            embedder: Arc::new(NgramEmbedder::new(fixture.embedder.ngram, fixture.embedder.dim)),
            compiler: Arc::new(StubCompiler::new(fixture.compile)),
        }
    }
}

/// Everything needed to construct a backend bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendSettings {
    /// Registered backend name: `stub` or `live`.
    pub kind: String,
    pub stub_fixture: Option<PathBuf>,
    pub live: LiveSettings,
    pub compiler: CompilerSettings,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            kind: "stub".into(),
            stub_fixture: None,
            live: LiveSettings::default(),
            compiler: CompilerSettings::default(),
        }
    }
}

impl BackendSettings {
    /// Resolves relative fixture paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(p) = &self.stub_fixture {
            if p.is_relative() {
                self.stub_fixture = Some(base.join(p));
            }
        }
    }
}

pub type BackendFactory = fn(&BackendSettings) -> Result<Backends>;

/// Name-keyed constructors for backend bundles.
pub struct BackendRegistry {
    factories: BTreeMap<&'static str, BackendFactory>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = BackendRegistry { factories: BTreeMap::new() };
        r.register("stub", build_stub);
        r.register("live", build_live);
        r
    }
}

impl BackendRegistry {
    pub fn register(&mut self, name: &'static str, factory: BackendFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn build(&self, settings: &BackendSettings) -> Result<Backends> {
        let factory = self.factories.get(settings.kind.as_str()).ok_or_else(|| {
            Error::UnknownStrategy {
                kind: "backend",
                name: settings.kind.clone(),
                available: self.names().join(", "),
            }
        })?;
        factory(settings)
    }
}

fn build_stub(settings: &BackendSettings) -> Result<Backends> {
    let fixture = match &settings.stub_fixture {
        Some(path) => StubFixture::load(path)?,
        None => StubFixture::default(),
    };
    Ok(Backends::stub(fixture))
}

fn build_live(settings: &BackendSettings) -> Result<Backends> {
    let client = Arc::new(OpenAiClient::from_settings(&settings.live)?);
    let embedder = CachingEmbedder::new(client.clone());
    Ok(Backends {
        chat: client,
        embedder: Arc::new(embedder),
        compiler: Arc::new(CommandChecker::new(settings.compiler.clone())?),
    })
}

pub(crate) fn digest_text(text: &str) -> String {
    hex::encode(Md5::digest(text.as_bytes()))
}

pub(crate) type SharedMap<K, V> = std::sync::RwLock<HashMap<K, V>>;
