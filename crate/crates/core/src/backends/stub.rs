//! Deterministic offline backends driven by a fixture file.
//!
//! Fixture layout (JSON):
//!
//! ```json
//! {
//!   "chat": {
//!     "responses": { "<request digest>": "reply" },
//!     "rules": [ { "contains": ["You are the instructor", "(no files yet)"], "respond": "..." } ],
//!     "fallback": { "mode": "echo" }
//!   },
//!   "compile": {
//!     "verdicts": { "<solution id>": true },
//!     "fail_if_contains": ["SyntaxError"],
//!     "default": true
//!   },
//!   "embedder": { "ngram": 3, "dim": 1024 }
//! }
//! ```
//!
//! Chat lookup order is exact request digest, then the first rule whose
//! substrings all occur in the prompt (or in the part after the rule's
//! optional `after` anchor), then the fallback. Fallback modes are
//! `none` (configuration error), `echo` (returns the last message text) and
//! `fixed` (returns `text`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    BackendError, ChatBackend, ChatRequest, CompileChecker, CompileResult, EmbedKind, Embedder,
    EmbeddingVector,
};
use crate::error::{Error, Result};
use crate::model::{Solution, SolutionId};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StubFixture {
    pub chat: ChatScript,
    pub compile: CompileTable,
    pub embedder: NgramSettings,
}

impl StubFixture {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&raw)
            .map_err(|e| Error::Format { path: path.display().to_string(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatScript {
    pub responses: BTreeMap<String, String>,
    pub rules: Vec<ChatRule>,
    pub fallback: ChatFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRule {
    pub contains: Vec<String>,
    pub respond: String,
    /// When set, `contains` is matched only against the text after the last
    /// occurrence of this anchor (the whole prompt if the anchor is absent).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<String>,
}

impl ChatRule {
    pub fn new<I, S>(contains: I, respond: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ChatRule { contains: contains.into_iter().map(Into::into).collect(), respond: respond.into(), after: None }
    }

    pub fn after(mut self, anchor: impl Into<String>) -> Self {
        self.after = Some(anchor.into());
        self
    }

    fn matches(&self, text: &str) -> bool {
        let scope = match &self.after {
            Some(a) => text.rfind(a.as_str()).map_or(text, |i| &text[i + a.len()..]),
            None => text,
        };
        self.contains.iter().all(|s| scope.contains(s.as_str()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ChatFallback {
    #[default]
    None,
    Echo,
    Fixed { text: String },
}

pub struct StubChat {
    script: ChatScript,
}

impl StubChat {
    pub fn new(script: ChatScript) -> Self {
        StubChat { script }
    }

    pub fn echo() -> Self {
        StubChat::new(ChatScript { fallback: ChatFallback::Echo, ..Default::default() })
    }
}

impl ChatBackend for StubChat {
    fn name(&self) -> &str {
        "stub"
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let digest = req.digest();
        if let Some(reply) = self.script.responses.get(&digest) {
            return Ok(reply.clone());
        }
        if !self.script.rules.is_empty() {
            let text = req.full_text();
            if let Some(rule) =
                self.script.rules.iter().find(|r| r.matches(&text))
            {
                return Ok(rule.respond.clone());
            }
        }
        match &self.script.fallback {
            ChatFallback::None => Err(BackendError::Config(format!(
                "no scripted response for request {digest} and no fallback configured"
            ))),
            ChatFallback::Echo => Ok(req.last_text().to_string()),
            ChatFallback::Fixed { text } => Ok(text.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompileTable {
    pub verdicts: BTreeMap<SolutionId, bool>,
    /// Any file containing one of these substrings fails.
    pub fail_if_contains: Vec<String>,
    pub default: bool,
}

impl Default for CompileTable {
    fn default() -> Self {
        CompileTable { verdicts: BTreeMap::new(), fail_if_contains: Vec::new(), default: true }
    }
}

/// Verdict-table compile checker keyed by solution id.
pub struct StubCompiler {
    table: CompileTable,
}

impl StubCompiler {
    pub fn new(table: CompileTable) -> Self {
        StubCompiler { table }
    }

    pub fn from_verdicts<I: IntoIterator<Item = (SolutionId, bool)>>(verdicts: I, default: bool) -> Self {
        StubCompiler::new(CompileTable {
            verdicts: verdicts.into_iter().collect(),
            fail_if_contains: Vec::new(),
            default,
        })
    }
}

impl CompileChecker for StubCompiler {
    fn name(&self) -> &str {
        "stub"
    }

    fn check(&self, sol: &Solution) -> Result<CompileResult, BackendError> {
        if sol.is_empty() {
            return Ok(CompileResult::empty_solution());
        }
        let id = sol.id();
        let per_file: BTreeMap<String, bool> = match self.table.verdicts.get(&id) {
            Some(&v) => sol.files().keys().map(|k| (k.clone(), v)).collect(),
            None => sol
                .files()
                .iter()
                .map(|(name, content)| {
                    let bad = self.table.fail_if_contains.iter().any(|m| content.contains(m.as_str()));
                    (name.clone(), self.table.default && !bad)
                })
                .collect(),
        };
        let diagnostics = per_file
            .iter()
            .filter(|(_, ok)| !**ok)
            .map(|(name, _)| format!("{name}: rejected by stub verdict"))
            .collect::<Vec<_>>()
            .join("\n");
        Ok(CompileResult::from_per_file(per_file, diagnostics))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NgramSettings {
    pub ngram: usize,
    pub dim: usize,
}

impl Default for NgramSettings {
    fn default() -> Self {
        NgramSettings { ngram: 3, dim: 1024 }
    }
}

/// Hashes character n-grams (FNV-1a 64) into a fixed number of buckets and
/// L2-normalizes the counts. Text and code share one space. Inputs shorter
/// than `n` characters count as a single gram.
#[derive(Debug, Clone)]
pub struct NgramEmbedder {
    n: usize,
    dim: usize,
}

impl NgramEmbedder {
    pub fn new(n: usize, dim: usize) -> Self {
        assert!(n >= 1 && dim >= 1, "n-gram size and dimension must be positive");
        NgramEmbedder { n, dim }
    }

    fn bucket(&self, gram: &[char]) -> usize {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut buf = [0u8; 4];
        for c in gram {
            for b in c.encode_utf8(&mut buf).bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        (h % self.dim as u64) as usize
    }
}

impl Default for NgramEmbedder {
    fn default() -> Self {
        let s = NgramSettings::default();
        NgramEmbedder::new(s.ngram, s.dim)
    }
}

impl Embedder for NgramEmbedder {
    fn fingerprint(&self) -> String {
        format!("stub-ngram:n={}:dim={}", self.n, self.dim)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str, _kind: EmbedKind) -> Result<EmbeddingVector, BackendError> {
        let chars: Vec<char> = text.chars().collect();
        let mut counts = vec![0.0f64; self.dim];
        if chars.is_empty() {
            return Ok(EmbeddingVector::zeros(self.dim));
        }
        if chars.len() < self.n {
            counts[self.bucket(&chars)] += 1.0;
        } else {
            for gram in chars.windows(self.n) {
                counts[self.bucket(gram)] += 1.0;
            }
        }
        Ok(EmbeddingVector::normalized(counts))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::backends::{clamped_cosine, ChatMessage, Role};

    fn req(text: &str) -> ChatRequest {
        ChatRequest::new("sys", vec![ChatMessage { role: Role::AssistantSide, text: text.into() }], 0.0, 64)
            .unwrap()
    }

    /// Exact cosine over n-gram count multisets, no hashing.
    fn ngram_cosine_oracle(a: &str, b: &str, n: usize) -> f64 {
        let grams = |s: &str| {
            let c: Vec<char> = s.chars().collect();
            let mut m: HashMap<String, f64> = HashMap::new();
            if c.len() < n {
                *m.entry(c.iter().collect()).or_default() += 1.0;
            } else {
                for w in c.windows(n) {
                    *m.entry(w.iter().collect()).or_default() += 1.0;
                }
            }
            m
        };
        let (ga, gb) = (grams(a), grams(b));
        let dot: f64 = ga.iter().map(|(k, v)| v * gb.get(k).copied().unwrap_or(0.0)).sum();
        let na = ga.values().map(|v| v * v).sum::<f64>().sqrt();
        let nb = gb.values().map(|v| v * v).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn scripted_digest_wins() {
        let r = req("what next?");
        let mut script = ChatScript::default();
        script.responses.insert(r.digest(), "add a main entry point".into());
        let chat = StubChat::new(script);
        assert_eq!(chat.chat(&r).unwrap(), "add a main entry point");
        assert!(matches!(chat.chat(&req("other")), Err(BackendError::Config(_))));
    }

    #[test]
    fn echo_fallback_returns_last_message() {
        assert_eq!(StubChat::echo().chat(&req("hello there")).unwrap(), "hello there");
    }

    #[test]
    fn rules_match_all_substrings_in_order() {
        let script = ChatScript {
            rules: vec![
                ChatRule::new(["sys", "alpha"], "A"),
                ChatRule::new(["alpha"], "B"),
            ],
            fallback: ChatFallback::Fixed { text: "F".into() },
            ..Default::default()
        };
        let chat = StubChat::new(script);
        assert_eq!(chat.chat(&req("alpha beta")).unwrap(), "A");
        assert_eq!(chat.chat(&req("gamma")).unwrap(), "F");
    }

    #[test]
    fn anchored_rules_only_see_the_tail() {
        let script = ChatScript {
            rules: vec![ChatRule::new(["TODO"], "tail").after("Now:")],
            fallback: ChatFallback::Fixed { text: "F".into() },
            ..Default::default()
        };
        let chat = StubChat::new(script);
        assert_eq!(chat.chat(&req("example TODO\nNow: done")).unwrap(), "F");
        assert_eq!(chat.chat(&req("Now: old\nNow: TODO")).unwrap(), "tail");
        assert_eq!(chat.chat(&req("no anchor TODO")).unwrap(), "tail");
    }

    #[test]
    fn embedding_is_deterministic_and_unit_norm() {
        let e = NgramEmbedder::default();
        let a = e.embed("def main(): pass", EmbedKind::Code).unwrap();
        let b = e.embed("def main(): pass", EmbedKind::Text).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert!((clamped_cosine(&a, &a) - 1.0).abs() < 1e-6);
        assert!(e.embed("", EmbedKind::Text).unwrap().is_zero());
        assert!((e.embed("ab", EmbedKind::Text).unwrap().norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn embedding_cosine_matches_ngram_oracle() {
        let e = NgramEmbedder::new(3, 1 << 16);
        for (a, b) in [
            ("abcdef", "abcdefz"),
            ("the quick brown fox", "the quick red fox"),
            ("def add(a, b): return a + b", "def sub(a, b): return a - b"),
        ] {
            let got = clamped_cosine(
                &e.embed(a, EmbedKind::Text).unwrap(),
                &e.embed(b, EmbedKind::Text).unwrap(),
            );
            let want = ngram_cosine_oracle(a, b, 3);
            assert!((got - want).abs() < 1e-9, "{a:?} vs {b:?}: {got} != {want}");
        }
        // 4 grams vs 5 grams, 4 shared: 4 / sqrt(4 * 5)
        let v = ngram_cosine_oracle("abcdef", "abcdefz", 3);
        assert!((v - 4.0 / 20f64.sqrt()).abs() < 1e-12);
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn stub_compiler_table_and_empty_convention() {
        let a = Solution::from_files([("main.py", "print(1)")]).unwrap();
        let c = StubCompiler::from_verdicts([(a.id(), true)], false);
        assert!(c.check(&a).unwrap().ok);
        let b = Solution::from_files([("main.py", "print(2)")]).unwrap();
        assert!(!c.check(&b).unwrap().ok);
        assert!(!c.check(&Solution::empty()).unwrap().ok);

        let c = StubCompiler::new(CompileTable {
            fail_if_contains: vec!["SyntaxError".into()],
            ..Default::default()
        });
        let mixed = Solution::from_files([("a.py", "ok"), ("b.py", "SyntaxError here")]).unwrap();
        let r = c.check(&mixed).unwrap();
        assert!(!r.ok);
        assert!(r.per_file["a.py"]);
        assert!(!r.per_file["b.py"]);
    }

    #[test]
    fn fixture_parses_from_json() {
        let raw = r#"{
            "chat": {"rules": [{"contains": ["x"], "respond": "y"}], "fallback": {"mode": "fixed", "text": "z"}},
            "compile": {"default": false},
            "embedder": {"ngram": 4, "dim": 64}
        }"#;
        let f: StubFixture = serde_json::from_str(raw).unwrap();
        assert_eq!(f.embedder, NgramSettings { ngram: 4, dim: 64 });
        assert!(!f.compile.default);
        assert_eq!(f.chat.fallback, ChatFallback::Fixed { text: "z".into() });
    }
}
