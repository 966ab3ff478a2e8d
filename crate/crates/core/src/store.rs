//! Embedding-indexed experience pools with exact top-k retrieval.
//!
//! Pool files are JSON lines: a header record followed by one record per
//! entry. Vectors are written with round-trip float formatting, so a
//! save/load cycle reproduces them exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::backends::{clamped_cosine, EmbedKind, Embedder, EmbeddingVector};
use crate::error::{Error, Result};

const FORMAT: &str = "colearn-pool/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    /// Solution -> instruction, keyed by code.
    Instructor,
    /// Instruction -> solution, keyed by text.
    Assistant,
}

impl PoolKind {
    pub fn key_kind(self) -> EmbedKind {
        match self {
            PoolKind::Instructor => EmbedKind::Code,
            PoolKind::Assistant => EmbedKind::Text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceEntry {
    pub key_text: String,
    pub value_text: String,
    pub task_id: String,
    pub gain: f64,
    #[serde(rename = "vector")]
    pub key_vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolHeader {
    pub format: String,
    pub kind: PoolKind,
    pub dimension: usize,
    pub fingerprint: String,
    pub built_at: DateTime<Utc>,
    pub epsilon: Option<f64>,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperiencePool {
    pub kind: PoolKind,
    pub dimension: usize,
    pub fingerprint: String,
    pub built_at: DateTime<Utc>,
    /// Threshold the entries were mined with, when known.
    pub epsilon: Option<f64>,
    entries: Vec<ExperienceEntry>,
}

/// One retrieval hit.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieved<'a> {
    pub index: usize,
    pub entry: &'a ExperienceEntry,
    pub similarity: f64,
}

impl ExperiencePool {
    pub fn new(kind: PoolKind, embedder: &dyn Embedder) -> Self {
        ExperiencePool {
            kind,
            dimension: embedder.dimension(),
            fingerprint: embedder.fingerprint(),
            built_at: Utc::now(),
            epsilon: None,
            entries: Vec::new(),
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    pub fn entries(&self) -> &[ExperienceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_embedder(&self, embedder: &dyn Embedder) -> Result<()> {
        let found = embedder.fingerprint();
        if found != self.fingerprint {
            return Err(Error::FingerprintMismatch { expected: self.fingerprint.clone(), found });
        }
        if embedder.dimension() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: embedder.dimension() });
        }
        Ok(())
    }

    /// Adds an entry unless the same `(key_text, value_text)` pair is already
    /// present. Returns whether the pool grew.
    pub fn insert(
        &mut self,
        key_text: &str,
        value_text: &str,
        task_id: &str,
        gain: f64,
        embedder: &dyn Embedder,
    ) -> Result<bool> {
        self.check_embedder(embedder)?;
        if key_text.is_empty() {
            return Err(Error::Pool("experience key text is empty".into()));
        }
        if self.entries.iter().any(|e| e.key_text == key_text && e.value_text == value_text) {
            return Ok(false);
        }
        let key_vector = embedder.embed(key_text, self.kind.key_kind())?;
        if key_vector.dim() != self.dimension {
            return Err(Error::DimensionMismatch { expected: self.dimension, found: key_vector.dim() });
        }
        self.entries.push(ExperienceEntry {
            key_text: key_text.to_string(),
            value_text: value_text.to_string(),
            task_id: task_id.to_string(),
            gain,
            key_vector,
        });
        Ok(true)
    }

    /// Ranks entries against an already-embedded query. Zero-vector keys are
    /// never candidates and a zero query matches nothing.
    pub fn rank(&self, query: &EmbeddingVector, k: usize, theta: f64) -> Vec<Retrieved<'_>> {
        if query.is_zero() || k == 0 {
            return Vec::new();
        }
        let mut hits: Vec<Retrieved<'_>> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.key_vector.is_zero())
            .map(|(index, entry)| Retrieved { index, entry, similarity: clamped_cosine(query, &entry.key_vector) })
            .filter(|r| r.similarity >= theta)
            .collect();
        // stable: equal similarities keep insertion order
        hits.sort_by(|a, b| b.similarity.total_cmp(&a.similarity));
        hits.truncate(k);
        hits
    }

    pub fn retrieve_topk(
        &self,
        query_text: &str,
        k: usize,
        theta: f64,
        embedder: &dyn Embedder,
    ) -> Result<Vec<Retrieved<'_>>> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        self.check_embedder(embedder)?;
        let query = embedder.embed(query_text, self.kind.key_kind())?;
        Ok(self.rank(&query, k, theta))
    }

    fn header(&self) -> PoolHeader {
        PoolHeader {
            format: FORMAT.into(),
            kind: self.kind,
            dimension: self.dimension,
            fingerprint: self.fingerprint.clone(),
            built_at: self.built_at,
            epsilon: self.epsilon,
            entries: self.entries.len(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut line = |v: String| writeln!(w, "{v}").map_err(|e| Error::io(path, e));
        line(serde_json::to_string(&self.header()).expect("header serializes"))?;
        for e in &self.entries {
            line(serde_json::to_string(e).expect("entry serializes"))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a pool file and checks its internal consistency only.
    pub fn read(path: &Path) -> Result<Self> {
        let fmt_err = |message: String| Error::Format { path: path.display().to_string(), message };
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| fmt_err("missing header".into()))?
            .map_err(|e| Error::io(path, e))?;
        let header: PoolHeader =
            serde_json::from_str(&header_line).map_err(|e| fmt_err(format!("header: {e}")))?;
        if header.format != FORMAT {
            return Err(fmt_err(format!("unsupported format {:?}", header.format)));
        }
        let mut entries = Vec::with_capacity(header.entries);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ExperienceEntry =
                serde_json::from_str(&line).map_err(|e| fmt_err(format!("entry {}: {e}", i + 1)))?;
            if entry.key_vector.dim() != header.dimension {
                return Err(Error::DimensionMismatch { expected: header.dimension, found: entry.key_vector.dim() });
            }
            entries.push(entry);
        }
        if entries.len() != header.entries {
            return Err(fmt_err(format!("header lists {} entries, found {}", header.entries, entries.len())));
        }
        Ok(ExperiencePool {
            kind: header.kind,
            dimension: header.dimension,
            fingerprint: header.fingerprint,
            built_at: header.built_at,
            epsilon: header.epsilon,
            entries,
        })
    }

    /// Reads a pool and refuses it unless it was built with `embedder`'s
    /// configuration.
    pub fn load(path: &Path, embedder: &dyn Embedder) -> Result<Self> {
        let pool = Self::read(path)?;
        pool.check_embedder(embedder)?;
        Ok(pool)
    }
}
