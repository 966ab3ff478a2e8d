//! Domain types shared across the pipeline and the canonical solution hash.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path};

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// MD5 of the empty canonical serialization, i.e. the id of the empty solution.
pub const EMPTY_SOLUTION_ID: &str = "d41d8cd98f00b204e9800998ecf8427e";

/// File name of the manifest written next to a persisted solution's files.
pub const MANIFEST_FILE: &str = "manifest.json";

/// A task from the requirement dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub name: String,
    pub category: String,
    pub requirement: String,
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::InvalidTask("empty task id".into()));
        }
        if self.requirement.trim().is_empty() {
            return Err(Error::InvalidTask(format!("task {} has an empty requirement", self.id)));
        }
        Ok(())
    }
}

/// Reads a task set: one JSON object per line with `id`, `name`, `category`
/// and `requirement`. Blank lines and lines starting with `#` are skipped.
pub fn load_tasks(path: &Path) -> Result<Vec<Task>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut tasks: Vec<Task> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let task: Task = serde_json::from_str(trimmed).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: format!("line {}: {e}", lineno + 1),
        })?;
        task.validate()?;
        if !seen.insert(task.id.clone()) {
            return Err(Error::InvalidTask(format!("duplicate task id {}", task.id)));
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn save_tasks(path: &Path, tasks: &[Task]) -> Result<()> {
    let mut out = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for t in tasks {
        let line = serde_json::to_string(t).expect("task serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// A complete multi-file software artifact. Files are kept sorted by name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Solution {
    files: BTreeMap<String, String>,
}

impl Solution {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_files<I, K, V>(files: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut sol = Self::empty();
        for (name, content) in files {
            let name = name.into();
            if sol.files.contains_key(&name) {
                return Err(Error::InvalidFilename(format!("duplicate file {name}")));
            }
            sol.insert(name, content)?;
        }
        Ok(sol)
    }

    pub fn insert(&mut self, name: impl Into<String>, content: impl Into<String>) -> Result<()> {
        let name = name.into();
        validate_filename(&name)?;
        self.files.insert(name, content.into());
        Ok(())
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.get(name).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    /// Canonical byte serialization: files in name order, each written as
    /// `name NUL content NUL`. Contents are taken byte-exact.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (name, content) in &self.files {
            out.push_str(name);
            out.push('\0');
            out.push_str(content);
            out.push('\0');
        }
        out
    }

    /// Inverse of [`Solution::canonical_text`]. Only defined for solutions whose
    /// contents contain no NUL bytes.
    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let mut sol = Self::empty();
        if text.is_empty() {
            return Ok(sol);
        }
        let body = text.strip_suffix('\0').ok_or_else(|| {
            Error::InvalidFilename("canonical text must end with a NUL terminator".into())
        })?;
        let parts: Vec<&str> = body.split('\0').collect();
        if !parts.len().is_multiple_of(2) {
            return Err(Error::InvalidFilename("unbalanced canonical serialization".into()));
        }
        for pair in parts.chunks(2) {
            if sol.files.contains_key(pair[0]) {
                return Err(Error::InvalidFilename(format!("duplicate file {}", pair[0])));
            }
            sol.insert(pair[0], pair[1])?;
        }
        Ok(sol)
    }

    pub fn id(&self) -> SolutionId {
        canonical_hash(self)
    }

    /// Renders the solution the way agents see it: one fenced block per file.
    pub fn render(&self) -> String {
        if self.files.is_empty() {
            return "(no files yet)".to_string();
        }
        let mut out = String::new();
        for (name, content) in &self.files {
            out.push_str("```");
            out.push_str(name);
            out.push('\n');
            out.push_str(content);
            if !content.ends_with('\n') {
                out.push('\n');
            }
            out.push_str("```\n");
        }
        out
    }

    /// Writes the files plus a manifest listing names in canonical order.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, content) in &self.files {
            let path = dir.join("files").join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(&path, content).map_err(|e| Error::io(&path, e))?;
        }
        let manifest = SolutionManifest {
            id: self.id(),
            files: self.files.keys().cloned().collect(),
        };
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: SolutionManifest = serde_json::from_str(&raw).map_err(|e| Error::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut sol = Self::empty();
        for name in &manifest.files {
            let fpath = dir.join("files").join(name);
            let content = fs::read_to_string(&fpath).map_err(|e| Error::io(&fpath, e))?;
            sol.insert(name.clone(), content)?;
        }
        if sol.id() != manifest.id {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: format!("content hashes to {} but manifest says {}", sol.id(), manifest.id),
            });
        }
        Ok(sol)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SolutionManifest {
    pub id: SolutionId,
    pub files: Vec<String>,
}

fn validate_filename(name: &str) -> Result<()> {
    if name.is_empty() {
        return Err(Error::InvalidFilename("empty filename".into()));
    }
    if name.contains('\0') {
        return Err(Error::InvalidFilename(format!("{name:?} contains NUL")));
    }
    let path = Path::new(name);
    for comp in path.components() {
        match comp {
            Component::Normal(_) => {}
            Component::CurDir => {}
            _ => return Err(Error::InvalidFilename(format!("{name:?} is not a plain relative path"))),
        }
    }
    if name.starts_with('/') || name.starts_with('\\') {
        return Err(Error::InvalidFilename(format!("{name:?} is absolute")));
    }
    Ok(())
}

/// Lowercase hex MD5 digest of a solution's canonical serialization.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SolutionId(String);

impl SolutionId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn empty() -> Self {
        SolutionId(EMPTY_SOLUTION_ID.to_string())
    }

    /// Parses a 32-character lowercase hex digest.
    pub fn parse(s: &str) -> Result<Self> {
        if s.len() == 32 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)) {
            Ok(SolutionId(s.to_string()))
        } else {
            Err(Error::Format { path: "<solution id>".into(), message: format!("bad digest {s:?}") })
        }
    }

    pub fn short(&self) -> &str {
        &self.0[..8]
    }
}

impl fmt::Display for SolutionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Lowercase hex MD5 of arbitrary bytes.
pub fn md5_hex(bytes: &[u8]) -> String {
    hex::encode(Md5::digest(bytes))
}

pub fn canonical_hash(sol: &Solution) -> SolutionId {
    let mut hasher = Md5::new();
    for (name, content) in &sol.files {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update(content.as_bytes());
        hasher.update([0u8]);
    }
    SolutionId(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstructionOrigin {
    /// Emitted by the instructor during a live run.
    Live,
    /// Synthesized afterwards to label a shortcut.
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub text: String,
    pub origin: InstructionOrigin,
}

impl Instruction {
    pub fn live(text: impl Into<String>) -> Result<Self> {
        Self::new(text, InstructionOrigin::Live)
    }

    pub fn pseudo(text: impl Into<String>) -> Result<Self> {
        Self::new(text, InstructionOrigin::Pseudo)
    }

    pub fn new(text: impl Into<String>, origin: InstructionOrigin) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::EmptyInstruction);
        }
        Ok(Self { text, origin })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub instruction: Instruction,
    pub solution: Solution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
}

/// The instruction/solution chain recorded for one task. The implicit
/// predecessor of the first step is the empty solution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>, steps: Vec<Step>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::EmptyTrajectory);
        }
        Ok(Self { task_id: task_id.into(), steps })
    }

    /// Builds a trajectory from `(instruction, solution)` pairs without phase labels.
    pub fn from_pairs<I>(task_id: impl Into<String>, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Instruction, Solution)>,
    {
        let steps = pairs
            .into_iter()
            .map(|(instruction, solution)| Step { instruction, solution, phase: None })
            .collect();
        Self::new(task_id, steps)
    }

    /// `s_0, s_1, ..., s_n` including the implicit empty start.
    pub fn chain(&self) -> Vec<&Solution> {
        static EMPTY: std::sync::OnceLock<Solution> = std::sync::OnceLock::new();
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        out.push(EMPTY.get_or_init(Solution::empty));
        out.extend(self.steps.iter().map(|s| &s.solution));
        out
    }

    pub fn final_solution(&self) -> &Solution {
        &self.steps.last().expect("trajectory is non-empty").solution
    }

    pub fn phase_labels(&self) -> Vec<Option<&str>> {
        self.steps.iter().map(|s| s.phase.as_deref()).collect()
    }
}
