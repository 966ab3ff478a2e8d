//! On-disk layout of a pipeline run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, Utc};
use colearn_core::eval::GraphStats;
use colearn_core::memorize::TaskMemory;
use colearn_core::model::{md5_hex, Solution, Trajectory};
use colearn_core::reasoning::ReasoningTranscript;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub task_id: String,
    pub config_digest: String,
    pub created_at: DateTime<Utc>,
    pub duration_seconds: f64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub task_id: String,
    pub mode: String,
    pub epsilon: f64,
    pub synthesizer: String,
    pub created_at: DateTime<Utc>,
    pub stats: GraphStats,
    pub memory: TaskMemory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub task_id: String,
    pub config_digest: String,
    pub created_at: DateTime<Utc>,
    pub instructor_pool_entries: usize,
    pub assistant_pool_entries: usize,
    pub transcript: ReasoningTranscript,
}

pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunStore { root: root.into() }
    }

    pub fn trajectory_path(&self, task_id: &str) -> PathBuf {
        self.root.join("trajectories").join(record_file(task_id))
    }

    pub fn graph_path(&self, task_id: &str) -> PathBuf {
        self.root.join("graphs").join(record_file(task_id))
    }

    pub fn transcript_path(&self, task_id: &str) -> PathBuf {
        self.root.join("transcripts").join(record_file(task_id))
    }

    pub fn instructor_pool(&self) -> PathBuf {
        self.root.join("pools").join("instructor.jsonl")
    }

    pub fn assistant_pool(&self) -> PathBuf {
        self.root.join("pools").join("assistant.jsonl")
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    /// Writes each solution once under `solutions/<id>/`.
    pub fn store_solutions<'a>(&self, sols: impl IntoIterator<Item = &'a Solution>) -> Result<()> {
        for sol in sols {
            let dir = self.root.join("solutions").join(sol.id().as_str());
            if !dir.exists() {
                sol.save_dir(&dir)?;
            }
        }
        Ok(())
    }
}

/// Task ids become file names as-is when they are plain; anything else is hashed.
pub fn record_file(task_id: &str) -> String {
    let plain = !task_id.is_empty()
        && !task_id.starts_with('.')
        && task_id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if plain {
        format!("{task_id}.json")
    } else {
        format!("id-{}.json", md5_hex(task_id.as_bytes()))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
}

/// Writes through a temporary sibling so readers never see partial files.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_names() {
        assert_eq!(record_file("game-01"), "game-01.json");
        assert!(record_file("a/b").starts_with("id-"));
        assert!(record_file("..").starts_with("id-"));
        assert_ne!(record_file("a/b"), record_file("a\\b"));
    }
}
