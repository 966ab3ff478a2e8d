use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use colearn_core::backends::BackendSettings;
use colearn_core::cotracking::RehearsalConfig;
use colearn_core::memorize::ExtractionRegistry;
use colearn_core::reasoning::ReasoningConfig;
use serde::{Deserialize, Serialize};

pub const ENV_BACKEND: &str = "COLEARN_BACKEND";
pub const ENV_EPSILON: &str = "COLEARN_EPSILON";
pub const ENV_WORK_DIR: &str = "COLEARN_WORK_DIR";
pub const ENV_STUB_FIXTURE: &str = "COLEARN_STUB_FIXTURE";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Minimum quality gain for a shortcut.
    pub epsilon: f64,
    /// `self-instruct` or `diff-summary`.
    pub synthesizer: String,
    /// Extraction strategy used by `memorize`.
    pub mode: String,
    pub paths: PathSettings,
    pub split: SplitSettings,
    pub backends: BackendSettings,
    pub rehearsal: RehearsalConfig,
    pub retrieval: RetrievalSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            epsilon: 0.90,
            synthesizer: "self-instruct".into(),
            mode: ExtractionRegistry::DEFAULT.into(),
            paths: PathSettings::default(),
            split: SplitSettings::default(),
            backends: BackendSettings::default(),
            rehearsal: RehearsalConfig::default(),
            retrieval: RetrievalSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathSettings {
    pub tasks: PathBuf,
    /// Root of all stage outputs.
    pub work_dir: PathBuf,
}

impl Default for PathSettings {
    fn default() -> Self {
        PathSettings { tasks: "tasks.jsonl".into(), work_dir: "run".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSettings {
    pub seed: u64,
    pub ratios: [usize; 3],
}

impl Default for SplitSettings {
    fn default() -> Self {
        SplitSettings { seed: 2024, ratios: [4, 1, 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalSettings {
    pub k_code: usize,
    pub k_text: usize,
    pub theta_code: f64,
    pub theta_text: f64,
}

impl Default for RetrievalSettings {
    fn default() -> Self {
        let r = ReasoningConfig::default();
        RetrievalSettings { k_code: r.k_code, k_text: r.k_text, theta_code: r.theta_code, theta_text: r.theta_text }
    }
}

impl PipelineConfig {
    /// Reads a TOML file; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.paths.tasks, &mut self.paths.work_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        self.backends.resolve_paths(base);
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(kind) = std::env::var(ENV_BACKEND) {
            self.backends.kind = kind;
        }
        if let Ok(eps) = std::env::var(ENV_EPSILON) {
            self.epsilon = eps.parse().with_context(|| format!("{ENV_EPSILON}={eps:?} is not a number"))?;
        }
        if let Ok(dir) = std::env::var(ENV_WORK_DIR) {
            self.paths.work_dir = dir.into();
        }
        if let Ok(fixture) = std::env::var(ENV_STUB_FIXTURE) {
            self.backends.stub_fixture = Some(fixture.into());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            bail!("epsilon must be a non-negative number, got {}", self.epsilon);
        }
        if self.epsilon > 1.0 {
            tracing::warn!(epsilon = self.epsilon, "epsilon above 1 admits no shortcuts; pools will be empty");
        }
        if self.split.ratios.iter().sum::<usize>() == 0 {
            bail!("split ratios must not all be zero");
        }
        self.rehearsal.validate()?;
        self.reasoning().validate()?;
        Ok(())
    }

    pub fn reasoning(&self) -> ReasoningConfig {
        ReasoningConfig {
            k_code: self.retrieval.k_code,
            k_text: self.retrieval.k_text,
            theta_code: self.retrieval.theta_code,
            theta_text: self.retrieval.theta_text,
            ..ReasoningConfig::from_rehearsal(&self.rehearsal)
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Digest of everything that influences a rehearsal.
    pub fn rehearsal_digest(&self) -> String {
        digest_json(&(&self.rehearsal, &self.backends))
    }

    /// Digest of everything that influences a co-reasoning run, apart from the pools.
    pub fn reasoning_digest(&self) -> String {
        digest_json(&(&self.reasoning(), &self.backends))
    }
}

pub fn digest_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    colearn_core::model::md5_hex(&bytes)
}
