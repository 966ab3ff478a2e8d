//! Compile checker that runs a configured toolchain command per source file.

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendError, CompileChecker, CompileResult};
use crate::error::{Error, Result};
use crate::model::Solution;

/// `{file}` in the command template is replaced by the relative path of the
/// file being checked. The command runs inside a scratch directory holding
/// every file of the solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompilerSettings {
    pub command: Vec<String>,
    /// Only files with one of these suffixes are checked; empty checks all.
    pub extensions: Vec<String>,
    pub timeout_secs: f64,
}

impl Default for CompilerSettings {
    fn default() -> Self {
        CompilerSettings {
            command: vec!["python3".into(), "-m".into(), "py_compile".into(), "{file}".into()],
            extensions: vec![".py".into()],
            timeout_secs: 30.0,
        }
    }
}

pub struct CommandChecker {
    settings: CompilerSettings,
}

impl CommandChecker {
    pub fn new(settings: CompilerSettings) -> Result<Self> {
        if settings.command.is_empty() {
            return Err(Error::Config("compiler command is empty".into()));
        }
        if settings.timeout_secs.is_nan() || settings.timeout_secs <= 0.0 {
            return Err(Error::Config("compiler timeout must be positive".into()));
        }
        Ok(CommandChecker { settings })
    }

    fn is_source(&self, name: &str) -> bool {
        self.settings.extensions.is_empty()
            || self.settings.extensions.iter().any(|ext| name.ends_with(ext.as_str()))
    }

    fn run_one(&self, workdir: &std::path::Path, logdir: &std::path::Path, file: &str) -> Result<(bool, String), BackendError> {
        let args: Vec<String> =
            self.settings.command.iter().map(|a| a.replace("{file}", file)).collect();
        let log_path = logdir.join("out.log");
        let log = fs::File::create(&log_path).map_err(|e| BackendError::Transport(e.to_string()))?;
        let log_err = log.try_clone().map_err(|e| BackendError::Transport(e.to_string()))?;
        let mut child = Command::new(&args[0])
            .args(&args[1..])
            .current_dir(workdir)
            .env_clear()
            .env("PATH", std::env::var_os("PATH").unwrap_or_default())
            .stdin(Stdio::null())
            .stdout(Stdio::from(log))
            .stderr(Stdio::from(log_err))
            .spawn()
            .map_err(|e| match e.kind() {
                ErrorKind::NotFound => BackendError::Config(format!("checker binary {:?} not found", args[0])),
                _ => BackendError::Transport(format!("spawning {:?}: {e}", args[0])),
            })?;

        let deadline = Instant::now() + Duration::from_secs_f64(self.settings.timeout_secs);
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(BackendError::Transport(e.to_string())),
            }
        };
        let output = fs::read_to_string(&log_path).unwrap_or_default();
        Ok(match status {
            Some(s) => (s.success(), output),
            None => (false, format!("timed out after {}s\n{output}", self.settings.timeout_secs)),
        })
    }
}

impl CompileChecker for CommandChecker {
    fn name(&self) -> &str {
        "command"
    }

    fn check(&self, sol: &Solution) -> Result<CompileResult, BackendError> {
        if sol.is_empty() {
            return Ok(CompileResult::empty_solution());
        }
        let scratch = tempfile::tempdir().map_err(|e| BackendError::Transport(e.to_string()))?;
        let workdir = scratch.path().join("src");
        let logdir = scratch.path().join("log");
        for dir in [&workdir, &logdir] {
            fs::create_dir_all(dir).map_err(|e| BackendError::Transport(e.to_string()))?;
        }
        for (name, content) in sol.files() {
            let path = workdir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| BackendError::Transport(e.to_string()))?;
            }
            fs::write(&path, content).map_err(|e| BackendError::Transport(e.to_string()))?;
        }

        let mut per_file = BTreeMap::new();
        let mut diagnostics = String::new();
        for name in sol.files().keys().filter(|n| self.is_source(n)) {
            let (ok, out) = self.run_one(&workdir, &logdir, name)?;
            if !ok {
                diagnostics.push_str(&format!("== {name}\n{out}"));
                if !out.ends_with('\n') {
                    diagnostics.push('\n');
                }
            }
            per_file.insert(name.clone(), ok);
        }
        if per_file.is_empty() {
            diagnostics.push_str("no source files to check\n");
        }
        Ok(CompileResult::from_per_file(per_file, diagnostics))
    }
}
