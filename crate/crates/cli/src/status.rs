use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Skipped,
    Failed,
}

impl Outcome {
    fn label(self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::Skipped => "skipped",
            Outcome::Failed => "FAILED",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskStatus {
    pub task_id: String,
    pub outcome: Outcome,
    pub detail: String,
}

impl TaskStatus {
    pub fn ok(task_id: &str, detail: impl Into<String>) -> Self {
        TaskStatus { task_id: task_id.into(), outcome: Outcome::Ok, detail: detail.into() }
    }

    pub fn skipped(task_id: &str, detail: impl Into<String>) -> Self {
        TaskStatus { task_id: task_id.into(), outcome: Outcome::Skipped, detail: detail.into() }
    }

    pub fn failed(task_id: &str, err: &anyhow::Error) -> Self {
        TaskStatus { task_id: task_id.into(), outcome: Outcome::Failed, detail: format!("{err:#}") }
    }
}

/// Per-item status lines for one command.
#[derive(Debug, Default)]
pub struct StatusTable {
    pub rows: Vec<TaskStatus>,
}

impl StatusTable {
    pub fn push(&mut self, row: TaskStatus) {
        self.rows.push(row);
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome == Outcome::Failed).count()
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.rows.iter().filter(|r| r.outcome == outcome).count()
    }

    pub fn render(&self, command: &str) -> String {
        let width = self.rows.iter().map(|r| r.task_id.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  {:<7}  detail\n", "task", "status");
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:<7}  {}", r.task_id, r.outcome.label(), r.detail);
        }
        let _ = writeln!(
            out,
            "{command}: {} ok, {} skipped, {} failed",
            self.count(Outcome::Ok),
            self.count(Outcome::Skipped),
            self.failures()
        );
        out
    }
}
