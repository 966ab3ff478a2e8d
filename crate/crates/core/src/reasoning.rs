//! Experience-augmented instructor/assistant loop for unseen tasks.
//!
//! Each round the instructor retrieves `(solution, instruction)` experiences
//! keyed by the current solution and the assistant retrieves
//! `(instruction, solution)` experiences keyed by the new instruction. Both
//! use the hits as few-shot examples. With empty pools the loop issues the
//! same requests as a plain rehearsal.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::Backends;
use crate::cotracking::{parse_solution, RehearsalConfig};
use crate::error::{Error, Result};
use crate::model::{Instruction, Solution, Step, Task, Trajectory};
use crate::prompts::{self, AssistantExample, InstructorExample, PhaseSpec};
use crate::store::{ExperiencePool, PoolKind, Retrieved};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReasoningConfig {
    /// Top-k for the instructor's code-keyed pool.
    pub k_code: usize,
    /// Top-k for the assistant's text-keyed pool.
    pub k_text: usize,
    pub theta_code: f64,
    pub theta_text: f64,
    pub max_rounds_per_phase: usize,
    pub phases: Vec<PhaseSpec>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ReasoningConfig {
    fn default() -> Self {
        ReasoningConfig::from_rehearsal(&RehearsalConfig::default())
    }
}

impl ReasoningConfig {
    pub fn from_rehearsal(r: &RehearsalConfig) -> Self {
        ReasoningConfig {
            k_code: 1,
            k_text: 1,
            theta_code: 0.0,
            theta_text: 0.0,
            max_rounds_per_phase: r.max_rounds_per_phase,
            phases: r.phases.clone(),
            temperature: r.temperature,
            max_output_tokens: r.max_output_tokens,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_code == 0 || self.k_text == 0 {
            return Err(Error::Config("k_code and k_text must be at least 1".into()));
        }
        for (name, t) in [("theta_code", self.theta_code), ("theta_text", self.theta_text)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {t}")));
            }
        }
        if self.max_rounds_per_phase == 0 || self.phases.is_empty() {
            return Err(Error::Config("need at least one phase and one round per phase".into()));
        }
        Ok(())
    }
}

/// A pool hit as recorded in transcripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedExample {
    pub index: usize,
    pub task_id: String,
    pub similarity: f64,
    pub key_text: String,
    pub value_text: String,
}

impl From<&Retrieved<'_>> for RetrievedExample {
    fn from(r: &Retrieved<'_>) -> Self {
        RetrievedExample {
            index: r.index,
            task_id: r.entry.task_id.clone(),
            similarity: r.similarity,
            key_text: r.entry.key_text.clone(),
            value_text: r.entry.value_text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningRound {
    pub phase: String,
    pub instructor_examples: Vec<RetrievedExample>,
    pub instruction: Instruction,
    pub assistant_examples: Vec<RetrievedExample>,
    pub solution: Solution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningTranscript {
    pub task_id: String,
    pub rounds: Vec<ReasoningRound>,
    pub final_solution: Solution,
    pub duration_seconds: f64,
}

impl ReasoningTranscript {
    /// The `(instruction, solution)` chain, comparable with a rehearsal.
    pub fn as_trajectory(&self) -> Trajectory {
        Trajectory {
            task_id: self.task_id.clone(),
            steps: self
                .rounds
                .iter()
                .map(|r| Step { instruction: r.instruction.clone(), solution: r.solution.clone(), phase: Some(r.phase.clone()) })
                .collect(),
        }
    }

    pub fn summary(&self) -> ReasoningSummary {
        ReasoningSummary {
            task_id: self.task_id.clone(),
            rounds: self.rounds.len(),
            duration_seconds: self.duration_seconds,
            instructor_hits: self.rounds.iter().map(|r| r.instructor_examples.len()).sum(),
            assistant_hits: self.rounds.iter().map(|r| r.assistant_examples.len()).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningSummary {
    pub task_id: String,
    pub rounds: usize,
    pub duration_seconds: f64,
    pub instructor_hits: usize,
    pub assistant_hits: usize,
}

/// The instructor either issues an instruction or closes the phase.
#[derive(Debug, Clone, PartialEq)]
pub enum InstructorTurn {
    Instruct(Instruction),
    Done,
}

fn expect_kind(pool: &ExperiencePool, kind: PoolKind) -> Result<()> {
    if pool.kind != kind {
        return Err(Error::Config(format!("expected a {kind:?} pool, got {:?}", pool.kind)));
    }
    Ok(())
}

pub fn augmented_instruct(
    task: &Task,
    phase: &PhaseSpec,
    current: &Solution,
    pool: &ExperiencePool,
    cfg: &ReasoningConfig,
    backends: &Backends,
) -> Result<(InstructorTurn, Vec<RetrievedExample>)> {
    expect_kind(pool, PoolKind::Instructor)?;
    let hits = pool.retrieve_topk(&current.canonical_text(), cfg.k_code, cfg.theta_code, backends.embedder.as_ref())?;
    let examples = hits
        .iter()
        .map(|h| {
            Ok(InstructorExample {
                solution: Solution::from_canonical_text(&h.entry.key_text)?,
                instruction: h.entry.value_text.clone(),
                similarity: h.similarity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let req = prompts::instructor_request(task, phase, current, &examples, cfg.temperature, cfg.max_output_tokens)?;
    let reply = backends.chat.chat(&req)?;
    let retrieved = hits.iter().map(RetrievedExample::from).collect();
    if prompts::is_termination(&reply) {
        return Ok((InstructorTurn::Done, retrieved));
    }
    Ok((InstructorTurn::Instruct(Instruction::live(reply.trim())?), retrieved))
}

pub fn augmented_solve(
    task: &Task,
    phase: &PhaseSpec,
    current: &Solution,
    instruction: &Instruction,
    pool: &ExperiencePool,
    cfg: &ReasoningConfig,
    backends: &Backends,
) -> Result<(Solution, Vec<RetrievedExample>)> {
    expect_kind(pool, PoolKind::Assistant)?;
    let hits = pool.retrieve_topk(&instruction.text, cfg.k_text, cfg.theta_text, backends.embedder.as_ref())?;
    let examples = hits
        .iter()
        .map(|h| {
            Ok(AssistantExample {
                instruction: h.entry.key_text.clone(),
                solution: Solution::from_canonical_text(&h.entry.value_text)?,
                similarity: h.similarity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let req = prompts::assistant_request(
        task,
        phase,
        current,
        instruction,
        &examples,
        cfg.temperature,
        cfg.max_output_tokens,
    )?;
    let reply = backends.chat.chat(&req)?;
    let next = parse_solution(&reply, current)?;
    Ok((next, hits.iter().map(RetrievedExample::from).collect()))
}

/// Runs all phases for one task against frozen pools. Failures discard the
/// whole transcript.
pub fn run_coreasoning(
    task: &Task,
    instructor_pool: &ExperiencePool,
    assistant_pool: &ExperiencePool,
    cfg: &ReasoningConfig,
    backends: &Backends,
) -> Result<ReasoningTranscript> {
    task.validate()?;
    cfg.validate()?;
    let start = Instant::now();
    let mut current = Solution::empty();
    let mut rounds = Vec::new();
    for phase in &cfg.phases {
        for _ in 0..cfg.max_rounds_per_phase {
            let (turn, instructor_examples) =
                augmented_instruct(task, phase, &current, instructor_pool, cfg, backends)?;
            let InstructorTurn::Instruct(instruction) = turn else { break };
            let (next, assistant_examples) =
                augmented_solve(task, phase, &current, &instruction, assistant_pool, cfg, backends)?;
            current = next;
            rounds.push(ReasoningRound {
                phase: phase.name.clone(),
                instructor_examples,
                instruction,
                assistant_examples,
                solution: current.clone(),
            });
        }
    }
    if rounds.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let duration_seconds = start.elapsed().as_secs_f64();
    Ok(ReasoningTranscript { task_id: task.id.clone(), rounds, final_solution: current, duration_seconds })
}
