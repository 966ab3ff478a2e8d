//! Prompt text and request builders for both agents.
//!
//! The phase prompts here are this project's own defaults; they are plain
//! config values and can be replaced from the pipeline config file.

use serde::{Deserialize, Serialize};

use crate::backends::{ChatMessage, ChatRequest, Role};
use crate::error::Result;
use crate::model::{Instruction, Solution, Task};

/// An instructor reply starting with this token ends the current phase.
pub const TERMINATION_MARKER: &str = "<TASK_DONE>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub name: String,
    pub instructor_prompt: String,
    pub assistant_prompt: String,
}

impl PhaseSpec {
    pub fn new(name: &str, instructor_focus: &str, assistant_focus: &str) -> Self {
        PhaseSpec {
            name: name.to_string(),
            instructor_prompt: format!(
                "You are the instructor in a two-agent software team. {instructor_focus} \
                 Look at the task and the current solution and reply with exactly one concrete \
                 instruction for the assistant. When nothing is left to do in this phase, \
                 start your reply with {TERMINATION_MARKER}."
            ),
            assistant_prompt: format!(
                "You are the assistant in a two-agent software team. {assistant_focus} \
                 Follow the instruction. Reply with the full content of every file you create \
                 or change, each in its own fenced block whose info string is the file name, \
                 e.g. ```main.py. Files you do not repeat are kept unchanged."
            ),
        }
    }
}

pub fn default_phases() -> Vec<PhaseSpec> {
    vec![
        PhaseSpec::new(
            "code-complete",
            "The team is writing the first complete version of the software.",
            "Write complete, runnable code without placeholders.",
        ),
        PhaseSpec::new(
            "code-review",
            "The team is reviewing the code for bugs, missing features and unfinished parts.",
            "Fix the problems the reviewer points out.",
        ),
        PhaseSpec::new(
            "system-testing",
            "The team is making sure the software compiles and runs.",
            "Repair any error that would stop the software from compiling or running.",
        ),
    ]
}

/// Instructor-side few-shot example: a solution and the instruction that was
/// given for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructorExample {
    pub solution: Solution,
    pub instruction: String,
    pub similarity: f64,
}

/// Assistant-side few-shot example: an instruction and the solution it led to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantExample {
    pub instruction: String,
    pub solution: Solution,
    pub similarity: f64,
}

fn task_block(task: &Task, phase: &PhaseSpec, current: &Solution) -> String {
    format!(
        "Task: {}\nRequirement: {}\nPhase: {}\nCurrent solution:\n{}",
        task.name,
        task.requirement,
        phase.name,
        current.render()
    )
}

pub fn instructor_request(
    task: &Task,
    phase: &PhaseSpec,
    current: &Solution,
    examples: &[InstructorExample],
    temperature: f64,
    max_output_tokens: u32,
) -> Result<ChatRequest> {
    let mut text = String::new();
    if !examples.is_empty() {
        text.push_str("Reference experiences from earlier tasks, most similar first.\n");
        for (i, ex) in examples.iter().enumerate() {
            text.push_str(&format!(
                "### Example {} (similarity {:.4})\nSolution:\n{}Instruction:\n{}\n",
                i + 1,
                ex.similarity,
                ex.solution.render(),
                ex.instruction
            ));
        }
        text.push_str("### Now\n");
    }
    text.push_str(&task_block(task, phase, current));
    ChatRequest::new(
        phase.instructor_prompt.clone(),
        vec![ChatMessage { role: Role::AssistantSide, text }],
        temperature,
        max_output_tokens,
    )
}

pub fn assistant_request(
    task: &Task,
    phase: &PhaseSpec,
    current: &Solution,
    instruction: &Instruction,
    examples: &[AssistantExample],
    temperature: f64,
    max_output_tokens: u32,
) -> Result<ChatRequest> {
    let mut text = String::new();
    if !examples.is_empty() {
        text.push_str("Reference experiences from earlier tasks, most similar first.\n");
        for (i, ex) in examples.iter().enumerate() {
            text.push_str(&format!(
                "### Example {} (similarity {:.4})\nInstruction:\n{}\nSolution:\n{}",
                i + 1,
                ex.similarity,
                ex.instruction,
                ex.solution.render()
            ));
        }
        text.push_str("### Now\n");
    }
    text.push_str(&task_block(task, phase, current));
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text.push_str("Instruction:\n");
    text.push_str(&instruction.text);
    ChatRequest::new(
        phase.assistant_prompt.clone(),
        vec![ChatMessage { role: Role::InstructorSide, text }],
        temperature,
        max_output_tokens,
    )
}

/// Self-instruct prompt asking for the directive that turns `src` into `dst`.
pub fn self_instruct_request(src: &Solution, dst: &Solution) -> Result<ChatRequest> {
    let text = format!(
        "Below are two versions of a program.\nVersion A:\n{}Version B:\n{}\
         Write the single instruction a team lead would give to turn version A into \
         version B. Reply with the instruction only.",
        src.render(),
        dst.render()
    );
    ChatRequest::new(
        "You write concise software engineering instructions by comparing two versions of code.",
        vec![ChatMessage { role: Role::AssistantSide, text }],
        0.0,
        512,
    )
}

pub fn is_termination(reply: &str) -> bool {
    reply.trim_start().starts_with(TERMINATION_MARKER)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> Task {
        Task { id: "t".into(), name: "Calc".into(), category: "Tool".into(), requirement: "add".into() }
    }

    #[test]
    fn examples_come_before_the_live_request_in_order() {
        let phase = &default_phases()[0];
        let sol = Solution::from_files([("m.py", "x\n")]).unwrap();
        let ex = |s: f64, t: &str| InstructorExample { solution: sol.clone(), instruction: t.into(), similarity: s };
        let req =
            instructor_request(&task(), phase, &Solution::empty(), &[ex(0.9, "first"), ex(0.5, "second")], 0.2, 100)
                .unwrap();
        let text = req.last_text();
        let (a, b, now) = (text.find("first").unwrap(), text.find("second").unwrap(), text.find("### Now").unwrap());
        assert!(a < b && b < now);
        assert!(text.contains("(no files yet)"));
    }

    #[test]
    fn no_examples_no_reference_header() {
        let phase = &default_phases()[0];
        let req = instructor_request(&task(), phase, &Solution::empty(), &[], 0.2, 100).unwrap();
        assert!(!req.last_text().contains("Reference experiences"));
    }

    #[test]
    fn termination_marker_must_lead() {
        assert!(is_termination("  <TASK_DONE> all good"));
        assert!(!is_termination("not yet <TASK_DONE>"));
    }
}
