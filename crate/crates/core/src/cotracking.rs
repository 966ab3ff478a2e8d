//! Rehearsal runs on training tasks: the instructor and assistant alternate
//! and every `(instruction, solution)` round is recorded.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::backends::ChatBackend;
use crate::error::{Error, Result};
use crate::model::{Instruction, Solution, Step, Task, Trajectory};
use crate::prompts::{self, PhaseSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RehearsalConfig {
    pub max_rounds_per_phase: usize,
    pub phases: Vec<PhaseSpec>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for RehearsalConfig {
    fn default() -> Self {
        RehearsalConfig {
            max_rounds_per_phase: 5,
            phases: prompts::default_phases(),
            temperature: 0.2,
            max_output_tokens: 4096,
        }
    }
}

impl RehearsalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds_per_phase == 0 {
            return Err(Error::Config("max_rounds_per_phase must be at least 1".into()));
        }
        if self.phases.is_empty() {
            return Err(Error::Config("at least one phase is required".into()));
        }
        Ok(())
    }

    pub fn single_phase(max_rounds: usize) -> Self {
        RehearsalConfig {
            max_rounds_per_phase: max_rounds,
            phases: prompts::default_phases().into_iter().take(1).collect(),
            ..Default::default()
        }
    }
}

/// Runs the instructor/assistant rehearsal for one task. Any backend failure
/// discards the partial trajectory.
pub fn run_rehearsal(task: &Task, cfg: &RehearsalConfig, llm: &dyn ChatBackend) -> Result<Trajectory> {
    task.validate()?;
    cfg.validate()?;
    let mut current = Solution::empty();
    let mut steps = Vec::new();
    for phase in &cfg.phases {
        for round in 0..cfg.max_rounds_per_phase {
            let req = prompts::instructor_request(
                task,
                phase,
                &current,
                &[],
                cfg.temperature,
                cfg.max_output_tokens,
            )?;
            let reply = llm.chat(&req)?;
            if prompts::is_termination(&reply) {
                debug!(task = %task.id, phase = %phase.name, round, "instructor ended phase");
                break;
            }
            let instruction = Instruction::live(reply.trim())?;
            let req = prompts::assistant_request(
                task,
                phase,
                &current,
                &instruction,
                &[],
                cfg.temperature,
                cfg.max_output_tokens,
            )?;
            let reply = llm.chat(&req)?;
            current = parse_solution(&reply, &current)?;
            steps.push(Step { instruction, solution: current.clone(), phase: Some(phase.name.clone()) });
        }
    }
    Trajectory::new(task.id.clone(), steps)
}

/// Info strings that name a language rather than a file.
const LANGUAGE_TAGS: &[&str] = &[
    "python", "py", "python3", "rust", "rs", "bash", "sh", "shell", "text", "txt", "json", "yaml",
    "toml", "javascript", "js", "typescript", "ts", "c", "cpp", "java", "go", "html", "css", "markdown",
    "md", "diff",
];

/// Applies one assistant message to `previous`. Each fenced block whose info
/// string ends in a file name (```` ```main.py ```` or ```` ```python main.py ````)
/// replaces that file wholesale; files not mentioned carry over. Unlabeled and
/// unterminated blocks are ignored.
pub fn parse_solution(assistant_output: &str, previous: &Solution) -> Result<Solution> {
    let mut next = previous.clone();
    let mut seen = HashSet::new();
    let mut lines = assistant_output.lines();
    while let Some(line) = lines.next() {
        let Some(info) = line.trim_start().strip_prefix("```") else { continue };
        let info = info.trim();
        let mut body: Vec<&str> = Vec::new();
        let mut closed = false;
        for inner in lines.by_ref() {
            if inner.trim() == "```" {
                closed = true;
                break;
            }
            body.push(inner);
        }
        if !closed {
            break;
        }
        let Some(name) = info.split_whitespace().last() else { continue };
        if info.split_whitespace().count() == 1 && LANGUAGE_TAGS.contains(&name.to_ascii_lowercase().as_str()) {
            continue;
        }
        if !seen.insert(name.to_string()) {
            return Err(Error::DuplicateFile(name.to_string()));
        }
        let mut content = body.join("\n");
        if !body.is_empty() {
            content.push('\n');
        }
        next.insert(name, content)?;
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatFallback, ChatRule, ChatScript, StubChat};

    fn task() -> Task {
        Task {
            id: "t1".into(),
            name: "Counter".into(),
            category: "Tool".into(),
            requirement: "Count words in a file.".into(),
        }
    }

    #[test]
    fn single_labeled_block() {
        let s = parse_solution("Here:\n```main\nprint('x')\n```\n", &Solution::empty()).unwrap();
        assert_eq!(s, Solution::from_files([("main", "print('x')\n")]).unwrap());
    }

    #[test]
    fn no_blocks_carries_previous() {
        let prev = Solution::from_files([("a.py", "1\n")]).unwrap();
        assert_eq!(parse_solution("I think it is fine.", &prev).unwrap(), prev);
    }

    #[test]
    fn incremental_edit_over_previous() {
        // hand-built transcript: a is rewritten, b is new
        let prev = Solution::from_files([("a", "old\n")]).unwrap();
        let msg = "Updated a and added b.\n```python a\nnew a\n```\ntext between\n```b\nnew b\nline 2\n```";
        let s = parse_solution(msg, &prev).unwrap();
        assert_eq!(s, Solution::from_files([("a", "new a\n"), ("b", "new b\nline 2\n")]).unwrap());
    }

    #[test]
    fn duplicate_file_in_one_message_is_an_error() {
        let msg = "```a\n1\n```\n```a\n2\n```";
        assert!(matches!(parse_solution(msg, &Solution::empty()), Err(Error::DuplicateFile(n)) if n == "a"));
    }

    #[test]
    fn language_only_and_unterminated_blocks_are_ignored() {
        let prev = Solution::from_files([("k", "v\n")]).unwrap();
        assert_eq!(parse_solution("```python\nprint(1)\n```", &prev).unwrap(), prev);
        assert_eq!(parse_solution("```main.py\nprint(1)\n", &prev).unwrap(), prev);
    }

    #[test]
    fn traversal_in_block_name_is_rejected() {
        assert!(parse_solution("```../evil.py\nx\n```", &Solution::empty()).is_err());
    }

    #[test]
    fn render_then_parse_round_trips() {
        let s = Solution::from_files([("a.py", "x = 1\n"), ("pkg/b.py", "y = 2\n\nz = 3\n")]).unwrap();
        assert_eq!(parse_solution(&s.render(), &Solution::empty()).unwrap(), s);
    }

    fn counting_script(done_after: Option<usize>) -> ChatScript {
        // The instructor asks for version k+1 when it sees version k.
        let mut rules = Vec::new();
        if let Some(n) = done_after {
            rules.push(ChatRule::new(
                ["You are the instructor".to_string(), format!("VERSION {n}\n")],
                "<TASK_DONE> looks complete",
            ));
        }
        for k in (1..=9).rev() {
            rules.push(ChatRule::new(
                ["You are the instructor".to_string(), format!("VERSION {k}\n")],
                format!("Produce version {}", k + 1),
            ));
            rules.push(ChatRule::new(
                ["You are the assistant".to_string(), format!("Produce version {k}")],
                format!("```main.py\nVERSION {k}\n```"),
            ));
        }
        rules.push(ChatRule::new(["You are the instructor", "(no files yet)"], "Produce version 1"));
        ChatScript { rules, fallback: ChatFallback::None, ..Default::default() }
    }

    #[test]
    fn scripted_termination_after_two_rounds() {
        let chat = StubChat::new(counting_script(Some(2)));
        let traj = run_rehearsal(&task(), &RehearsalConfig::single_phase(5), &chat).unwrap();
        assert_eq!(traj.steps.len(), 2);
        assert_eq!(traj.final_solution().get("main.py"), Some("VERSION 2\n"));
    }

    #[test]
    fn round_cap_of_five_per_phase() {
        let chat = StubChat::new(counting_script(None));
        let traj = run_rehearsal(&task(), &RehearsalConfig::single_phase(5), &chat).unwrap();
        assert_eq!(traj.steps.len(), 5);
        assert_eq!(traj.final_solution().get("main.py"), Some("VERSION 5\n"));
    }

    #[test]
    fn phases_concatenate_with_labels() {
        // One round per phase: the cap ends each phase.
        let chat = StubChat::new(counting_script(None));
        let cfg = RehearsalConfig { max_rounds_per_phase: 1, ..Default::default() };
        let traj = run_rehearsal(&task(), &cfg, &chat).unwrap();
        assert_eq!(traj.steps.len(), 3);
        assert_eq!(
            traj.phase_labels(),
            vec![Some("code-complete"), Some("code-review"), Some("system-testing")]
        );
    }

    #[test]
    fn backend_failure_discards_partial_trajectory() {
        // Assistant never scripted past version 2 -> no fallback -> error.
        let mut script = counting_script(None);
        script.rules.retain(|r| !r.respond.contains("VERSION 3"));
        let chat = StubChat::new(script);
        let err = run_rehearsal(&task(), &RehearsalConfig::single_phase(5), &chat).unwrap_err();
        assert!(matches!(err, Error::Backend(_)));
    }

    #[test]
    fn immediate_termination_is_an_empty_trajectory_error() {
        let chat = StubChat::new(ChatScript {
            fallback: ChatFallback::Fixed { text: "<TASK_DONE>".into() },
            ..Default::default()
        });
        assert!(matches!(
            run_rehearsal(&task(), &RehearsalConfig::default(), &chat),
            Err(Error::EmptyTrajectory)
        ));
    }

    #[test]
    fn reruns_are_identical_and_steps_chain_through_parse() {
        let chat = StubChat::new(counting_script(Some(4)));
        let cfg = RehearsalConfig::default();
        let a = run_rehearsal(&task(), &cfg, &chat).unwrap();
        let b = run_rehearsal(&task(), &cfg, &chat).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.steps.len() <= cfg.phases.len() * cfg.max_rounds_per_phase);
    }
}
