//! Shortcut mining over execution graphs.
//!
//! Nodes are scored by `omega = sim(s, requirement) * sim(s, sink) * compiles(s)`.
//! A shortcut joins two non-adjacent nodes of the chosen shortest
//! source-to-sink path when the second is reachable from the first and its
//! score exceeds the first by at least `epsilon`. Each shortcut gets a
//! synthesized pseudo-instruction and becomes one experience for each agent.
//!
//! Extraction variants sit behind [`ExtractionStrategy`] and are looked up by
//! name in [`ExtractionRegistry`].

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use similar::{ChangeTag, TextDiff};
use tracing::warn;

use crate::backends::{clamped_cosine, ChatBackend, CompileChecker, EmbedKind, Embedder};
use crate::error::{Error, Result};
use crate::graph::ExecutionGraph;
use crate::model::{Instruction, Solution, SolutionId, Task, Trajectory};
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub node: SolutionId,
    pub sim_task: f64,
    pub sim_final: f64,
    pub compiles: bool,
    pub omega: f64,
}

impl NodeScore {
    pub fn new(node: SolutionId, sim_task: f64, sim_final: f64, compiles: bool) -> Self {
        let omega = if compiles { sim_task * sim_final } else { 0.0 };
        NodeScore { node, sim_task, sim_final, compiles, omega }
    }
}

pub type Scores = BTreeMap<SolutionId, NodeScore>;

pub fn score_nodes(
    graph: &ExecutionGraph,
    task: &Task,
    embedder: &dyn Embedder,
    compiler: &dyn CompileChecker,
) -> Result<Scores> {
    let requirement = embedder.embed(&task.requirement, EmbedKind::Text)?;
    let sink = graph
        .node(&graph.sink_id)
        .ok_or_else(|| Error::Config("sink node missing from graph".into()))?;
    let sink_vec = embedder.embed(&sink.canonical_text(), EmbedKind::Code)?;
    let mut scores = Scores::new();
    for (id, sol) in &graph.nodes {
        let v = embedder.embed(&sol.canonical_text(), EmbedKind::Code)?;
        let compiles = compiler.check(sol)?.ok;
        scores.insert(
            id.clone(),
            NodeScore::new(id.clone(), clamped_cosine(&v, &requirement), clamped_cosine(&v, &sink_vec), compiles),
        );
    }
    Ok(scores)
}

/// A mined experience edge. For the default strategy `instruction` is a
/// synthesized pseudo-instruction; the adjacent-execution ablation keeps the
/// live instruction instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shortcut {
    pub task_id: String,
    pub src: SolutionId,
    pub dst: SolutionId,
    pub instruction: Instruction,
    pub gain: f64,
}

/// A candidate pair before instruction synthesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub src: SolutionId,
    pub dst: SolutionId,
    pub gain: f64,
}

fn omega(scores: &Scores, id: &SolutionId) -> Result<f64> {
    scores
        .get(id)
        .map(|s| s.omega)
        .ok_or_else(|| Error::Config(format!("no score for node {id}")))
}

/// Pairs on the shortest path that satisfy the shortcut conditions, ordered
/// by source position then target position.
pub fn shortcut_candidates(graph: &ExecutionGraph, scores: &Scores, epsilon: f64) -> Result<Vec<Candidate>> {
    let path = graph.shortest_path_nodes();
    let reach: Vec<HashSet<SolutionId>> = path.iter().map(|n| graph.reachable_set(n)).collect();
    let mut out = Vec::new();
    for (p, src) in path.iter().enumerate() {
        for dst in &path {
            if src == dst || graph.has_edge(src, dst) || !reach[p].contains(dst) {
                continue;
            }
            let gain = omega(scores, dst)? - omega(scores, src)?;
            if gain >= epsilon {
                out.push(Candidate { src: src.clone(), dst: dst.clone(), gain });
            }
        }
    }
    Ok(out)
}

/// Produces the instruction attached to a shortcut.
pub trait InstructionSynthesizer: Send + Sync {
    fn name(&self) -> &str;
    fn synthesize(&self, src: &Solution, dst: &Solution) -> Result<Instruction>;
}

/// Asks the chat model for the directive that turns one code version into
/// the other.
pub struct SelfInstructSynthesizer {
    llm: Arc<dyn ChatBackend>,
}

impl SelfInstructSynthesizer {
    pub fn new(llm: Arc<dyn ChatBackend>) -> Self {
        SelfInstructSynthesizer { llm }
    }
}

impl InstructionSynthesizer for SelfInstructSynthesizer {
    fn name(&self) -> &str {
        "self-instruct"
    }

    fn synthesize(&self, src: &Solution, dst: &Solution) -> Result<Instruction> {
        let reply = self.llm.chat(&prompts::self_instruct_request(src, dst)?)?;
        let text = reply.trim();
        if text.is_empty() {
            return Err(Error::Synthesis("model returned an empty instruction".into()));
        }
        Instruction::pseudo(text)
    }
}

/// Deterministic offline synthesizer: summarizes the file-level diff.
#[derive(Debug, Default, Clone, Copy)]
pub struct DiffSummarySynthesizer;

impl InstructionSynthesizer for DiffSummarySynthesizer {
    fn name(&self) -> &str {
        "diff-summary"
    }

    fn synthesize(&self, src: &Solution, dst: &Solution) -> Result<Instruction> {
        let names: std::collections::BTreeSet<&String> = src.files().keys().chain(dst.files().keys()).collect();
        let mut parts = Vec::new();
        for name in names {
            match (src.get(name), dst.get(name)) {
                (None, Some(_)) => parts.push(format!("+ {name} (new file)")),
                (Some(_), None) => parts.push(format!("- {name} (deleted)")),
                (Some(a), Some(b)) if a != b => {
                    let diff = TextDiff::from_lines(a, b);
                    let (mut ins, mut del) = (0, 0);
                    for change in diff.iter_all_changes() {
                        match change.tag() {
                            ChangeTag::Insert => ins += 1,
                            ChangeTag::Delete => del += 1,
                            ChangeTag::Equal => {}
                        }
                    }
                    parts.push(format!("~ {name} (+{ins}/-{del} lines)"));
                }
                _ => {}
            }
        }
        if parts.is_empty() {
            return Err(Error::Synthesis("source and target solutions are identical".into()));
        }
        Instruction::pseudo(format!("Apply the following changes: {}", parts.join("; ")))
    }
}

pub fn synthesizer_by_name(name: &str, llm: Arc<dyn ChatBackend>) -> Result<Arc<dyn InstructionSynthesizer>> {
    match name {
        "self-instruct" => Ok(Arc::new(SelfInstructSynthesizer::new(llm))),
        "diff-summary" => Ok(Arc::new(DiffSummarySynthesizer)),
        other => Err(Error::UnknownStrategy {
            kind: "synthesizer",
            name: other.to_string(),
            available: "diff-summary, self-instruct".into(),
        }),
    }
}

pub fn synthesize_instruction(src: &Solution, dst: &Solution, synth: &dyn InstructionSynthesizer) -> Result<Instruction> {
    if src == dst {
        return Err(Error::Synthesis("shortcut endpoints must differ".into()));
    }
    let mut ins = synth.synthesize(src, dst)?;
    ins.origin = crate::model::InstructionOrigin::Pseudo;
    Ok(ins)
}

/// Labels candidates with synthesized instructions. A failed synthesis drops
/// only that shortcut.
fn label_candidates(
    graph: &ExecutionGraph,
    candidates: Vec<Candidate>,
    synth: &dyn InstructionSynthesizer,
) -> Vec<Shortcut> {
    candidates
        .into_iter()
        .filter_map(|c| {
            let (src, dst) = (graph.node(&c.src)?, graph.node(&c.dst)?);
            match synthesize_instruction(src, dst, synth) {
                Ok(instruction) => Some(Shortcut {
                    task_id: graph.task_id.clone(),
                    src: c.src,
                    dst: c.dst,
                    instruction,
                    gain: c.gain,
                }),
                Err(e) => {
                    warn!(task = %graph.task_id, src = c.src.short(), dst = c.dst.short(), error = %e, "dropping shortcut");
                    None
                }
            }
        })
        .collect()
}

pub fn extract_shortcuts(
    graph: &ExecutionGraph,
    scores: &Scores,
    epsilon: f64,
    synth: &dyn InstructionSynthesizer,
) -> Result<Vec<Shortcut>> {
    let candidates = shortcut_candidates(graph, scores, epsilon)?;
    Ok(label_candidates(graph, candidates, synth))
}

/// What an extraction strategy sees for one task.
pub struct ExtractionInput<'a> {
    pub trajectory: &'a Trajectory,
    pub graph: &'a ExecutionGraph,
    pub scores: &'a Scores,
    pub epsilon: f64,
}

pub trait ExtractionStrategy: Send + Sync {
    fn name(&self) -> &'static str;
    fn extract(&self, input: &ExtractionInput<'_>, synth: &dyn InstructionSynthesizer) -> Result<Vec<Shortcut>>;
}

/// Shortest-path shortcuts with an information-gain threshold.
pub struct ShortestPathShortcuts;

impl ExtractionStrategy for ShortestPathShortcuts {
    fn name(&self) -> &'static str {
        "shortest-path"
    }

    fn extract(&self, input: &ExtractionInput<'_>, synth: &dyn InstructionSynthesizer) -> Result<Vec<Shortcut>> {
        extract_shortcuts(input.graph, input.scores, input.epsilon, synth)
    }
}

/// Every trajectory round whose result compiles, with its live instruction.
pub struct AdjacentExecution;

impl AdjacentExecution {
    pub fn entries(input: &ExtractionInput<'_>) -> Result<Vec<Shortcut>> {
        let chain = input.trajectory.chain();
        let mut out = Vec::new();
        for (j, step) in input.trajectory.steps.iter().enumerate() {
            let (src, dst) = (chain[j].id(), chain[j + 1].id());
            let compiles = input
                .scores
                .get(&dst)
                .map(|s| s.compiles)
                .ok_or_else(|| Error::Config(format!("no score for node {dst}")))?;
            if compiles {
                let gain = omega(input.scores, &dst)? - omega(input.scores, &src)?;
                out.push(Shortcut {
                    task_id: input.trajectory.task_id.clone(),
                    src,
                    dst,
                    instruction: step.instruction.clone(),
                    gain,
                });
            }
        }
        Ok(out)
    }
}

impl ExtractionStrategy for AdjacentExecution {
    fn name(&self) -> &'static str {
        "adjacent-execution"
    }

    fn extract(&self, input: &ExtractionInput<'_>, _synth: &dyn InstructionSynthesizer) -> Result<Vec<Shortcut>> {
        Self::entries(input)
    }
}

/// Only the source-to-sink shortcut, when it qualifies.
pub struct LongestShortcutOnly;

impl LongestShortcutOnly {
    pub fn candidate(graph: &ExecutionGraph, scores: &Scores, epsilon: f64) -> Result<Option<Candidate>> {
        let (src, dst) = (&graph.source_id, &graph.sink_id);
        if src == dst || graph.has_edge(src, dst) || !graph.reachable(src, dst) {
            return Ok(None);
        }
        let gain = omega(scores, dst)? - omega(scores, src)?;
        Ok((gain >= epsilon).then(|| Candidate { src: src.clone(), dst: dst.clone(), gain }))
    }
}

impl ExtractionStrategy for LongestShortcutOnly {
    fn name(&self) -> &'static str {
        "longest-shortcut-only"
    }

    fn extract(&self, input: &ExtractionInput<'_>, synth: &dyn InstructionSynthesizer) -> Result<Vec<Shortcut>> {
        let candidates = Self::candidate(input.graph, input.scores, input.epsilon)?.into_iter().collect();
        Ok(label_candidates(input.graph, candidates, synth))
    }
}

/// Shortcut conditions applied to raw chain positions, without merging
/// repeated solutions.
pub struct GraphUnconstructed;

impl GraphUnconstructed {
    pub fn candidates(trajectory: &Trajectory, scores: &Scores, epsilon: f64) -> Result<Vec<Candidate>> {
        let ids: Vec<SolutionId> = trajectory.chain().iter().map(|s| s.id()).collect();
        let mut out = Vec::new();
        for p in 0..ids.len() {
            for q in (p + 2)..ids.len() {
                if ids[p] == ids[q] {
                    continue;
                }
                let gain = omega(scores, &ids[q])? - omega(scores, &ids[p])?;
                if gain >= epsilon {
                    out.push(Candidate { src: ids[p].clone(), dst: ids[q].clone(), gain });
                }
            }
        }
        Ok(out)
    }
}

impl ExtractionStrategy for GraphUnconstructed {
    fn name(&self) -> &'static str {
        "graph-unconstructed"
    }

    fn extract(&self, input: &ExtractionInput<'_>, synth: &dyn InstructionSynthesizer) -> Result<Vec<Shortcut>> {
        let candidates = Self::candidates(input.trajectory, input.scores, input.epsilon)?;
        Ok(label_candidates(input.graph, candidates, synth))
    }
}

pub struct ExtractionRegistry {
    strategies: BTreeMap<&'static str, Arc<dyn ExtractionStrategy>>,
}

impl Default for ExtractionRegistry {
    fn default() -> Self {
        let mut r = ExtractionRegistry { strategies: BTreeMap::new() };
        r.register(Arc::new(ShortestPathShortcuts));
        r.register(Arc::new(AdjacentExecution));
        r.register(Arc::new(LongestShortcutOnly));
        r.register(Arc::new(GraphUnconstructed));
        r
    }
}

impl ExtractionRegistry {
    pub const DEFAULT: &'static str = "shortest-path";

    pub fn register(&mut self, strategy: Arc<dyn ExtractionStrategy>) {
        self.strategies.insert(strategy.name(), strategy);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.strategies.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ExtractionStrategy>> {
        self.strategies.get(name).cloned().ok_or_else(|| Error::UnknownStrategy {
            kind: "extraction mode",
            name: name.to_string(),
            available: self.names().join(", "),
        })
    }
}

/// One pool entry before embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingEntry {
    pub key_text: String,
    pub value_text: String,
    pub task_id: String,
    pub gain: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GatheredExperiences {
    pub instructor: Vec<PendingEntry>,
    pub assistant: Vec<PendingEntry>,
}

/// Splits each shortcut into a solution->instruction entry for the instructor
/// and an instruction->solution entry for the assistant. Shortcuts leaving
/// the empty solution have no usable instructor key and feed only the
/// assistant pool.
pub fn gather_experiences<'a, I>(per_task: I) -> GatheredExperiences
where
    I: IntoIterator<Item = (&'a ExecutionGraph, &'a [Shortcut])>,
{
    let mut out = GatheredExperiences::default();
    for (graph, shortcuts) in per_task {
        for sc in shortcuts {
            let (Some(src), Some(dst)) = (graph.node(&sc.src), graph.node(&sc.dst)) else {
                warn!(task = %sc.task_id, "shortcut endpoint missing from graph; skipped");
                continue;
            };
            if !src.is_empty() {
                out.instructor.push(PendingEntry {
                    key_text: src.canonical_text(),
                    value_text: sc.instruction.text.clone(),
                    task_id: sc.task_id.clone(),
                    gain: sc.gain,
                });
            }
            out.assistant.push(PendingEntry {
                key_text: sc.instruction.text.clone(),
                value_text: dst.canonical_text(),
                task_id: sc.task_id.clone(),
                gain: sc.gain,
            });
        }
    }
    out
}

/// Everything co-memorizing derives from one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMemory {
    pub graph: ExecutionGraph,
    pub scores: Scores,
    pub shortcuts: Vec<Shortcut>,
}

pub fn memorize_task(
    trajectory: &Trajectory,
    task: &Task,
    embedder: &dyn Embedder,
    compiler: &dyn CompileChecker,
    strategy: &dyn ExtractionStrategy,
    synth: &dyn InstructionSynthesizer,
    epsilon: f64,
) -> Result<TaskMemory> {
    let graph = ExecutionGraph::build(trajectory);
    let scores = score_nodes(&graph, task, embedder, compiler)?;
    let shortcuts = strategy.extract(
        &ExtractionInput { trajectory, graph: &graph, scores: &scores, epsilon },
        synth,
    )?;
    Ok(TaskMemory { graph, scores, shortcuts })
}
