//! Software metrics, graph statistics, dataset splitting and the retrieval
//! sensitivity grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{clamped_cosine, Backends, CompileChecker, EmbedKind, Embedder};
use crate::error::{Error, Result};
use crate::graph::ExecutionGraph;
use crate::model::{Solution, Task};
use crate::reasoning::{run_coreasoning, ReasoningConfig, ReasoningTranscript};
use crate::store::ExperiencePool;

const TODO_TOKEN: &str = "TODO";

/// 1 when no file contains `TODO` as a whole word (identifier characters are
/// `[A-Za-z0-9_]`), 0 otherwise. The empty solution scores 0.
pub fn completeness(sol: &Solution) -> u8 {
    if sol.is_empty() {
        return 0;
    }
    let has_todo = sol.files().values().any(|content| {
        content
            .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .any(|tok| tok == TODO_TOKEN)
    });
    u8::from(!has_todo)
}

pub fn executability(sol: &Solution, compiler: &dyn CompileChecker) -> Result<u8> {
    Ok(u8::from(compiler.check(sol)?.ok))
}

/// Clamped cosine between the requirement's text embedding and the solution's
/// code embedding; higher means closer to the requirement.
pub fn consistency(task: &Task, sol: &Solution, embedder: &dyn Embedder) -> Result<f64> {
    if sol.is_empty() {
        return Ok(0.0);
    }
    let req = embedder.embed(&task.requirement, EmbedKind::Text)?;
    let code = embedder.embed(&sol.canonical_text(), EmbedKind::Code)?;
    Ok(clamped_cosine(&req, &code))
}

pub fn quality(completeness: f64, executability: f64, consistency: f64) -> f64 {
    completeness * executability * consistency
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub task_id: String,
    pub completeness: u8,
    pub executability: u8,
    pub consistency: f64,
    pub quality: f64,
    pub duration_seconds: f64,
}

pub fn evaluate_solution(task: &Task, sol: &Solution, duration_seconds: f64, backends: &Backends) -> Result<MetricsRecord> {
    let c = completeness(sol);
    let e = executability(sol, backends.compiler.as_ref())?;
    let con = consistency(task, sol, backends.embedder.as_ref())?;
    Ok(MetricsRecord {
        task_id: task.id.clone(),
        completeness: c,
        executability: e,
        consistency: con,
        quality: quality(f64::from(c), f64::from(e), con),
        duration_seconds,
    })
}

pub fn evaluate_transcript(task: &Task, transcript: &ReasoningTranscript, backends: &Backends) -> Result<MetricsRecord> {
    evaluate_solution(task, &transcript.final_solution, transcript.duration_seconds, backends)
}

/// Column means over a set of records; `quality` is the mean of per-task
/// products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub tasks: usize,
    pub completeness: f64,
    pub executability: f64,
    pub consistency: f64,
    pub quality: f64,
    pub duration_seconds: f64,
}

pub fn aggregate(records: &[MetricsRecord]) -> AggregateMetrics {
    let n = records.len();
    let mean = |f: &dyn Fn(&MetricsRecord) -> f64| {
        if n == 0 {
            0.0
        } else {
            records.iter().map(f).sum::<f64>() / n as f64
        }
    };
    AggregateMetrics {
        tasks: n,
        completeness: mean(&|r| f64::from(r.completeness)),
        executability: mean(&|r| f64::from(r.executability)),
        consistency: mean(&|r| r.consistency),
        quality: mean(&|r| r.quality),
        duration_seconds: mean(&|r| r.duration_seconds),
    }
}

pub fn metrics_tsv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("task_id\tcompleteness\texecutability\tconsistency\tquality\tduration_seconds\n");
    for r in records {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.3}",
            r.task_id, r.completeness, r.executability, r.consistency, r.quality, r.duration_seconds
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub task_id: String,
    pub num_edges: usize,
    pub num_nodes: usize,
    pub shortest_path_len: usize,
}

pub fn graph_stats(graph: &ExecutionGraph) -> GraphStats {
    GraphStats {
        task_id: graph.task_id.clone(),
        num_edges: graph.edges.len(),
        num_nodes: graph.nodes.len(),
        shortest_path_len: graph.shortest_path_nodes().len() - 1,
    }
}

pub fn graph_stats_tsv(stats: &[GraphStats]) -> String {
    let mut out = String::from("task_id\tnum_edges\tnum_nodes\tshortest_path_len\n");
    for s in stats {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", s.task_id, s.num_edges, s.num_nodes, s.shortest_path_len);
    }
    out
}

/// Value -> count, for plotting distributions.
pub fn histogram<I: IntoIterator<Item = usize>>(values: I) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v).or_insert(0) += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Task>,
    pub validation: Vec<Task>,
    pub test: Vec<Task>,
}

/// Splits `n` items by integer ratios with largest-remainder rounding; ties
/// on the remainder go to the earlier part.
pub fn apportion(n: usize, ratios: [usize; 3]) -> [usize; 3] {
    let total: usize = ratios.iter().sum();
    let mut counts = ratios.map(|r| n * r / total);
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(n * ratios[i] % total));
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Stratified split: tasks are grouped by category, each group is sorted by
/// id, shuffled with a generator seeded from `seed`, and cut by `ratios`.
pub fn split_dataset(tasks: &[Task], ratios: [usize; 3], seed: u64) -> Result<DatasetSplit> {
    if ratios.iter().sum::<usize>() == 0 {
        return Err(Error::Config("split ratios must not all be zero".into()));
    }
    let mut by_category: BTreeMap<&str, Vec<&Task>> = BTreeMap::new();
    for t in tasks {
        if t.category.trim().is_empty() {
            return Err(Error::InvalidTask(format!("task {} has no category", t.id)));
        }
        by_category.entry(t.category.as_str()).or_default().push(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit { train: Vec::new(), validation: Vec::new(), test: Vec::new() };
    for group in by_category.values_mut() {
        group.sort_by(|a, b| a.id.cmp(&b.id));
        group.shuffle(&mut rng);
        let [tr, va, _] = apportion(group.len(), ratios);
        for (i, t) in group.iter().enumerate() {
            let bucket = if i < tr {
                &mut split.train
            } else if i < tr + va {
                &mut split.validation
            } else {
                &mut split.test
            };
            bucket.push((*t).clone());
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSpec {
    /// `(k_code, k_text)` over `1..=5` squared, thresholds at their defaults.
    K,
    /// `(theta_code, theta_text)` over `{0.0, 0.2, ..., 1.0}` squared, k at defaults.
    Theta,
    Both,
}

impl std::str::FromStr for GridSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "k" => Ok(GridSpec::K),
            "theta" => Ok(GridSpec::Theta),
            "both" => Ok(GridSpec::Both),
            other => Err(Error::Config(format!("unknown grid {other:?}; expected k, theta or both"))),
        }
    }
}

pub const K_VALUES: [usize; 5] = [1, 2, 3, 4, 5];
pub const THETA_VALUES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub axis: String,
    pub code: f64,
    pub text: f64,
    pub mean_quality: f64,
    pub tasks: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub cells: Vec<GridCell>,
}

impl GridReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("axis\tcode\ttext\tmean_quality\ttasks\tfailures\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.6}\t{}\t{}",
                c.axis, c.code, c.text, c.mean_quality, c.tasks, c.failures
            );
        }
        out
    }
}

/// One grid point: the axis name and the reasoning config to run.
pub fn grid_configs(base: &ReasoningConfig, spec: GridSpec) -> Vec<(String, f64, f64, ReasoningConfig)> {
    let mut out = Vec::new();
    if matches!(spec, GridSpec::K | GridSpec::Both) {
        for &kc in &K_VALUES {
            for &kt in &K_VALUES {
                let cfg = ReasoningConfig { k_code: kc, k_text: kt, ..base.clone() };
                out.push(("k".to_string(), kc as f64, kt as f64, cfg));
            }
        }
    }
    if matches!(spec, GridSpec::Theta | GridSpec::Both) {
        for &tc in &THETA_VALUES {
            for &tt in &THETA_VALUES {
                let cfg = ReasoningConfig { theta_code: tc, theta_text: tt, ..base.clone() };
                out.push(("theta".to_string(), tc, tt, cfg));
            }
        }
    }
    out
}

/// Mean quality of one configuration over the tasks. A task whose run fails
/// scores 0 and is counted in `failures`.
pub fn evaluate_cell(
    tasks: &[Task],
    instructor_pool: &ExperiencePool,
    assistant_pool: &ExperiencePool,
    cfg: &ReasoningConfig,
    backends: &Backends,
) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut failures = 0;
    for task in tasks {
        match run_coreasoning(task, instructor_pool, assistant_pool, cfg, backends) {
            Ok(tr) => total += evaluate_transcript(task, &tr, backends)?.quality,
            Err(e) => {
                tracing::warn!(task = %task.id, error = %e, "sensitivity run failed");
                failures += 1;
            }
        }
    }
    let mean = if tasks.is_empty() { 0.0 } else { total / tasks.len() as f64 };
    Ok((mean, failures))
}

pub fn sensitivity_grid(
    tasks: &[Task],
    instructor_pool: &ExperiencePool,
    assistant_pool: &ExperiencePool,
    base: &ReasoningConfig,
    spec: GridSpec,
    backends: &Backends,
) -> Result<GridReport> {
    let mut cells = Vec::new();
    for (axis, code, text, cfg) in grid_configs(base, spec) {
        let (mean_quality, failures) = evaluate_cell(tasks, instructor_pool, assistant_pool, &cfg, backends)?;
        cells.push(GridCell { axis, code, text, mean_quality, tasks: tasks.len(), failures });
    }
    Ok(GridReport { cells })
}
