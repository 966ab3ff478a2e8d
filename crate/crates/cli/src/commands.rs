use std::collections::BTreeMap;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use chrono::Utc;
use colearn_core::backends::{Backends, BackendRegistry};
use colearn_core::cotracking::run_rehearsal;
use colearn_core::eval::{
    self, aggregate, evaluate_cell, evaluate_solution, graph_stats, grid_configs, histogram, metrics_tsv,
    GridCell, GridReport, GridSpec, MetricsRecord,
};
use colearn_core::memorize::{gather_experiences, memorize_task, synthesizer_by_name, ExtractionRegistry};
use colearn_core::model::{load_tasks, Task};
use colearn_core::store::{ExperiencePool, PoolKind};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{digest_json, PipelineConfig};
use crate::status::{StatusTable, TaskStatus};
use crate::store::{read_json, write_json, write_text, GraphRecord, RunStore, TrajectoryRecord, TranscriptRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSource {
    /// Final solutions of co-reasoning transcripts.
    Transcripts,
    /// Final solutions of rehearsal trajectories.
    Rehearsal,
}

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub store: RunStore,
    pub backends: Backends,
    pub pool: rayon::ThreadPool,
    pub force: bool,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig, workers: usize, force: bool) -> Result<Self> {
        cfg.validate()?;
        let backends = BackendRegistry::default().build(&cfg.backends)?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
        let store = RunStore::new(cfg.paths.work_dir.clone());
        Ok(Ctx { cfg, store, backends, pool, force })
    }

    pub fn tasks(&self, which: SplitChoice) -> Result<Vec<Task>> {
        let all = load_tasks(&self.cfg.paths.tasks)?;
        if which == SplitChoice::All {
            return Ok(all);
        }
        let split = eval::split_dataset(&all, self.cfg.split.ratios, self.cfg.split.seed)?;
        Ok(match which {
            SplitChoice::Train => split.train,
            SplitChoice::Validation => split.validation,
            SplitChoice::Test => split.test,
            SplitChoice::All => unreachable!(),
        })
    }

    /// Runs `f` over tasks on the worker pool, keeping task order.
    fn per_task<T, F>(&self, tasks: &[Task], f: F) -> Vec<(TaskStatus, Option<T>)>
    where
        T: Send,
        F: Fn(&Task) -> Result<(TaskStatus, Option<T>)> + Sync,
    {
        self.pool.install(|| {
            tasks
                .par_iter()
                .map(|t| f(t).unwrap_or_else(|e| (TaskStatus::failed(&t.id, &e), None)))
                .collect()
        })
    }

    fn load_pool(&self, kind: PoolKind) -> Result<ExperiencePool> {
        let path = match kind {
            PoolKind::Instructor => self.store.instructor_pool(),
            PoolKind::Assistant => self.store.assistant_pool(),
        };
        if !path.exists() {
            tracing::warn!(path = %path.display(), "pool file missing; reasoning without experience");
            return Ok(ExperiencePool::new(kind, self.backends.embedder.as_ref()));
        }
        let pool = ExperiencePool::load(&path, self.backends.embedder.as_ref())?;
        if pool.kind != kind {
            bail!("{} holds a {:?} pool, expected {:?}", path.display(), pool.kind, kind);
        }
        Ok(pool)
    }
}

pub fn track(ctx: &Ctx, which: SplitChoice) -> Result<StatusTable> {
    let tasks = ctx.tasks(which)?;
    let digest = ctx.cfg.rehearsal_digest();
    let rows = ctx.per_task(&tasks, |task| {
        let path = ctx.store.trajectory_path(&task.id);
        if !ctx.force && path.exists() {
            let old: TrajectoryRecord = read_json(&path)?;
            if old.config_digest == digest {
                return Ok((TaskStatus::skipped(&task.id, "trajectory up to date"), None));
            }
        }
        let start = Instant::now();
        let trajectory = run_rehearsal(task, &ctx.cfg.rehearsal, ctx.backends.chat.as_ref())?;
        let record = TrajectoryRecord {
            task_id: task.id.clone(),
            config_digest: digest.clone(),
            created_at: Utc::now(),
            duration_seconds: start.elapsed().as_secs_f64(),
            trajectory,
        };
        ctx.store.store_solutions(record.trajectory.steps.iter().map(|s| &s.solution))?;
        write_json(&path, &record)?;
        Ok((TaskStatus::ok(&task.id, format!("{} steps", record.trajectory.steps.len())), Some(())))
    });
    Ok(collect(rows).0)
}

#[derive(Serialize)]
struct MemorizeSummary {
    mode: String,
    epsilon: f64,
    synthesizer: String,
    tasks: usize,
    shortcuts: BTreeMap<String, usize>,
    instructor_entries: usize,
    assistant_entries: usize,
}

pub fn memorize(ctx: &Ctx, which: SplitChoice) -> Result<StatusTable> {
    let cfg = &ctx.cfg;
    let strategy = ExtractionRegistry::default().get(&cfg.mode)?;
    let synth = synthesizer_by_name(&cfg.synthesizer, ctx.backends.chat.clone())?;
    let tasks = ctx.tasks(which)?;
    let rows = ctx.per_task(&tasks, |task| {
        let path = ctx.store.trajectory_path(&task.id);
        if !path.exists() {
            bail!("no trajectory; run `track` first");
        }
        let rec: TrajectoryRecord = read_json(&path)?;
        let memory = memorize_task(
            &rec.trajectory,
            task,
            ctx.backends.embedder.as_ref(),
            ctx.backends.compiler.as_ref(),
            strategy.as_ref(),
            synth.as_ref(),
            cfg.epsilon,
        )?;
        let record = GraphRecord {
            task_id: task.id.clone(),
            mode: strategy.name().to_string(),
            epsilon: cfg.epsilon,
            synthesizer: synth.name().to_string(),
            created_at: Utc::now(),
            stats: graph_stats(&memory.graph),
            memory,
        };
        write_json(&ctx.store.graph_path(&task.id), &record)?;
        let detail = format!("{} shortcuts", record.memory.shortcuts.len());
        Ok((TaskStatus::ok(&task.id, detail), Some(record)))
    });
    let (mut table, records) = collect(rows);

    let gathered = gather_experiences(records.iter().map(|r| (&r.memory.graph, r.memory.shortcuts.as_slice())));
    let embedder = ctx.backends.embedder.as_ref();
    let mut pools = Vec::new();
    for (kind, pending) in [(PoolKind::Instructor, &gathered.instructor), (PoolKind::Assistant, &gathered.assistant)] {
        let mut pool = ExperiencePool::new(kind, embedder).with_epsilon(cfg.epsilon);
        for e in pending {
            pool.insert(&e.key_text, &e.value_text, &e.task_id, e.gain, embedder)?;
        }
        pools.push(pool);
    }
    if pools.iter().all(ExperiencePool::is_empty) {
        tracing::warn!(epsilon = cfg.epsilon, "no experiences were extracted; pools are empty");
    }
    pools[0].save(&ctx.store.instructor_pool())?;
    pools[1].save(&ctx.store.assistant_pool())?;
    let summary = MemorizeSummary {
        mode: strategy.name().to_string(),
        epsilon: cfg.epsilon,
        synthesizer: synth.name().to_string(),
        tasks: records.len(),
        shortcuts: records.iter().map(|r| (r.task_id.clone(), r.memory.shortcuts.len())).collect(),
        instructor_entries: pools[0].len(),
        assistant_entries: pools[1].len(),
    };
    write_json(&ctx.store.report("memorize_summary.json"), &summary)?;
    table.push(TaskStatus::ok(
        "(pools)",
        format!("instructor {} entries, assistant {} entries", pools[0].len(), pools[1].len()),
    ));
    Ok(table)
}

pub fn reason(ctx: &Ctx, which: SplitChoice) -> Result<StatusTable> {
    let instructor = ctx.load_pool(PoolKind::Instructor)?;
    let assistant = ctx.load_pool(PoolKind::Assistant)?;
    let rcfg = ctx.cfg.reasoning();
    let pool_ids: Vec<_> = [&instructor, &assistant]
        .iter()
        .map(|p| (p.fingerprint.clone(), p.built_at, p.len()))
        .collect();
    let digest = digest_json(&(ctx.cfg.reasoning_digest(), pool_ids));
    let tasks = ctx.tasks(which)?;
    let rows = ctx.per_task(&tasks, |task| {
        let path = ctx.store.transcript_path(&task.id);
        if !ctx.force && path.exists() {
            let old: TranscriptRecord = read_json(&path)?;
            if old.config_digest == digest {
                return Ok((TaskStatus::skipped(&task.id, "transcript up to date"), Some(old)));
            }
        }
        let transcript = colearn_core::reasoning::run_coreasoning(task, &instructor, &assistant, &rcfg, &ctx.backends)?;
        let record = TranscriptRecord {
            task_id: task.id.clone(),
            config_digest: digest.clone(),
            created_at: Utc::now(),
            instructor_pool_entries: instructor.len(),
            assistant_pool_entries: assistant.len(),
            transcript,
        };
        ctx.store.store_solutions(record.transcript.rounds.iter().map(|r| &r.solution))?;
        write_json(&path, &record)?;
        let s = record.transcript.summary();
        let detail = format!("{} rounds, {} + {} retrieved", s.rounds, s.instructor_hits, s.assistant_hits);
        Ok((TaskStatus::ok(&task.id, detail), Some(record)))
    });
    let (table, records) = collect(rows);
    let summaries: Vec<_> = records.iter().map(|r| r.transcript.summary()).collect();
    write_json(&ctx.store.report("reasoning_summary.json"), &summaries)?;
    Ok(table)
}

#[derive(Serialize)]
struct MetricsReport<'a> {
    source: &'a str,
    aggregate: eval::AggregateMetrics,
    records: &'a [MetricsRecord],
}

pub fn evaluate(ctx: &Ctx, which: SplitChoice, source: EvalSource) -> Result<StatusTable> {
    let tasks = ctx.tasks(which)?;
    let rows = ctx.per_task(&tasks, |task| {
        let (solution, duration) = match source {
            EvalSource::Transcripts => {
                let rec: TranscriptRecord = read_json(&ctx.store.transcript_path(&task.id))
                    .context("no transcript; run `reason` first")?;
                (rec.transcript.final_solution, rec.transcript.duration_seconds)
            }
            EvalSource::Rehearsal => {
                let rec: TrajectoryRecord = read_json(&ctx.store.trajectory_path(&task.id))
                    .context("no trajectory; run `track` first")?;
                (rec.trajectory.final_solution().clone(), rec.duration_seconds)
            }
        };
        let m = evaluate_solution(task, &solution, duration, &ctx.backends)?;
        let detail = format!("quality {:.4}", m.quality);
        Ok((TaskStatus::ok(&task.id, detail), Some(m)))
    });
    let (mut table, records) = collect(rows);
    let (name, label) = match source {
        EvalSource::Transcripts => ("metrics", "transcripts"),
        EvalSource::Rehearsal => ("metrics_rehearsal", "rehearsal"),
    };
    write_text(&ctx.store.report(&format!("{name}.tsv")), &metrics_tsv(&records))?;
    let agg = aggregate(&records);
    table.push(TaskStatus::ok(
        "(mean)",
        format!(
            "completeness {:.4}, executability {:.4}, consistency {:.4}, quality {:.4}",
            agg.completeness, agg.executability, agg.consistency, agg.quality
        ),
    ));
    write_json(
        &ctx.store.report(&format!("{name}.json")),
        &MetricsReport { source: label, aggregate: agg, records: &records },
    )?;
    Ok(table)
}

#[derive(Serialize)]
struct PlotData {
    num_edges: BTreeMap<usize, usize>,
    num_nodes: BTreeMap<usize, usize>,
    shortest_path_len: BTreeMap<usize, usize>,
}

pub fn stats(ctx: &Ctx, which: SplitChoice, plot_data: bool) -> Result<StatusTable> {
    let tasks = ctx.tasks(which)?;
    let rows = ctx.per_task(&tasks, |task| {
        let rec: GraphRecord =
            read_json(&ctx.store.graph_path(&task.id)).context("no graph record; run `memorize` first")?;
        let s = rec.stats;
        let detail = format!("{} edges, {} nodes, path {}", s.num_edges, s.num_nodes, s.shortest_path_len);
        Ok((TaskStatus::ok(&task.id, detail), Some(s)))
    });
    let (table, stats) = collect(rows);
    write_text(&ctx.store.report("graph_stats.tsv"), &eval::graph_stats_tsv(&stats))?;
    write_json(&ctx.store.report("graph_stats.json"), &stats)?;
    if plot_data {
        let plot = PlotData {
            num_edges: histogram(stats.iter().map(|s| s.num_edges)),
            num_nodes: histogram(stats.iter().map(|s| s.num_nodes)),
            shortest_path_len: histogram(stats.iter().map(|s| s.shortest_path_len)),
        };
        write_json(&ctx.store.report("graph_stats_plot.json"), &plot)?;
    }
    Ok(table)
}

pub fn sensitivity(ctx: &Ctx, which: SplitChoice, spec: GridSpec) -> Result<StatusTable> {
    let instructor = ctx.load_pool(PoolKind::Instructor)?;
    let assistant = ctx.load_pool(PoolKind::Assistant)?;
    let tasks = ctx.tasks(which)?;
    let configs = grid_configs(&ctx.cfg.reasoning(), spec);
    let cells: Vec<Result<GridCell>> = ctx.pool.install(|| {
        configs
            .par_iter()
            .map(|(axis, code, text, cfg)| {
                let (mean_quality, failures) = evaluate_cell(&tasks, &instructor, &assistant, cfg, &ctx.backends)?;
                Ok(GridCell { axis: axis.clone(), code: *code, text: *text, mean_quality, tasks: tasks.len(), failures })
            })
            .collect()
    });
    let mut table = StatusTable::default();
    let mut report = GridReport { cells: Vec::new() };
    for cell in cells {
        match cell {
            Ok(c) => {
                let id = format!("{}=({}, {})", c.axis, c.code, c.text);
                let detail = format!("mean quality {:.4}", c.mean_quality);
                if c.failures > 0 {
                    table.push(TaskStatus::failed(&id, &anyhow!("{} of {} tasks failed; {detail}", c.failures, c.tasks)));
                } else {
                    table.push(TaskStatus::ok(&id, detail));
                }
                report.cells.push(c);
            }
            Err(e) => table.push(TaskStatus::failed("(cell)", &e)),
        }
    }
    let name = match spec {
        GridSpec::K => "sensitivity_k",
        GridSpec::Theta => "sensitivity_theta",
        GridSpec::Both => "sensitivity",
    };
    write_text(&ctx.store.report(&format!("{name}.tsv")), &report.to_tsv())?;
    write_json(&ctx.store.report(&format!("{name}.json")), &report)?;
    Ok(table)
}

#[derive(Serialize)]
struct SplitReport {
    seed: u64,
    ratios: [usize; 3],
    train: Vec<String>,
    validation: Vec<String>,
    test: Vec<String>,
}

pub fn split(ctx: &Ctx) -> Result<StatusTable> {
    let all = load_tasks(&ctx.cfg.paths.tasks)?;
    let s = eval::split_dataset(&all, ctx.cfg.split.ratios, ctx.cfg.split.seed)?;
    let ids = |v: &[Task]| v.iter().map(|t| t.id.clone()).collect::<Vec<_>>();
    let report = SplitReport {
        seed: ctx.cfg.split.seed,
        ratios: ctx.cfg.split.ratios,
        train: ids(&s.train),
        validation: ids(&s.validation),
        test: ids(&s.test),
    };
    write_json(&ctx.store.report("split.json"), &report)?;
    let mut table = StatusTable::default();
    for (name, v) in [("train", &report.train), ("validation", &report.validation), ("test", &report.test)] {
        table.push(TaskStatus::ok(name, format!("{} tasks", v.len())));
    }
    Ok(table)
}

fn collect<T>(rows: Vec<(TaskStatus, Option<T>)>) -> (StatusTable, Vec<T>) {
    let mut table = StatusTable::default();
    let mut out = Vec::new();
    for (status, value) in rows {
        table.push(status);
        out.extend(value);
    }
    (table, out)
}
