//! End-to-end runs of the `colearn` binary on the stub backends.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").canonicalize().unwrap()
}

/// A scratch run directory with the first `n` sample tasks and a config file.
struct Run {
    dir: tempfile::TempDir,
}

impl Run {
    fn new(n: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let tasks: Vec<&str> = include_str!("../../../fixtures/tasks.jsonl")
            .lines()
            .filter(|l| l.starts_with('{'))
            .take(n)
            .collect();
        fs::write(dir.path().join("tasks.jsonl"), tasks.join("\n") + "\n").unwrap();
        let config = format!(
            "epsilon = 0.05\n[paths]\ntasks = \"tasks.jsonl\"\nwork_dir = \"work\"\n[backends]\nkind = \"stub\"\nstub_fixture = {:?}\n",
            fixtures().join("stub_fixture.json")
        );
        fs::write(dir.path().join("config.toml"), config).unwrap();
        Run { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn colearn(&self, args: &[&str]) -> Output {
        let out = Command::new(env!("CARGO_BIN_EXE_colearn"))
            .arg("--config")
            .arg(self.path("config.toml"))
            .args(args)
            .env_remove("COLEARN_EPSILON")
            .env_remove("COLEARN_BACKEND")
            .env_remove("COLEARN_WORK_DIR")
            .env_remove("COLEARN_STUB_FIXTURE")
            .output()
            .unwrap();
        out
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.colearn(args);
        assert!(
            out.status.success(),
            "colearn {args:?} failed\nstdout:\n{}\nstderr:\n{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn json(&self, rel: &str) -> Value {
        serde_json::from_str(&fs::read_to_string(self.path(rel)).unwrap()).unwrap()
    }

    fn records(&self, sub: &str) -> BTreeMap<String, Value> {
        let dir = self.path(&format!("work/{sub}"));
        let mut out = BTreeMap::new();
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            let v: Value = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
            out.insert(v["task_id"].as_str().unwrap().to_string(), v);
        }
        out
    }
}

fn pool_entries(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn track_is_resumable_and_force_replaces_records() {
    let run = Run::new(3);
    let out = run.ok(&["track", "--split", "all"]);
    assert!(out.contains("track: 3 ok, 0 skipped, 0 failed"), "{out}");
    let first = run.records("trajectories");
    assert_eq!(first.len(), 3);

    let out = run.ok(&["track", "--split", "all"]);
    assert!(out.contains("track: 0 ok, 3 skipped, 0 failed"), "{out}");
    assert_eq!(run.records("trajectories"), first);

    std::thread::sleep(std::time::Duration::from_millis(20));
    let out = run.ok(&["--force", "--workers", "3", "track", "--split", "all"]);
    assert!(out.contains("track: 3 ok, 0 skipped, 0 failed"), "{out}");
    let second = run.records("trajectories");
    for (id, rec) in &first {
        let (a, b) = (rec["created_at"].as_str().unwrap(), second[id]["created_at"].as_str().unwrap());
        assert!(b > a, "{id}: {b} not after {a}");
        assert_eq!(rec["trajectory"], second[id]["trajectory"]);
    }
}

/// Omega per node id from a graph record.
fn omegas(graph: &Value) -> BTreeMap<String, f64> {
    graph["memory"]["scores"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.clone(), v["omega"].as_f64().unwrap()))
        .collect()
}

#[test]
fn memorize_pool_sizes_match_hand_oracle() {
    let run = Run::new(3);
    run.ok(&["track", "--split", "all"]);
    run.ok(&["memorize", "--split", "all"]);
    let graphs = run.records("graphs");
    let trajectories = run.records("trajectories");
    let mut instructor = BTreeSet::new();
    let mut assistant = BTreeSet::new();
    for (id, g) in &graphs {
        // every stub rehearsal is a pure chain: empty -> skeleton -> implementation -> logging -> tests
        let mut chain = vec!["d41d8cd98f00b204e9800998ecf8427e".to_string()];
        let mut contents = vec![BTreeMap::<String, String>::new()];
        for step in trajectory_steps(&trajectories[id]) {
            contents.push(step.1.clone());
            chain.push(canonical_md5(&step.1));
        }
        assert_eq!(BTreeSet::from_iter(&chain).len(), chain.len(), "{id}: not a pure chain");
        let w = omegas(g);
        let mut expected = Vec::new();
        for p in 0..chain.len() {
            for q in p + 2..chain.len() {
                if w[&chain[q]] - w[&chain[p]] >= 0.05 {
                    expected.push((chain[p].clone(), chain[q].clone()));
                }
            }
        }
        let got: Vec<(String, String)> = g["memory"]["shortcuts"]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| (s["src"].as_str().unwrap().to_string(), s["dst"].as_str().unwrap().to_string()))
            .collect();
        assert_eq!(got, expected, "{id}");
        for s in g["memory"]["shortcuts"].as_array().unwrap() {
            let instr = s["instruction"]["text"].as_str().unwrap().to_string();
            let src = chain.iter().position(|c| c == s["src"].as_str().unwrap()).unwrap();
            let dst = chain.iter().position(|c| c == s["dst"].as_str().unwrap()).unwrap();
            if src != 0 {
                instructor.insert((canonical(&contents[src]), instr.clone()));
            }
            assistant.insert((instr, canonical(&contents[dst])));
        }
    }
    assert!(!assistant.is_empty());
    assert_eq!(pool_entries(&run.path("work/pools/instructor.jsonl")), instructor.len());
    assert_eq!(pool_entries(&run.path("work/pools/assistant.jsonl")), assistant.len());
}

fn trajectory_steps(rec: &Value) -> Vec<(String, BTreeMap<String, String>)> {
    rec["trajectory"]["steps"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            let files = s["solution"]
                .as_object()
                .unwrap()
                .iter()
                .map(|(k, v)| (k.clone(), v.as_str().unwrap().to_string()))
                .collect();
            (s["instruction"]["text"].as_str().unwrap().to_string(), files)
        })
        .collect()
}

fn canonical(files: &BTreeMap<String, String>) -> String {
    files.iter().map(|(n, c)| format!("{n}\0{c}\0")).collect()
}

fn canonical_md5(files: &BTreeMap<String, String>) -> String {
    md5_hex(canonical(files).as_bytes())
}

/// RFC 1321, written out so the check does not share code with the library.
fn md5_hex(input: &[u8]) -> String {
    const S: [u32; 64] = [
        7, 12, 17, 22, 7, 12, 17, 22, 7, 12, 17, 22, 7, 12, 17, 22, 5, 9, 14, 20, 5, 9, 14, 20, 5, 9, 14, 20, 5, 9,
        14, 20, 4, 11, 16, 23, 4, 11, 16, 23, 4, 11, 16, 23, 4, 11, 16, 23, 6, 10, 15, 21, 6, 10, 15, 21, 6, 10, 15,
        21, 6, 10, 15, 21,
    ];
    let k: Vec<u32> = (0..64).map(|i| ((i as f64 + 1.0).sin().abs() * 4294967296.0) as u32).collect();
    let mut msg = input.to_vec();
    let bit_len = (input.len() as u64).wrapping_mul(8);
    msg.push(0x80);
    while msg.len() % 64 != 56 {
        msg.push(0);
    }
    msg.extend_from_slice(&bit_len.to_le_bytes());
    let (mut a0, mut b0, mut c0, mut d0) = (0x67452301u32, 0xefcdab89u32, 0x98badcfeu32, 0x10325476u32);
    for chunk in msg.chunks(64) {
        let m: Vec<u32> = chunk.chunks(4).map(|w| u32::from_le_bytes([w[0], w[1], w[2], w[3]])).collect();
        let (mut a, mut b, mut c, mut d) = (a0, b0, c0, d0);
        for i in 0..64 {
            let (f, g) = match i / 16 {
                0 => ((b & c) | (!b & d), i),
                1 => ((d & b) | (!d & c), (5 * i + 1) % 16),
                2 => (b ^ c ^ d, (3 * i + 5) % 16),
                _ => (c ^ (b | !d), (7 * i) % 16),
            };
            let f = f.wrapping_add(a).wrapping_add(k[i]).wrapping_add(m[g]);
            a = d;
            d = c;
            c = b;
            b = b.wrapping_add(f.rotate_left(S[i]));
        }
        a0 = a0.wrapping_add(a);
        b0 = b0.wrapping_add(b);
        c0 = c0.wrapping_add(c);
        d0 = d0.wrapping_add(d);
    }
    [a0, b0, c0, d0].iter().flat_map(|x| x.to_le_bytes()).map(|b| format!("{b:02x}")).collect()
}

#[test]
fn md5_oracle_matches_rfc_vectors() {
    assert_eq!(md5_hex(b""), "d41d8cd98f00b204e9800998ecf8427e");
    assert_eq!(md5_hex(b"abc"), "900150983cd24fb0d6963f7d28e17f72");
    assert_eq!(
        md5_hex(b"12345678901234567890123456789012345678901234567890123456789012345678901234567890"),
        "57edf4a22be3c955ac49da2e2107b67a"
    );
}

#[test]
fn ablation_mode_and_high_epsilon() {
    let run = Run::new(3);
    run.ok(&["track", "--split", "all"]);
    run.ok(&["--mode", "longest-shortcut-only", "memorize", "--split", "all"]);
    let summary = run.json("work/reports/memorize_summary.json");
    assert_eq!(summary["mode"], "longest-shortcut-only");
    for (_, n) in summary["shortcuts"].as_object().unwrap() {
        assert!(n.as_u64().unwrap() <= 1);
    }

    let out = run.colearn(&["--epsilon", "1.1", "memorize", "--split", "all"]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("pools are empty"), "{stderr}");
    assert_eq!(pool_entries(&run.path("work/pools/instructor.jsonl")), 0);
    assert_eq!(pool_entries(&run.path("work/pools/assistant.jsonl")), 0);

    let out = run.colearn(&["--mode", "no-such-mode", "memorize"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("shortest-path"));
}

#[test]
fn reason_without_pools_falls_back() {
    let run = Run::new(2);
    run.ok(&["track", "--split", "all"]);
    let out = run.ok(&["reason", "--split", "all"]);
    assert!(out.contains("reason: 2 ok"), "{out}");
    let transcripts = run.records("transcripts");
    let trajectories = run.records("trajectories");
    for (id, t) in &transcripts {
        assert_eq!(t["instructor_pool_entries"], 0);
        let rounds = t["transcript"]["rounds"].as_array().unwrap();
        let steps = trajectories[id]["trajectory"]["steps"].as_array().unwrap();
        assert_eq!(rounds.len(), steps.len());
        for (r, s) in rounds.iter().zip(steps) {
            assert_eq!(r["solution"], s["solution"]);
            assert_eq!(r["instruction"], s["instruction"]);
        }
    }
}

fn fnv_bucket(gram: &str, dim: u64) -> usize {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in gram.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    (h % dim) as usize
}

fn trigram_counts(text: &str) -> Vec<f64> {
    let chars: Vec<char> = text.chars().collect();
    let mut v = vec![0.0; 1024];
    for w in chars.windows(3) {
        v[fnv_bucket(&w.iter().collect::<String>(), 1024)] += 1.0;
    }
    v
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (n(a) * n(b))).clamp(0.0, 1.0)
}

#[test]
fn eval_and_stats_match_hand_computation() {
    let run = Run::new(3);
    run.ok(&["track", "--split", "all"]);
    run.ok(&["memorize", "--split", "all"]);
    run.ok(&["reason", "--split", "all"]);
    run.ok(&["eval", "--split", "all"]);
    let report = run.json("work/reports/metrics.json");
    let tasks: BTreeMap<String, String> = fs::read_to_string(run.path("tasks.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            (v["id"].as_str().unwrap().to_string(), v["requirement"].as_str().unwrap().to_string())
        })
        .collect();
    let transcripts = run.records("transcripts");
    let mut sum = 0.0;
    for rec in report["records"].as_array().unwrap() {
        let id = rec["task_id"].as_str().unwrap();
        let files: BTreeMap<String, String> = serde_json::from_value(transcripts[id]["transcript"]["final_solution"].clone()).unwrap();
        // the scripted final solution: logging main.py plus a test file, no TODO left
        assert_eq!(files.keys().collect::<Vec<_>>(), ["main.py", "test_main.py"]);
        assert!(files["main.py"].contains("import logging"));
        let consistency = cosine(&trigram_counts(&tasks[id]), &trigram_counts(&canonical(&files)));
        assert_eq!(rec["completeness"], 1);
        assert_eq!(rec["executability"], 1);
        assert!((rec["consistency"].as_f64().unwrap() - consistency).abs() < 1e-12, "{id}");
        assert!((rec["quality"].as_f64().unwrap() - consistency).abs() < 1e-12, "{id}");
        sum += consistency;
    }
    assert!((report["aggregate"]["quality"].as_f64().unwrap() - sum / 3.0).abs() < 1e-12);
    let tsv = fs::read_to_string(run.path("work/reports/metrics.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 4);

    let out = run.ok(&["stats", "--split", "all", "--plot-data"]);
    assert_eq!(out.matches("4 edges, 5 nodes, path 4").count(), 3, "{out}");
    let plot = run.json("work/reports/graph_stats_plot.json");
    assert_eq!(plot["num_nodes"], serde_json::json!({"5": 3}));
    assert_eq!(plot["shortest_path_len"], serde_json::json!({"4": 3}));
}

#[test]
fn missing_inputs_fail_with_status_table() {
    let run = Run::new(2);
    let out = run.colearn(&["memorize", "--split", "all"]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.matches("FAILED").count(), 2, "{stdout}");
    assert!(stdout.contains("run `track` first"));
}

#[test]
fn sensitivity_grid_is_complete_and_reproducible() {
    let run = Run::new(6);
    run.ok(&["track", "--split", "all"]);
    run.ok(&["memorize", "--split", "all"]);
    run.ok(&["--workers", "4", "sensitivity", "--split", "all", "--grid", "k"]);
    let first = fs::read_to_string(run.path("work/reports/sensitivity_k.tsv")).unwrap();
    run.ok(&["sensitivity", "--split", "all", "--grid", "k"]);
    let second = fs::read_to_string(run.path("work/reports/sensitivity_k.tsv")).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.lines().count(), 26);
    run.ok(&["sensitivity", "--split", "all", "--grid", "theta"]);
    let theta = fs::read_to_string(run.path("work/reports/sensitivity_theta.tsv")).unwrap();
    assert_eq!(theta.lines().count(), 37);
}

#[test]
fn config_dump_round_trips() {
    let run = Run::new(1);
    let dumped = run.ok(&["config"]);
    fs::write(run.path("dumped.toml"), &dumped).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_colearn"))
        .args(["--config", run.path("dumped.toml").to_str().unwrap(), "config"])
        .output()
        .unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), dumped);
    assert!(dumped.contains("epsilon = 0.05"));
    assert!(dumped.contains("max_rounds_per_phase = 5"));
}

#[test]
fn split_command_reports_partition() {
    let run = Run::new(30);
    let out = run.ok(&["split"]);
    assert!(out.contains("train") && out.contains("20 tasks"), "{out}");
    let split = run.json("work/reports/split.json");
    let count = |k: &str| split[k].as_array().unwrap().len();
    assert_eq!((count("train"), count("validation"), count("test")), (20, 5, 5));
}
