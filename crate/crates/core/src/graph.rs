//! Task execution graphs: a trajectory with identical solutions merged into
//! one node by canonical hash.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{Instruction, Solution, SolutionId, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: SolutionId,
    pub instruction: Instruction,
    pub dst: SolutionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionGraph {
    pub task_id: String,
    pub nodes: BTreeMap<SolutionId, Solution>,
    /// In trajectory order. Self-loops are kept.
    pub edges: Vec<Edge>,
    pub source_id: SolutionId,
    pub sink_id: SolutionId,
}

impl ExecutionGraph {
    pub fn build(traj: &Trajectory) -> Self {
        let chain = traj.chain();
        let ids: Vec<SolutionId> = chain.iter().map(|s| s.id()).collect();
        let mut nodes = BTreeMap::new();
        for (id, sol) in ids.iter().zip(&chain) {
            nodes.entry(id.clone()).or_insert_with(|| (*sol).clone());
        }
        let edges = traj
            .steps
            .iter()
            .enumerate()
            .map(|(j, step)| Edge {
                src: ids[j].clone(),
                instruction: step.instruction.clone(),
                dst: ids[j + 1].clone(),
            })
            .collect();
        ExecutionGraph {
            task_id: traj.task_id.clone(),
            nodes,
            edges,
            source_id: ids[0].clone(),
            sink_id: ids.last().expect("chain has s_0").clone(),
        }
    }

    pub fn node(&self, id: &SolutionId) -> Option<&Solution> {
        self.nodes.get(id)
    }

    pub fn has_edge(&self, a: &SolutionId, b: &SolutionId) -> bool {
        self.edges.iter().any(|e| &e.src == a && &e.dst == b)
    }

    /// Out-neighbours in stored edge order, duplicates included.
    fn successors(&self) -> HashMap<&SolutionId, Vec<&SolutionId>> {
        let mut out: HashMap<&SolutionId, Vec<&SolutionId>> = HashMap::new();
        for e in &self.edges {
            out.entry(&e.src).or_default().push(&e.dst);
        }
        out
    }

    /// Nodes of a shortest source-to-sink path by edge count. BFS expands
    /// edges in stored order and keeps the first parent that reaches a node,
    /// so ties go to the path discovered first.
    pub fn shortest_path_nodes(&self) -> Vec<SolutionId> {
        let succ = self.successors();
        let mut parent: HashMap<&SolutionId, &SolutionId> = HashMap::new();
        let mut visited: HashSet<&SolutionId> = HashSet::from([&self.source_id]);
        let mut queue = VecDeque::from([&self.source_id]);
        while let Some(u) = queue.pop_front() {
            if u == &self.sink_id {
                break;
            }
            for &v in succ.get(u).map(Vec::as_slice).unwrap_or_default() {
                if visited.insert(v) {
                    parent.insert(v, u);
                    queue.push_back(v);
                }
            }
        }
        if !visited.contains(&self.sink_id) {
            // Unreachable only for hand-built graphs; a trajectory always connects.
            return vec![self.source_id.clone()];
        }
        let mut path = vec![self.sink_id.clone()];
        let mut cur = &self.sink_id;
        while let Some(&p) = parent.get(cur) {
            path.push(p.clone());
            cur = p;
        }
        path.reverse();
        path
    }

    /// True iff a directed path `a -> ... -> b` exists; `a` reaches itself.
    pub fn reachable(&self, a: &SolutionId, b: &SolutionId) -> bool {
        if a == b {
            return true;
        }
        let succ = self.successors();
        let mut visited: HashSet<&SolutionId> = HashSet::from([a]);
        let mut queue = VecDeque::from([a]);
        while let Some(u) = queue.pop_front() {
            for &v in succ.get(u).map(Vec::as_slice).unwrap_or_default() {
                if v == b {
                    return true;
                }
                if visited.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        false
    }

    /// All nodes reachable from `a`, including `a`.
    pub fn reachable_set(&self, a: &SolutionId) -> HashSet<SolutionId> {
        let succ = self.successors();
        let mut visited: HashSet<&SolutionId> = HashSet::from([a]);
        let mut queue = VecDeque::from([a]);
        while let Some(u) = queue.pop_front() {
            for &v in succ.get(u).map(Vec::as_slice).unwrap_or_default() {
                if visited.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        visited.into_iter().cloned().collect()
    }
}

pub fn build_graph(traj: &Trajectory) -> ExecutionGraph {
    ExecutionGraph::build(traj)
}
