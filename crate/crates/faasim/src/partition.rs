//! Global-scheduler half of the two-tier scheduler: DAG partitioning across
//! worker nodes and per-node plan computation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workflow::{DagView, FuncId, KeyId, WorkflowSpec};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("no surviving nodes to repartition onto")]
    NoNodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    RoundRobin,
    GreedyEdgeCut,
}

/// Assignment of every function to a worker node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub node_count: u32,
    /// assignment[f] = node id, indexed by function id (file order).
    pub assignment: Vec<u32>,
}

impl Placement {
    pub fn node_of(&self, f: FuncId) -> u32 {
        self.assignment[f]
    }

    /// Functions assigned to `node`, ascending.
    pub fn functions_on(&self, node: u32) -> Vec<FuncId> {
        (0..self.assignment.len()).filter(|&f| self.assignment[f] == node).collect()
    }
}

/// Total bytes crossing node boundaries under a placement.
pub fn cut_bytes(spec: &WorkflowSpec, placement: &Placement) -> u64 {
    spec.edges()
        .iter()
        .filter(|&&(s, d, _)| placement.assignment[s] != placement.assignment[d])
        .map(|&(_, _, k)| spec.key_bytes(k))
        .sum()
}

/// Partition the workflow DAG over `node_count` nodes.
///
/// `GreedyEdgeCut` walks functions in topological order and assigns each to
/// the node already holding the plurality of its predecessors' bytes, subject
/// to a per-node load cap of ceil(|F| / node_count); ties break toward the
/// lowest node id. If the greedy result cuts more bytes than round robin, the
/// round-robin assignment is returned instead.
pub fn partition(
    spec: &WorkflowSpec,
    view: &DagView,
    node_count: u32,
    strategy: Strategy,
) -> Placement {
    assert!(node_count >= 1, "node_count must be at least 1");
    let rr = round_robin(spec, view, node_count);
    match strategy {
        Strategy::RoundRobin => rr,
        Strategy::GreedyEdgeCut => {
            let greedy = greedy_edge_cut(spec, view, node_count);
            if cut_bytes(spec, &greedy) <= cut_bytes(spec, &rr) {
                greedy
            } else {
                rr
            }
        }
    }
}

fn round_robin(spec: &WorkflowSpec, view: &DagView, node_count: u32) -> Placement {
    let mut assignment = vec![0u32; spec.func_count()];
    for (i, &f) in view.topo_order.iter().enumerate() {
        assignment[f] = (i as u32) % node_count;
    }
    Placement { node_count, assignment }
}

fn greedy_edge_cut(spec: &WorkflowSpec, view: &DagView, node_count: u32) -> Placement {
    let n = spec.func_count();
    let cap = n.div_ceil(node_count as usize);
    let mut assignment = vec![u32::MAX; n];
    let mut load = vec![0usize; node_count as usize];
    for &f in &view.topo_order {
        let mut score = vec![0u64; node_count as usize];
        for &(s, d, k) in spec.edges() {
            if d == f && assignment[s] != u32::MAX {
                score[assignment[s] as usize] += spec.key_bytes(k);
            }
        }
        let best = (0..node_count as usize)
            .max_by(|&a, &b| score[a].cmp(&score[b]).then(b.cmp(&a)))
            .unwrap();
        let chosen = if score[best] > 0 && load[best] < cap {
            best
        } else {
            (0..node_count as usize).min_by_key(|&i| (load[i], i)).unwrap()
        };
        assignment[f] = chosen as u32;
        load[chosen] += 1;
    }
    Placement { node_count, assignment }
}

/// Repartition over the surviving nodes after a failure. The returned
/// placement reuses the survivors' original ids.
pub fn repartition_and_restart(
    spec: &WorkflowSpec,
    view: &DagView,
    surviving: &[u32],
    strategy: Strategy,
) -> Result<Placement, PartitionError> {
    if surviving.is_empty() {
        return Err(PartitionError::NoNodes);
    }
    let mut survivors = surviving.to_vec();
    survivors.sort_unstable();
    survivors.dedup();
    let dense = partition(spec, view, survivors.len() as u32, strategy);
    let assignment = dense.assignment.iter().map(|&i| survivors[i as usize]).collect();
    Ok(Placement { node_count: *survivors.iter().max().unwrap() + 1, assignment })
}

/// A function invoked when a workflow arrives at a node, tagged with whether
/// it is a true entry point or a prewarm target (successor of an entry point).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalFn {
    pub f: FuncId,
    pub prewarm: bool,
}

/// Per-node workflow metadata disseminated by the global scheduler.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePlan {
    pub node: u32,
    pub functions: Vec<FuncId>,
    /// Functions to invoke at workflow arrival under the dataflow policy.
    pub local_entry_points: Vec<ArrivalFn>,
    /// For each local function: successors with their owning nodes.
    pub successor_map: BTreeMap<FuncId, Vec<(FuncId, u32)>>,
    /// For each local function: distinct successors-of-successors with owners.
    pub grand_successor_map: BTreeMap<FuncId, Vec<(FuncId, u32)>>,
    /// For each local function: number of distinct predecessor functions.
    pub predecessor_count: BTreeMap<FuncId, u32>,
    pub input_keys: BTreeMap<FuncId, Vec<KeyId>>,
    pub output_keys: BTreeMap<FuncId, Vec<KeyId>>,
}

/// Compute every node's plan for a placement.
pub fn compute_node_plans(
    spec: &WorkflowSpec,
    view: &DagView,
    placement: &Placement,
) -> Vec<NodePlan> {
    let entry: Vec<bool> = (0..spec.func_count())
        .map(|f| view.predecessors[f].is_empty())
        .collect();
    (0..placement.node_count)
        .map(|node| {
            let functions: Vec<FuncId> = view
                .topo_order
                .iter()
                .copied()
                .filter(|&f| placement.assignment[f] == node)
                .collect();
            let mut local_entry_points = Vec::new();
            for &f in &functions {
                if entry[f] {
                    local_entry_points.push(ArrivalFn { f, prewarm: false });
                } else if view.predecessors[f].iter().any(|&p| entry[p]) {
                    local_entry_points.push(ArrivalFn { f, prewarm: true });
                }
            }
            let mut successor_map = BTreeMap::new();
            let mut grand_successor_map = BTreeMap::new();
            let mut predecessor_count = BTreeMap::new();
            let mut input_keys = BTreeMap::new();
            let mut output_keys = BTreeMap::new();
            for &f in &functions {
                successor_map.insert(
                    f,
                    view.successors[f]
                        .iter()
                        .map(|&s| (s, placement.assignment[s]))
                        .collect::<Vec<_>>(),
                );
                let mut grands: Vec<FuncId> = view.successors[f]
                    .iter()
                    .flat_map(|&s| view.successors[s].iter().copied())
                    .collect();
                grands.sort_unstable();
                grands.dedup();
                grand_successor_map.insert(
                    f,
                    grands.into_iter().map(|g| (g, placement.assignment[g])).collect::<Vec<_>>(),
                );
                predecessor_count.insert(f, view.predecessors[f].len() as u32);
                input_keys.insert(f, spec.input_key_ids(f));
                output_keys.insert(f, spec.output_key_ids(f));
            }
            NodePlan {
                node,
                functions,
                local_entry_points,
                successor_map,
                grand_successor_map,
                predecessor_count,
                input_keys,
                output_keys,
            }
        })
        .collect()
}
