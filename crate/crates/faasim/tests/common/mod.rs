//! Shared helpers for integration tests: workflow fixtures and the bridge
//! into the independent reference simulator.

#![allow(dead_code)]

use faasim::workflow::{parse_workflow, WorkflowSpec};
use faasim::{BandwidthScope, ClusterConfig, Placement, Policy, StoreKind, MASTER_NODE};

/// A, B, C feed D; D feeds E (the five-function fan used throughout).
/// Compute times in ms; every edge carries `edge_bytes`.
pub fn fan5_workflow(a_ms: u64, b_ms: u64, c_ms: u64, d_ms: u64, e_ms: u64, edge_bytes: u64) -> WorkflowSpec {
    let text = format!(
        r#"
name = "fan5"
[[functions]]
name = "A"
outputs = ["a"]
compute_ms = {a_ms}
output_bytes = {edge_bytes}
[[functions]]
name = "B"
outputs = ["b"]
compute_ms = {b_ms}
output_bytes = {edge_bytes}
[[functions]]
name = "C"
outputs = ["c"]
compute_ms = {c_ms}
output_bytes = {edge_bytes}
[[functions]]
name = "D"
inputs = ["a", "b", "c"]
outputs = ["d"]
compute_ms = {d_ms}
output_bytes = {edge_bytes}
[[functions]]
name = "E"
inputs = ["d"]
compute_ms = {e_ms}
output_bytes = 0
"#
    );
    parse_workflow(&text).unwrap()
}

pub fn ms(v: u64) -> u64 {
    v * 1_000_000
}

pub fn sec(v: f64) -> u64 {
    (v * 1e9) as u64
}

fn refsim_policy(p: Policy) -> refsim::Policy {
    match p {
        Policy::Dataflow => refsim::Policy::Dataflow,
        Policy::Controlflow => refsim::Policy::Controlflow,
        Policy::CFlow => refsim::Policy::CFlow,
    }
}

fn refsim_store(s: StoreKind) -> refsim::Store {
    match s {
        StoreKind::DStore => refsim::Store::DStore,
        StoreKind::Central => refsim::Store::Central,
    }
}

/// Build the reference simulator's view of the same scenario. The bridge
/// reimplements the bandwidth-scope expansion so the oracle stays
/// independent of the engine's internals.
pub fn to_refsim(
    spec: &WorkflowSpec,
    placement: &Placement,
    cfg: &ClusterConfig,
) -> (refsim::Workload, refsim::Config) {
    let functions = (0..spec.func_count())
        .map(|f| refsim::FuncSpec {
            compute_ns: spec.functions[f].compute_ms * 1_000_000,
            coldstart_ns: spec.functions[f].coldstart_ms * 1_000_000,
            inputs: spec.input_key_ids(f).iter().map(|&k| k as u32).collect(),
            outputs: spec.output_key_ids(f).iter().map(|&k| k as u32).collect(),
        })
        .collect();
    let keys = spec.keys().len();
    let workload = refsim::Workload {
        functions,
        producer: (0..keys).map(|k| spec.key_producer(k).map(|f| f as u32)).collect(),
        key_bytes: (0..keys).map(|k| spec.key_bytes(k)).collect(),
    };

    let n = cfg.node_count as usize;
    let mut egress: Vec<Option<u64>> = vec![None; n + 1];
    let mut ingress: Vec<Option<u64>> = vec![None; n + 1];
    let mut links = std::collections::BTreeMap::new();
    let idx = |node: u32| if node == MASTER_NODE { n } else { node as usize };
    for (scope, rate) in &cfg.bandwidth {
        match *scope {
            BandwidthScope::AllInterfaces => {
                egress.iter_mut().for_each(|e| *e = *rate);
                ingress.iter_mut().for_each(|e| *e = *rate);
            }
            BandwidthScope::AllIngress => ingress.iter_mut().for_each(|e| *e = *rate),
            BandwidthScope::AllEgress => egress.iter_mut().for_each(|e| *e = *rate),
            BandwidthScope::Node(nd) => {
                egress[idx(nd)] = *rate;
                ingress[idx(nd)] = *rate;
            }
            BandwidthScope::NodeIngress(nd) => ingress[idx(nd)] = *rate,
            BandwidthScope::NodeEgress(nd) => egress[idx(nd)] = *rate,
            BandwidthScope::Link(a, b) => {
                match rate {
                    Some(r) => {
                        links.insert((a, b), *r);
                    }
                    None => {
                        links.remove(&(a, b));
                    }
                };
            }
        }
    }

    let config = refsim::Config {
        node_count: cfg.node_count,
        placement: placement.assignment.clone(),
        policy: refsim_policy(cfg.policy),
        store: refsim_store(cfg.store),
        ctrl_latency_ns: cfg.cost.ctrl_latency_ns,
        meta_write_ns: cfg.cost.meta_write_ns,
        pool_cap: cfg.pool_cap,
        chunk_bytes: cfg.chunk_bytes,
        egress,
        ingress,
        links,
        timeout_ns: cfg.timeout_ns,
        prewarm_all: cfg.prewarm_all,
    };
    (workload, config)
}
