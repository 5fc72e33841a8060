//! The engine: a deterministic virtual-time event core driving per-node
//! local schedulers, the container runtime, the distributed store with its
//! metadata directory, the central-store baseline, and the shaped fabric.
//!
//! All state transitions are serialized through one totally ordered event
//! queue. Events at equal times are ordered by a semantic key (never by
//! insertion order), so a run is a pure function of its inputs, and an
//! independent simulator implementing the same semantics dequeues in the
//! same order.

mod config;
mod events;
mod run;
mod state;

pub use config::{BandwidthScope, ClusterConfig, CostModel, StoreKind, TimeMode};
pub use state::{ExecResult, ExecStatus, FuncTimes, RawGetStatus};

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use thiserror::Error;

use crate::partition::{self, NodePlan, Placement, Strategy};
use crate::trace::{ExecutionTrace, TraceEvent, TraceRecord};
use crate::transport::{FlowKey, Shaper};
use crate::workflow::{DagView, KeyId, WorkflowSpec};

pub use crate::policy::Policy;

/// Worker node id; the master role uses [`MASTER_NODE`].
pub type NodeId = u32;
pub const MASTER_NODE: NodeId = u32::MAX;

pub(crate) fn trace_node(n: NodeId) -> i64 {
    if n == MASTER_NODE {
        -1
    } else {
        n as i64
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("unknown execution {0}")]
    UnknownExecution(u64),
    #[error("unknown workflow handle {0}")]
    UnknownWorkflow(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Partition(#[from] partition::PartitionError),
}

/// Handle to a registered workflow within an engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WorkflowHandle(pub usize);

/// Handle to a submitted execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExecHandle(pub u64);

/// Handle to a raw store get issued through the harness API.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawGetHandle(pub u64);

/// Globally unique immutable-datum identifier: execution id plus data key.
/// Raw harness operations use execution 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct DataId {
    pub exec: u64,
    pub key: u32,
}

/// Who is waiting on a datum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Consumer {
    Body { f: u32 },
    Raw { tag: u64 },
    /// Query-only probe: wants the chosen source, not the bytes.
    Probe { tag: u64 },
}

pub(crate) struct WorkflowEntry {
    pub spec: Rc<WorkflowSpec>,
    pub view: Rc<DagView>,
    pub placement: Placement,
    pub plans: Vec<NodePlan>,
    pub strategy: Strategy,
}

/// The simulated cluster engine.
pub struct Engine {
    pub(crate) cfg: ClusterConfig,
    pub(crate) queue: BTreeMap<events::EvKey, events::Ev>,
    pub(crate) seq: u64,
    pub(crate) now: u64,
    pub(crate) workflows: Vec<WorkflowEntry>,
    pub(crate) execs: BTreeMap<u64, state::ExecState>,
    pub(crate) next_exec: u64,
    pub(crate) pools: BTreeMap<NodeId, state::Pool>,
    pub(crate) stores: BTreeMap<NodeId, state::LocalStore>,
    pub(crate) directory: state::Directory,
    pub(crate) central: BTreeMap<DataId, state::Buffer>,
    pub(crate) shaper: Shaper,
    pub(crate) transfers: BTreeMap<FlowKey, state::Transfer>,
    pub(crate) failed_nodes: BTreeSet<NodeId>,
    pub(crate) raw_keys: Vec<String>,
    pub(crate) raw_results: BTreeMap<u64, state::RawGetStatus>,
    pub(crate) next_raw_tag: u64,
    pub(crate) bytes_by_link: BTreeMap<(NodeId, NodeId), u64>,
    pub(crate) trace: ExecutionTrace,
}

impl Engine {
    pub fn new(cfg: ClusterConfig) -> Result<Self, EngineError> {
        if cfg.node_count == 0 {
            return Err(EngineError::Config("node_count must be >= 1".into()));
        }
        if cfg.policy == Policy::Dataflow && cfg.store == StoreKind::Central {
            return Err(EngineError::Config(
                "the central store provides no blocking gets; dataflow requires the \
                 distributed store"
                    .into(),
            ));
        }
        let mut shaper = Shaper::default();
        for (scope, rate) in cfg.expand_bandwidth() {
            shaper.set_rate(scope, rate);
        }
        Ok(Engine {
            cfg,
            queue: BTreeMap::new(),
            seq: 0,
            now: 0,
            workflows: Vec::new(),
            execs: BTreeMap::new(),
            next_exec: 1,
            pools: BTreeMap::new(),
            stores: BTreeMap::new(),
            directory: state::Directory::default(),
            central: BTreeMap::new(),
            shaper: Shaper::default(),
            transfers: BTreeMap::new(),
            failed_nodes: BTreeSet::new(),
            raw_keys: Vec::new(),
            raw_results: BTreeMap::new(),
            next_raw_tag: 1,
            bytes_by_link: BTreeMap::new(),
            trace: ExecutionTrace::default(),
        }
        .finish_init(shaper))
    }

    fn finish_init(mut self, shaper: Shaper) -> Self {
        self.shaper = shaper;
        self
    }

    /// Register a workflow: partition it and disseminate per-node plans.
    /// This is the synchronous setup phase; no events are consumed.
    pub fn register_workflow(
        &mut self,
        spec: WorkflowSpec,
        strategy: Strategy,
    ) -> Result<WorkflowHandle, EngineError> {
        let view = spec.dag_view();
        let placement = partition::partition(&spec, &view, self.cfg.node_count, strategy);
        self.register_with_placement(spec, placement, strategy)
    }

    /// Register with an explicit placement (must cover every function).
    pub fn register_with_placement(
        &mut self,
        spec: WorkflowSpec,
        placement: Placement,
        strategy: Strategy,
    ) -> Result<WorkflowHandle, EngineError> {
        if placement.assignment.len() != spec.func_count() {
            return Err(EngineError::Config("placement does not cover the workflow".into()));
        }
        if placement.assignment.iter().any(|&n| n >= self.cfg.node_count) {
            return Err(EngineError::Config("placement references unknown node".into()));
        }
        let view = spec.dag_view();
        let plans = partition::compute_node_plans(&spec, &view, &placement);
        self.workflows.push(WorkflowEntry {
            spec: Rc::new(spec),
            view: Rc::new(view),
            placement,
            plans,
            strategy,
        });
        Ok(WorkflowHandle(self.workflows.len() - 1))
    }

    /// Schedule a workflow execution to arrive at virtual time `t_ns`.
    pub fn submit_at(&mut self, wf: WorkflowHandle, t_ns: u64) -> Result<ExecHandle, EngineError> {
        if wf.0 >= self.workflows.len() {
            return Err(EngineError::UnknownWorkflow(wf.0));
        }
        let exec = self.next_exec;
        self.next_exec += 1;
        let entry = &self.workflows[wf.0];
        let n = entry.spec.func_count();
        let exec_state = state::ExecState::new(wf.0, t_ns, n, &entry.view);
        self.execs.insert(exec, exec_state);
        self.record(t_ns, MASTER_NODE, exec, TraceEvent::WorkflowSubmitted {
            workflow: entry.spec.name.clone(),
        });
        for node in 0..self.cfg.node_count {
            self.record(t_ns, node, exec, TraceEvent::PlanRegistered);
        }
        self.push(t_ns, events::Ev::Arrival { exec, attempt: 0 });
        self.push(t_ns + self.cfg.timeout_ns, events::Ev::Timeout { exec });
        Ok(ExecHandle(exec))
    }

    /// Store-harness put: install `bytes` under `key` in `node`'s local store
    /// (central store under the central baseline) at time `t_ns`.
    pub fn raw_put_at(&mut self, t_ns: u64, node: NodeId, key: &str, bytes: Vec<u8>) {
        let k = self.intern_raw_key(key);
        self.push(t_ns, events::Ev::RawPut { node, key: k });
        let id = DataId { exec: 0, key: k };
        self.raw_payloads_mut().insert(id, Rc::new(bytes));
    }

    /// Store-harness get from `node` at `t_ns`; poll the handle after `run`.
    pub fn raw_get_at(&mut self, t_ns: u64, node: NodeId, key: &str) -> RawGetHandle {
        let k = self.intern_raw_key(key);
        let tag = self.next_raw_tag;
        self.next_raw_tag += 1;
        self.raw_results.insert(tag, state::RawGetStatus::Pending);
        self.push(t_ns, events::Ev::RawGet { node, key: k, tag });
        RawGetHandle(tag)
    }

    pub fn raw_get_status(&self, h: RawGetHandle) -> &state::RawGetStatus {
        &self.raw_results[&h.0]
    }

    /// Directory query without the follow-up fetch: parks like any consumer
    /// when the id is unregistered, and reports the chosen source on reply.
    pub fn raw_query_at(&mut self, t_ns: u64, node: NodeId, key: &str) -> RawGetHandle {
        let k = self.intern_raw_key(key);
        let tag = self.next_raw_tag;
        self.next_raw_tag += 1;
        self.raw_results.insert(tag, state::RawGetStatus::Pending);
        self.push(t_ns, events::Ev::QueryArrive {
            id: DataId { exec: 0, key: k },
            attempt: 0,
            node,
            consumer: Consumer::Probe { tag },
        });
        RawGetHandle(tag)
    }

    /// Chosen source of a completed [`raw_query_at`], if any.
    pub fn raw_query_source(&self, h: RawGetHandle) -> Option<NodeId> {
        match self.raw_results.get(&h.0) {
            Some(state::RawGetStatus::SourceChosen { node, .. }) => Some(*node),
            _ => None,
        }
    }

    /// Access-frequency counters of a raw datum's replica locations.
    pub fn directory_frequencies(&self, key: &str) -> BTreeMap<NodeId, u64> {
        let Some(k) = self.raw_keys.iter().position(|x| x == key) else {
            return BTreeMap::new();
        };
        let id = DataId { exec: 0, key: k as u32 };
        self.directory
            .recs
            .get(&id)
            .map(|r| r.locations.clone())
            .unwrap_or_default()
    }

    /// Change a bandwidth scope at runtime; applies to subsequent chunks.
    pub fn set_bandwidth_at(&mut self, t_ns: u64, scope: BandwidthScope, rate: Option<u64>) {
        self.push(t_ns, events::Ev::SetBandwidth { scope, rate });
    }

    /// Fail a node at `t_ns`: its pool and store are lost, transfers abort,
    /// and affected executions restart from scratch on the survivors.
    pub fn inject_node_failure_at(&mut self, t_ns: u64, node: NodeId) {
        self.push(t_ns, events::Ev::NodeFail { node });
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn trace(&self) -> &ExecutionTrace {
        &self.trace
    }

    pub fn take_trace(&mut self) -> ExecutionTrace {
        std::mem::take(&mut self.trace)
    }

    pub fn exec_result(&self, h: ExecHandle) -> Result<ExecResult, EngineError> {
        let exec = self.execs.get(&h.0).ok_or(EngineError::UnknownExecution(h.0))?;
        let spec = &self.workflows[exec.wf].spec;
        Ok(ExecResult {
            status: exec.status.clone(),
            submitted_at: exec.t0,
            output_hashes: exec
                .outputs
                .iter()
                .map(|(&k, &h)| (spec.key_name(k as KeyId).to_string(), h))
                .collect(),
        })
    }

    /// Per-function invoked/started/completed times, keyed by function name.
    pub fn fn_times(&self, h: ExecHandle) -> Result<BTreeMap<String, FuncTimes>, EngineError> {
        let exec = self.execs.get(&h.0).ok_or(EngineError::UnknownExecution(h.0))?;
        let spec = &self.workflows[exec.wf].spec;
        Ok(exec
            .fns
            .iter()
            .enumerate()
            .map(|(f, st)| {
                (
                    spec.func_name(f).to_string(),
                    FuncTimes {
                        invoked: st.invoked,
                        started: st.started,
                        completed: st.completed,
                    },
                )
            })
            .collect())
    }

    /// Data ids currently registered at the directory for an execution.
    pub fn directory_keys_for(&self, h: ExecHandle) -> Vec<String> {
        self.directory
            .recs
            .keys()
            .filter(|id| id.exec == h.0)
            .map(|id| self.key_name(*id))
            .collect()
    }

    /// Current placement of a registered workflow.
    pub fn placement(&self, wf: WorkflowHandle) -> &Placement {
        &self.workflows[wf.0].placement
    }

    /// Total data bytes delivered per (src, dst) link.
    pub fn bytes_by_link(&self) -> &BTreeMap<(NodeId, NodeId), u64> {
        &self.bytes_by_link
    }

    // -- internals shared across submodules ---------------------------------

    pub(crate) fn record(&mut self, t: u64, node: NodeId, exec: u64, event: TraceEvent) {
        self.trace.push(TraceRecord { t_ns: t, node: trace_node(node), exec, event });
    }

    pub(crate) fn push(&mut self, t: u64, ev: events::Ev) {
        debug_assert!(t >= self.now, "no scheduling into the past");
        let key = events::ev_key(t, &ev, self.seq);
        self.seq += 1;
        self.queue.insert(key, ev);
    }

    pub(crate) fn intern_raw_key(&mut self, key: &str) -> u32 {
        if let Some(i) = self.raw_keys.iter().position(|k| k == key) {
            i as u32
        } else {
            self.raw_keys.push(key.to_string());
            (self.raw_keys.len() - 1) as u32
        }
    }

    pub(crate) fn key_name(&self, id: DataId) -> String {
        if id.exec == 0 {
            self.raw_keys[id.key as usize].clone()
        } else {
            let wf = self.execs[&id.exec].wf;
            self.workflows[wf].spec.key_name(id.key as KeyId).to_string()
        }
    }

    pub(crate) fn ctrl_latency(&self, a: NodeId, b: NodeId) -> u64 {
        if a == b {
            0
        } else {
            self.cfg.cost.ctrl_latency_ns
        }
    }

    fn raw_payloads_mut(&mut self) -> &mut BTreeMap<DataId, state::Buffer> {
        &mut self.directory.raw_payloads
    }
}
