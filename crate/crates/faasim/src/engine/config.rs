//! Engine configuration: cluster size, policy, data plane, cost model,
//! bandwidth plan, pool sizing and the clock mode.

use serde::{Deserialize, Serialize};

use super::{NodeId, Policy, MASTER_NODE};
use crate::transport::ScopeId;

/// Data plane selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoreKind {
    /// Per-node local stores + master-hosted metadata directory with
    /// blocking gets (the distributed store).
    DStore,
    /// Master-hosted central store; every access crosses the network.
    Central,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeMode {
    /// Deterministic logical clock; runs as fast as events drain.
    Virtual,
    /// Paces the same event stream against the wall clock (smoke tests).
    Real,
}

/// Fixed per-operation costs of the simulated cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    /// One-way control message latency between distinct nodes.
    pub ctrl_latency_ns: u64,
    /// Directory write cost: registration becomes queryable this long after
    /// the register message arrives.
    pub meta_write_ns: u64,
    /// Container <-> store copy cost per byte.
    pub memcpy_ns_per_byte: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        // 150 us directory write; control latency and memcpy are free unless
        // an experiment says otherwise.
        CostModel { ctrl_latency_ns: 0, meta_write_ns: 150_000, memcpy_ns_per_byte: 0 }
    }
}

impl CostModel {
    pub fn zero() -> Self {
        CostModel { ctrl_latency_ns: 0, meta_write_ns: 0, memcpy_ns_per_byte: 0 }
    }
}

/// A bandwidth assignment target. Node scopes expand to the node's whole
/// interface (both directions).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BandwidthScope {
    /// Every node's interface, master included.
    AllInterfaces,
    /// Ingress side of every node, master included.
    AllIngress,
    /// Egress side of every node, master included.
    AllEgress,
    Node(NodeId),
    NodeIngress(NodeId),
    NodeEgress(NodeId),
    Link(NodeId, NodeId),
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub node_count: u32,
    pub policy: Policy,
    pub store: StoreKind,
    pub cost: CostModel,
    /// Container slots per node.
    pub pool_cap: u32,
    /// Idle warm containers expire after this long.
    pub warm_lifetime_ns: u64,
    pub chunk_bytes: u64,
    /// Per-node store capacity; None = unbounded.
    pub store_capacity: Option<u64>,
    /// Execution deadline (virtual).
    pub timeout_ns: u64,
    /// Depth = infinity knob: invoke every local function at arrival
    /// (dataflow only).
    pub prewarm_all: bool,
    pub time_mode: TimeMode,
    /// Base seed; fixes synthetic payload bytes per (execution, function, key).
    pub seed: u64,
    /// Initial bandwidth plan, applied before the first event.
    pub bandwidth: Vec<(BandwidthScope, Option<u64>)>,
    /// Keep per-chunk progress on partially transferred entries observable.
    /// Serving still waits for completion; this only tracks progress.
    pub track_partial_entries: bool,
}

impl ClusterConfig {
    pub fn new(node_count: u32) -> Self {
        ClusterConfig {
            node_count,
            policy: Policy::Dataflow,
            store: StoreKind::DStore,
            cost: CostModel::default(),
            pool_cap: 8,
            warm_lifetime_ns: 600_000_000_000,
            chunk_bytes: 64 * 1024,
            store_capacity: None,
            timeout_ns: 60_000_000_000,
            prewarm_all: false,
            time_mode: TimeMode::Virtual,
            seed: 0,
            bandwidth: Vec::new(),
            track_partial_entries: false,
        }
    }

    pub fn policy(mut self, p: Policy) -> Self {
        self.policy = p;
        if p == Policy::CFlow {
            self.store = StoreKind::Central;
        }
        self
    }

    pub fn store(mut self, s: StoreKind) -> Self {
        self.store = s;
        self
    }

    pub fn cost(mut self, c: CostModel) -> Self {
        self.cost = c;
        self
    }

    pub fn pool_cap(mut self, cap: u32) -> Self {
        self.pool_cap = cap;
        self
    }

    pub fn timeout_ns(mut self, t: u64) -> Self {
        self.timeout_ns = t;
        self
    }

    pub fn seed(mut self, s: u64) -> Self {
        self.seed = s;
        self
    }

    pub fn time_mode(mut self, m: TimeMode) -> Self {
        self.time_mode = m;
        self
    }

    pub fn prewarm_all(mut self, yes: bool) -> Self {
        self.prewarm_all = yes;
        self
    }

    pub fn bandwidth(mut self, scope: BandwidthScope, rate: Option<u64>) -> Self {
        self.bandwidth.push((scope, rate));
        self
    }

    /// All node ids of this cluster including the master role.
    pub fn all_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.node_count).chain(std::iter::once(MASTER_NODE))
    }

    pub(crate) fn expand_scope(&self, scope: BandwidthScope) -> Vec<ScopeId> {
        match scope {
            BandwidthScope::AllInterfaces => self
                .all_nodes()
                .flat_map(|n| [ScopeId::Egress(n), ScopeId::Ingress(n)])
                .collect(),
            BandwidthScope::AllIngress => self.all_nodes().map(ScopeId::Ingress).collect(),
            BandwidthScope::AllEgress => self.all_nodes().map(ScopeId::Egress).collect(),
            BandwidthScope::Node(n) => vec![ScopeId::Egress(n), ScopeId::Ingress(n)],
            BandwidthScope::NodeIngress(n) => vec![ScopeId::Ingress(n)],
            BandwidthScope::NodeEgress(n) => vec![ScopeId::Egress(n)],
            BandwidthScope::Link(a, b) => vec![ScopeId::Link(a, b)],
        }
    }

    pub(crate) fn expand_bandwidth(&self) -> Vec<(ScopeId, Option<u64>)> {
        self.bandwidth
            .iter()
            .flat_map(|(scope, rate)| {
                self.expand_scope(*scope).into_iter().map(move |s| (s, *rate))
            })
            .collect()
    }

    pub(crate) fn scope_is_known(&self, scope: BandwidthScope) -> bool {
        let known = |n: NodeId| n == MASTER_NODE || n < self.node_count;
        match scope {
            BandwidthScope::Node(n)
            | BandwidthScope::NodeIngress(n)
            | BandwidthScope::NodeEgress(n) => known(n),
            BandwidthScope::Link(a, b) => known(a) && known(b),
            _ => true,
        }
    }
}
