//! Pure discrete-event reference simulator for workflow timelines.
//!
//! This crate computes, from first principles, when each function of a
//! workflow is invoked, started and completed on a simulated cluster, under
//! either a dataflow or a controlflow invocation policy. It is deliberately
//! self-contained (no dependency on the engine it is used to check) and
//! deliberately simple: one flat event loop over a totally ordered event set.
//!
//! Time is integer nanoseconds. All container state (pools, stores, the
//! metadata directory, bandwidth buckets) lives in `BTreeMap`s so iteration
//! order is deterministic.

use std::collections::{BTreeMap, BTreeSet};

pub const MASTER: u32 = u32::MAX;

/// Invocation policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Invoke entry points and their successors at arrival; on each
    /// completion invoke not-yet-invoked grand-successors.
    Dataflow,
    /// Decentralized join counting: invoke a function when all of its
    /// predecessors have completed, notifications flowing peer to peer.
    Controlflow,
    /// Centralized join counting on the master node.
    CFlow,
}

/// Data plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Store {
    /// Per-node local stores plus a master-hosted metadata directory with
    /// blocking gets.
    DStore,
    /// Master-hosted central store; every put and get crosses the network.
    Central,
}

#[derive(Debug, Clone)]
pub struct FuncSpec {
    pub compute_ns: u64,
    pub coldstart_ns: u64,
    /// Input key ids, in declared order.
    pub inputs: Vec<u32>,
    /// Output key ids, in declared order.
    pub outputs: Vec<u32>,
}

/// A workflow plus everything needed to time it.
#[derive(Debug, Clone)]
pub struct Workload {
    pub functions: Vec<FuncSpec>,
    /// producer[k] = function producing key k, None for external inputs.
    pub producer: Vec<Option<u32>>,
    /// key_bytes[k] = size of the datum carried by key k.
    pub key_bytes: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub node_count: u32,
    /// placement[f] = worker node id in [0, node_count).
    pub placement: Vec<u32>,
    pub policy: Policy,
    pub store: Store,
    pub ctrl_latency_ns: u64,
    pub meta_write_ns: u64,
    pub pool_cap: u32,
    pub chunk_bytes: u64,
    /// Egress rate per worker node, index node_count = master. None = unlimited.
    pub egress: Vec<Option<u64>>,
    pub ingress: Vec<Option<u64>>,
    /// Optional per-link rate overrides, keyed (src, dst) with MASTER allowed.
    pub links: BTreeMap<(u32, u32), u64>,
    pub timeout_ns: u64,
    /// Depth = infinity knob: invoke every local function at arrival.
    pub prewarm_all: bool,
}

impl Config {
    pub fn zero_cost(node_count: u32, placement: Vec<u32>, policy: Policy) -> Self {
        Config {
            node_count,
            placement,
            policy,
            store: Store::DStore,
            ctrl_latency_ns: 0,
            meta_write_ns: 0,
            pool_cap: u32::MAX,
            chunk_bytes: 64 * 1024,
            egress: vec![None; node_count as usize + 1],
            ingress: vec![None; node_count as usize + 1],
            links: BTreeMap::new(),
            timeout_ns: 60_000_000_000,
            prewarm_all: false,
        }
    }
}

/// Per-function result times; None when the phase was never reached.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FuncTimes {
    pub invoked: Option<u64>,
    pub started: Option<u64>,
    pub completed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub times: Vec<FuncTimes>,
    pub done_at: Option<u64>,
    pub timed_out: bool,
}

// ---------------------------------------------------------------------------
// Event queue
// ---------------------------------------------------------------------------

// Events at equal times are processed by (class, a, b, c, d) so that two
// independent implementations of the same semantics dequeue identically.
// Class table (shared convention):
//   0 admin, 1 chunk/transfer completion, 2 bucket dispatch, 3 metadata
//   visible, 4 metadata reply, 5 fetch request arrival, 6 directory query
//   arrival, 7 completion notification, 8 invoke, 9 body start,
//   10 compute done, 11 timeout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct EvKey {
    t: u64,
    class: u8,
    a: u64,
    b: u64,
    c: u64,
    d: u64,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum ScopeId {
    Egress(u32),
    Link(u32, u32),
    Ingress(u32),
}

// `fid` distinguishes central gets issued by different consumers on one node
// (each is its own remote read); store-level fetches use u32::MAX.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct FlowKey {
    key: u32,
    dst: u32,
    src: u32,
    fid: u32,
}

#[derive(Debug, Clone)]
enum Ev {
    Arrival,
    ChunkStage { flow: FlowKey, stage: u32, chunk: u32, bytes: u64 },
    Installed { flow: FlowKey },
    Dispatch { scope: ScopeId },
    MetaVisible { key: u32, node: u32 },
    MetaReply { node: u32, f: u32, key: u32, source: u32 },
    FetchArrive { flow: FlowKey },
    QueryArrive { key: u32, node: u32, f: u32 },
    CompleteNotify { owner: u32, f: u32 },
    Invoke { node: u32, f: u32 },
    BodyStart { node: u32, f: u32 },
    ComputeDone { node: u32, f: u32 },
    Timeout,
}

fn scope_key(s: ScopeId) -> (u64, u64, u64) {
    match s {
        ScopeId::Egress(n) => (0, n as u64, 0),
        ScopeId::Link(a, b) => (1, a as u64, b as u64),
        ScopeId::Ingress(n) => (2, n as u64, 0),
    }
}

fn ev_key(t: u64, ev: &Ev, seq: u64) -> EvKey {
    let (class, a, b, c, d) = match *ev {
        Ev::Arrival => (0, 0, 0, 0, 0),
        Ev::ChunkStage { flow, stage, chunk, .. } => (
            1,
            flow.key as u64,
            ((flow.dst as u64) << 32) | flow.src as u64,
            flow.fid as u64,
            ((stage as u64) << 32) | chunk as u64,
        ),
        Ev::Installed { flow } => (
            1,
            flow.key as u64,
            ((flow.dst as u64) << 32) | flow.src as u64,
            flow.fid as u64,
            u64::MAX,
        ),
        Ev::Dispatch { scope } => {
            let (k, a, b) = scope_key(scope);
            (2, k, a, b, 0)
        }
        Ev::MetaVisible { key, node } => (3, key as u64, node as u64, 0, 0),
        Ev::MetaReply { node, f, key, source } => {
            (4, node as u64, f as u64, key as u64, source as u64)
        }
        Ev::FetchArrive { flow } => (
            5,
            flow.key as u64,
            ((flow.src as u64) << 32) | flow.dst as u64,
            flow.fid as u64,
            0,
        ),
        Ev::QueryArrive { key, node, f } => (6, key as u64, node as u64, f as u64, 0),
        Ev::CompleteNotify { owner, f } => (7, owner as u64, f as u64, 0, 0),
        Ev::Invoke { node, f } => (8, node as u64, f as u64, 0, 0),
        Ev::BodyStart { node, f } => (9, node as u64, f as u64, 0, 0),
        Ev::ComputeDone { node, f } => (10, node as u64, f as u64, 0, 0),
        Ev::Timeout => (11, 0, 0, 0, 0),
    };
    EvKey { t, class, a, b, c, d, seq }
}

// ---------------------------------------------------------------------------
// Simulator state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    NotInvoked,
    Invoked,
    Starting,
    Running,
    Completed,
}

#[derive(Debug, Default)]
struct FnState {
    phase: Option<Phase>,
    invoked: Option<u64>,
    started: Option<u64>,
    completed: Option<u64>,
    pending_inputs: BTreeSet<u32>,
    pending_preds: u32,
    pending_puts: u32,
}

#[derive(Debug, Default)]
struct Pool {
    busy: u32,
    warm: BTreeMap<u32, u64>,
    queue: BTreeSet<(u64, u32)>,
}

#[derive(Debug, Default)]
struct NodeStore {
    entries: BTreeSet<u32>,
    inflight: BTreeMap<u32, BTreeSet<u32>>,
}

#[derive(Debug, Default)]
struct DirRec {
    locations: BTreeMap<u32, u64>,
}

#[derive(Debug)]
struct Bucket {
    rate: u64,
    cursor: u64,
    ready: BTreeMap<FlowKey, (u32, u64)>,
    last: Option<FlowKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Purpose {
    Fetch,
    CentralPut { f: u32 },
    CentralGet { f: u32 },
}

#[derive(Debug)]
struct Transfer {
    stages: Vec<ScopeId>,
    total: u64,
    chunk_count: u32,
    next_chunk: u32,
    delivered: u64,
    purpose: Purpose,
}

struct Sim<'a> {
    wl: &'a Workload,
    cfg: &'a Config,
    queue: BTreeMap<EvKey, Ev>,
    seq: u64,
    fns: Vec<FnState>,
    pools: BTreeMap<u32, Pool>,
    stores: BTreeMap<u32, NodeStore>,
    dir: BTreeMap<u32, DirRec>,
    dir_waiters: BTreeMap<u32, BTreeSet<(u32, u32)>>,
    central: BTreeSet<u32>,
    buckets: BTreeMap<ScopeId, Bucket>,
    transfers: BTreeMap<FlowKey, Transfer>,
    preds: Vec<Vec<u32>>,
    succs: Vec<Vec<u32>>,
    releases_pending: u32,
    done_at: Option<u64>,
    aborted: bool,
    timed_out: bool,
}

/// Run the workload to completion (or timeout) and report per-function times.
pub fn simulate(wl: &Workload, cfg: &Config) -> Outcome {
    let n = wl.functions.len();
    assert_eq!(cfg.placement.len(), n, "placement must cover every function");

    // Predecessor/successor function indexes, derived from key producers.
    let mut preds: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
    let mut succs: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n];
    for (fi, f) in wl.functions.iter().enumerate() {
        for &k in &f.inputs {
            if let Some(p) = wl.producer[k as usize] {
                preds[fi].insert(p);
                succs[p as usize].insert(fi as u32);
            }
        }
    }
    let preds: Vec<Vec<u32>> = preds.into_iter().map(|s| s.into_iter().collect()).collect();
    let succs: Vec<Vec<u32>> = succs.into_iter().map(|s| s.into_iter().collect()).collect();

    let mut sim = Sim {
        wl,
        cfg,
        queue: BTreeMap::new(),
        seq: 0,
        fns: (0..n).map(|_| FnState::default()).collect(),
        pools: BTreeMap::new(),
        stores: BTreeMap::new(),
        dir: BTreeMap::new(),
        dir_waiters: BTreeMap::new(),
        central: BTreeSet::new(),
        buckets: BTreeMap::new(),
        transfers: BTreeMap::new(),
        preds,
        succs,
        releases_pending: n as u32,
        done_at: None,
        aborted: false,
        timed_out: false,
    };
    for (fi, st) in sim.fns.iter_mut().enumerate() {
        st.phase = Some(Phase::NotInvoked);
        st.pending_preds = sim.preds[fi].len() as u32;
    }
    sim.push(0, Ev::Arrival);
    sim.push(cfg.timeout_ns, Ev::Timeout);
    sim.run();

    Outcome {
        times: sim
            .fns
            .iter()
            .map(|s| FuncTimes { invoked: s.invoked, started: s.started, completed: s.completed })
            .collect(),
        done_at: sim.done_at,
        timed_out: sim.timed_out,
    }
}

fn ceil_div_time(bytes: u64, rate: u64) -> u64 {
    let num = bytes as u128 * 1_000_000_000u128;
    ((num + rate as u128 - 1) / rate as u128) as u64
}

impl<'a> Sim<'a> {
    fn push(&mut self, t: u64, ev: Ev) {
        let key = ev_key(t, &ev, self.seq);
        self.seq += 1;
        self.queue.insert(key, ev);
    }

    fn run(&mut self) {
        while let Some((&key, _)) = self.queue.iter().next() {
            let ev = self.queue.remove(&key).unwrap();
            if self.aborted {
                break;
            }
            if self.done_at.is_some() {
                // Only the timeout event can remain relevant; everything is done.
                break;
            }
            self.handle(key.t, ev);
        }
    }

    fn is_entry(&self, f: usize) -> bool {
        self.preds[f].is_empty()
    }

    fn rate_of(&self, scope: ScopeId) -> Option<u64> {
        let idx = |n: u32| if n == MASTER { self.cfg.node_count as usize } else { n as usize };
        match scope {
            ScopeId::Egress(n) => self.cfg.egress[idx(n)],
            ScopeId::Ingress(n) => self.cfg.ingress[idx(n)],
            ScopeId::Link(a, b) => self.cfg.links.get(&(a, b)).copied(),
        }
    }

    fn latency(&self, a: u32, b: u32) -> u64 {
        if a == b {
            0
        } else {
            self.cfg.ctrl_latency_ns
        }
    }

    fn handle(&mut self, t: u64, ev: Ev) {
        match ev {
            Ev::Arrival => self.on_arrival(t),
            Ev::Invoke { node, f } => self.on_invoke(t, node, f),
            Ev::BodyStart { node, f } => self.on_body_start(t, node, f),
            Ev::ComputeDone { node, f } => self.on_compute_done(t, node, f),
            Ev::QueryArrive { key, node, f } => self.on_query(t, key, node, f),
            Ev::MetaVisible { key, node } => self.on_meta_visible(t, key, node),
            Ev::MetaReply { node, f, key, source } => self.on_meta_reply(t, node, f, key, source),
            Ev::FetchArrive { flow } => self.start_transfer_chunks(t, flow),
            Ev::ChunkStage { flow, stage, chunk, bytes } => {
                self.on_chunk_stage(t, flow, stage, chunk, bytes)
            }
            Ev::Installed { flow } => self.on_installed(t, flow),
            Ev::Dispatch { scope } => self.on_dispatch(t, scope),
            Ev::CompleteNotify { owner, f } => self.on_complete_notify(t, owner, f),
            Ev::Timeout => {
                if self.done_at.is_none() {
                    self.aborted = true;
                    self.timed_out = true;
                }
            }
        }
    }

    // -- scheduling ---------------------------------------------------------

    fn on_arrival(&mut self, t: u64) {
        match self.cfg.policy {
            Policy::Dataflow => {
                for node in 0..self.cfg.node_count {
                    for f in 0..self.wl.functions.len() {
                        if self.cfg.placement[f] != node {
                            continue;
                        }
                        let at_arrival = self.cfg.prewarm_all
                            || self.is_entry(f)
                            || self.preds[f].iter().any(|&p| self.is_entry(p as usize));
                        if at_arrival {
                            self.push(t, Ev::Invoke { node, f: f as u32 });
                        }
                    }
                }
            }
            Policy::Controlflow => {
                for node in 0..self.cfg.node_count {
                    for f in 0..self.wl.functions.len() {
                        if self.cfg.placement[f] == node && self.is_entry(f) {
                            self.push(t, Ev::Invoke { node, f: f as u32 });
                        }
                    }
                }
            }
            Policy::CFlow => {
                for f in 0..self.wl.functions.len() {
                    if self.is_entry(f) {
                        let node = self.cfg.placement[f];
                        self.push(t + self.cfg.ctrl_latency_ns, Ev::Invoke { node, f: f as u32 });
                    }
                }
            }
        }
        if self.wl.functions.is_empty() {
            self.done_at = Some(t);
        }
    }

    fn on_invoke(&mut self, t: u64, node: u32, f: u32) {
        let st = &mut self.fns[f as usize];
        if st.phase != Some(Phase::NotInvoked) {
            return; // idempotent
        }
        st.phase = Some(Phase::Invoked);
        st.invoked = Some(t);
        self.pool_acquire(t, node, f);
    }

    fn pool_acquire(&mut self, t: u64, node: u32, f: u32) {
        let cap = self.cfg.pool_cap;
        let cold = self.wl.functions[f as usize].coldstart_ns;
        let pool = self.pools.entry(node).or_default();
        if pool.warm.remove(&f).is_some() {
            pool.busy += 1;
            self.fns[f as usize].phase = Some(Phase::Starting);
            self.push(t, Ev::BodyStart { node, f });
        } else if pool.busy + (pool.warm.len() as u32) < cap {
            pool.busy += 1;
            self.fns[f as usize].phase = Some(Phase::Starting);
            self.push(t + cold, Ev::BodyStart { node, f });
        } else if !pool.warm.is_empty() {
            // Reclaim the least recently released warm slot.
            let victim = *pool.warm.iter().min_by_key(|(g, rel)| (**rel, **g)).unwrap().0;
            pool.warm.remove(&victim);
            pool.busy += 1;
            self.fns[f as usize].phase = Some(Phase::Starting);
            self.push(t + cold, Ev::BodyStart { node, f });
        } else {
            pool.queue.insert((t, f));
        }
    }

    fn pool_release(&mut self, t: u64, node: u32, f: u32) {
        let pool = self.pools.entry(node).or_default();
        pool.busy -= 1;
        pool.warm.insert(f, t);
        if let Some(&(it, g)) = pool.queue.iter().next() {
            pool.queue.remove(&(it, g));
            self.pool_acquire(t, node, g);
        }
        self.releases_pending -= 1;
        if self.releases_pending == 0 {
            self.done_at = Some(t);
        }
    }

    fn on_body_start(&mut self, t: u64, node: u32, f: u32) {
        {
            let st = &mut self.fns[f as usize];
            st.phase = Some(Phase::Running);
            st.started = Some(t);
        }
        let inputs = self.wl.functions[f as usize].inputs.clone();
        let mut pending: BTreeSet<u32> = BTreeSet::new();
        for &k in &inputs {
            let external = self.wl.producer[k as usize].is_none();
            match self.cfg.store {
                Store::DStore => {
                    if external || self.stores.entry(node).or_default().entries.contains(&k) {
                        continue; // available locally
                    }
                    pending.insert(k);
                }
                Store::Central => {
                    pending.insert(k);
                }
            }
        }
        self.fns[f as usize].pending_inputs = pending.clone();
        if pending.is_empty() {
            let compute = self.wl.functions[f as usize].compute_ns;
            self.push(t + compute, Ev::ComputeDone { node, f });
            return;
        }
        for k in pending {
            match self.cfg.store {
                Store::DStore => {
                    let store = self.stores.entry(node).or_default();
                    if let Some(waiters) = store.inflight.get_mut(&k) {
                        waiters.insert(f);
                    } else {
                        self.push(
                            t + self.latency(node, MASTER),
                            Ev::QueryArrive { key: k, node, f },
                        );
                    }
                }
                Store::Central => {
                    // Request reaches the master, then the datum streams back.
                    // One flow per consumer: co-located readers each pay the hop.
                    let flow = FlowKey { key: k, dst: node, src: MASTER, fid: f };
                    self.transfers.insert(
                        flow,
                        self.make_transfer(flow, self.wl.key_bytes[k as usize], Purpose::CentralGet { f }),
                    );
                    self.push(t + self.latency(node, MASTER), Ev::FetchArrive { flow });
                }
            }
        }
    }

    fn mark_input_ready(&mut self, t: u64, node: u32, f: u32, key: u32) {
        let st = &mut self.fns[f as usize];
        st.pending_inputs.remove(&key);
        if st.pending_inputs.is_empty() && st.phase == Some(Phase::Running) {
            let compute = self.wl.functions[f as usize].compute_ns;
            self.push(t + compute, Ev::ComputeDone { node, f });
        }
    }

    fn on_compute_done(&mut self, t: u64, node: u32, f: u32) {
        {
            let st = &mut self.fns[f as usize];
            st.phase = Some(Phase::Completed);
            st.completed = Some(t);
        }
        let outputs = self.wl.functions[f as usize].outputs.clone();
        match self.cfg.store {
            Store::DStore => {
                for &k in &outputs {
                    self.stores.entry(node).or_default().entries.insert(k);
                    let vis = t + self.latency(node, MASTER) + self.cfg.meta_write_ns;
                    self.push(vis, Ev::MetaVisible { key: k, node });
                }
                self.pool_release(t, node, f);
                let signal = if outputs.is_empty() {
                    t
                } else {
                    t + self.latency(node, MASTER) + self.cfg.meta_write_ns
                };
                self.emit_completion_reactions(t, signal, node, f);
            }
            Store::Central => {
                if outputs.is_empty() {
                    self.pool_release(t, node, f);
                    let signal = t;
                    self.emit_completion_reactions(t, signal, node, f);
                } else {
                    self.fns[f as usize].pending_puts = outputs.len() as u32;
                    for &k in &outputs {
                        let flow = FlowKey { key: k, dst: MASTER, src: node, fid: u32::MAX };
                        self.transfers.insert(
                            flow,
                            self.make_transfer(
                                flow,
                                self.wl.key_bytes[k as usize],
                                Purpose::CentralPut { f },
                            ),
                        );
                        self.start_transfer_chunks(t, flow);
                    }
                }
            }
        }
    }

    fn emit_completion_reactions(&mut self, t: u64, signal: u64, node: u32, f: u32) {
        match self.cfg.policy {
            Policy::Dataflow => {
                // Grand-successor prewarm, issued immediately on completion.
                let mut targets: BTreeSet<u32> = BTreeSet::new();
                for &s in &self.succs[f as usize] {
                    for &g in &self.succs[s as usize] {
                        targets.insert(g);
                    }
                }
                for g in targets {
                    let owner = self.cfg.placement[g as usize];
                    self.push(t + self.latency(node, owner), Ev::Invoke { node: owner, f: g });
                }
            }
            Policy::Controlflow => {
                let owners: BTreeSet<u32> = self.succs[f as usize]
                    .iter()
                    .map(|&s| self.cfg.placement[s as usize])
                    .collect();
                for owner in owners {
                    self.push(
                        signal + self.latency(node, owner),
                        Ev::CompleteNotify { owner, f },
                    );
                }
            }
            Policy::CFlow => {
                if !self.succs[f as usize].is_empty() {
                    self.push(
                        signal + self.latency(node, MASTER),
                        Ev::CompleteNotify { owner: MASTER, f },
                    );
                }
            }
        }
    }

    fn on_complete_notify(&mut self, t: u64, owner: u32, f: u32) {
        let succs = self.succs[f as usize].clone();
        for s in succs {
            let target = self.cfg.placement[s as usize];
            match self.cfg.policy {
                Policy::Controlflow => {
                    if target != owner {
                        continue;
                    }
                    let st = &mut self.fns[s as usize];
                    st.pending_preds -= 1;
                    if st.pending_preds == 0 {
                        self.push(t, Ev::Invoke { node: target, f: s });
                    }
                }
                Policy::CFlow => {
                    let st = &mut self.fns[s as usize];
                    st.pending_preds -= 1;
                    if st.pending_preds == 0 {
                        self.push(
                            t + self.cfg.ctrl_latency_ns,
                            Ev::Invoke { node: target, f: s },
                        );
                    }
                }
                Policy::Dataflow => unreachable!("dataflow sends no join notifications"),
            }
        }
    }

    // -- directory ----------------------------------------------------------

    fn on_query(&mut self, t: u64, key: u32, node: u32, f: u32) {
        if let Some(rec) = self.dir.get_mut(&key) {
            let source = *rec
                .locations
                .iter()
                .min_by_key(|(n, freq)| (**freq, **n))
                .expect("registered record has a location")
                .0;
            *rec.locations.get_mut(&source).unwrap() += 1;
            self.push(
                t + self.latency(MASTER, node),
                Ev::MetaReply { node, f, key, source },
            );
        } else {
            self.dir_waiters.entry(key).or_default().insert((node, f));
        }
    }

    fn on_meta_visible(&mut self, t: u64, key: u32, node: u32) {
        let created = !self.dir.contains_key(&key);
        let rec = self.dir.entry(key).or_default();
        rec.locations.entry(node).or_insert(0);
        if created {
            if let Some(waiters) = self.dir_waiters.remove(&key) {
                for (wnode, wf) in waiters {
                    let rec = self.dir.get_mut(&key).unwrap();
                    let source = *rec
                        .locations
                        .iter()
                        .min_by_key(|(n, freq)| (**freq, **n))
                        .unwrap()
                        .0;
                    *rec.locations.get_mut(&source).unwrap() += 1;
                    self.push(
                        t + self.latency(MASTER, wnode),
                        Ev::MetaReply { node: wnode, f: wf, key, source },
                    );
                }
            }
        }
    }

    fn on_meta_reply(&mut self, t: u64, node: u32, f: u32, key: u32, source: u32) {
        let store = self.stores.entry(node).or_default();
        if store.entries.contains(&key) || source == node {
            self.mark_input_ready(t, node, f, key);
            return;
        }
        if let Some(waiters) = store.inflight.get_mut(&key) {
            waiters.insert(f);
            return;
        }
        store.inflight.insert(key, BTreeSet::from([f]));
        let flow = FlowKey { key, dst: node, src: source, fid: u32::MAX };
        self.transfers.insert(
            flow,
            self.make_transfer(flow, self.wl.key_bytes[key as usize], Purpose::Fetch),
        );
        self.push(t + self.latency(node, source), Ev::FetchArrive { flow });
    }

    // -- transfers ----------------------------------------------------------

    fn make_transfer(&self, flow: FlowKey, total: u64, purpose: Purpose) -> Transfer {
        let mut stages = Vec::new();
        for s in [
            ScopeId::Egress(flow.src),
            ScopeId::Link(flow.src, flow.dst),
            ScopeId::Ingress(flow.dst),
        ] {
            if self.rate_of(s).is_some() {
                stages.push(s);
            }
        }
        let chunk_count = if total == 0 {
            0
        } else {
            ((total + self.cfg.chunk_bytes - 1) / self.cfg.chunk_bytes) as u32
        };
        Transfer { stages, total, chunk_count, next_chunk: 0, delivered: 0, purpose }
    }

    fn start_transfer_chunks(&mut self, t: u64, flow: FlowKey) {
        let tr = &self.transfers[&flow];
        if tr.stages.is_empty() || tr.chunk_count == 0 {
            self.push(t, Ev::Installed { flow });
            return;
        }
        let first = tr.stages[0];
        let bytes = self.chunk_bytes_of(&flow, 0);
        self.transfers.get_mut(&flow).unwrap().next_chunk = 1;
        self.enqueue_chunk(t, first, flow, 0, bytes);
    }

    fn chunk_bytes_of(&self, flow: &FlowKey, chunk: u32) -> u64 {
        let tr = &self.transfers[flow];
        if chunk + 1 == tr.chunk_count {
            tr.total - chunk as u64 * self.cfg.chunk_bytes
        } else {
            self.cfg.chunk_bytes
        }
    }

    fn enqueue_chunk(&mut self, t: u64, scope: ScopeId, flow: FlowKey, chunk: u32, bytes: u64) {
        let rate = self.rate_of(scope).expect("stage scopes carry a rate");
        let b = self.buckets.entry(scope).or_insert(Bucket {
            rate,
            cursor: 0,
            ready: BTreeMap::new(),
            last: None,
        });
        b.rate = rate;
        b.ready.insert(flow, (chunk, bytes));
        let at = t.max(b.cursor);
        self.push(at, Ev::Dispatch { scope });
    }

    fn on_dispatch(&mut self, t: u64, scope: ScopeId) {
        let Some(b) = self.buckets.get_mut(&scope) else { return };
        if b.ready.is_empty() {
            return;
        }
        if t < b.cursor {
            let at = b.cursor;
            self.push(at, Ev::Dispatch { scope });
            return;
        }
        // Round-robin across flows, resuming after the last served key.
        let flow = match b.last {
            Some(last) => {
                use std::ops::Bound::*;
                b.ready
                    .range((Excluded(last), Unbounded))
                    .next()
                    .map(|(k, _)| *k)
                    .unwrap_or_else(|| *b.ready.keys().next().unwrap())
            }
            None => *b.ready.keys().next().unwrap(),
        };
        let (chunk, bytes) = b.ready.remove(&flow).unwrap();
        let service = ceil_div_time(bytes, b.rate);
        b.cursor = t + service;
        b.last = Some(flow);
        let stage_idx = self.transfers[&flow].stages.iter().position(|&s| s == scope).unwrap();
        self.push(
            t + service,
            Ev::ChunkStage { flow, stage: stage_idx as u32, chunk, bytes },
        );
        let b = self.buckets.get_mut(&scope).unwrap();
        if !b.ready.is_empty() {
            let at = b.cursor;
            self.push(at, Ev::Dispatch { scope });
        }
    }

    fn on_chunk_stage(&mut self, t: u64, flow: FlowKey, stage: u32, chunk: u32, bytes: u64) {
        let (stages, chunk_count, next_chunk) = {
            let tr = &self.transfers[&flow];
            (tr.stages.clone(), tr.chunk_count, tr.next_chunk)
        };
        if stage == 0 && next_chunk < chunk_count {
            let nb = self.chunk_bytes_of(&flow, next_chunk);
            self.transfers.get_mut(&flow).unwrap().next_chunk += 1;
            self.enqueue_chunk(t, stages[0], flow, next_chunk, nb);
        }
        if (stage as usize + 1) < stages.len() {
            self.enqueue_chunk(t, stages[stage as usize + 1], flow, chunk, bytes);
        } else {
            let tr = self.transfers.get_mut(&flow).unwrap();
            tr.delivered += bytes;
            if tr.delivered >= tr.total {
                self.push(t, Ev::Installed { flow });
            }
        }
    }

    fn on_installed(&mut self, t: u64, flow: FlowKey) {
        let purpose = self.transfers[&flow].purpose;
        match purpose {
            Purpose::Fetch => {
                let store = self.stores.entry(flow.dst).or_default();
                store.entries.insert(flow.key);
                let waiters = store.inflight.remove(&flow.key).unwrap_or_default();
                for f in waiters {
                    self.mark_input_ready(t, flow.dst, f, flow.key);
                }
                let vis = t + self.latency(flow.dst, MASTER) + self.cfg.meta_write_ns;
                self.push(vis, Ev::MetaVisible { key: flow.key, node: flow.dst });
            }
            Purpose::CentralPut { f } => {
                self.central.insert(flow.key);
                let st = &mut self.fns[f as usize];
                st.pending_puts -= 1;
                if st.pending_puts == 0 {
                    let node = self.cfg.placement[f as usize];
                    self.pool_release(t, node, f);
                    // Master ack travels back, then the completion signal fans out.
                    let signal = t + self.latency(MASTER, node);
                    self.emit_completion_reactions(t, signal, node, f);
                }
            }
            Purpose::CentralGet { f } => {
                assert!(
                    self.central.contains(&flow.key) || self.wl.producer[flow.key as usize].is_none(),
                    "controlflow get must follow its put"
                );
                self.mark_input_ready(t, flow.dst, f, flow.key);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sec(s: f64) -> u64 {
        (s * 1e9) as u64
    }

    /// A, B, C feed D; D feeds E. Compute 1.0/1.5/2.0/1.0 seconds.
    fn fan_workload(a_compute: f64) -> Workload {
        // keys: 0=a_out 1=b_out 2=c_out 3=d_out
        Workload {
            functions: vec![
                FuncSpec { compute_ns: sec(a_compute), coldstart_ns: 0, inputs: vec![], outputs: vec![0] },
                FuncSpec { compute_ns: sec(1.5), coldstart_ns: 0, inputs: vec![], outputs: vec![1] },
                FuncSpec { compute_ns: sec(2.0), coldstart_ns: 0, inputs: vec![], outputs: vec![2] },
                FuncSpec { compute_ns: sec(1.0), coldstart_ns: 0, inputs: vec![0, 1, 2], outputs: vec![3] },
                FuncSpec { compute_ns: sec(0.5), coldstart_ns: 0, inputs: vec![3], outputs: vec![] },
            ],
            producer: vec![Some(0), Some(1), Some(2), Some(3)],
            key_bytes: vec![1024; 4],
        }
    }

    #[test]
    fn controlflow_join_timeline() {
        let wl = fan_workload(1.0);
        let cfg = Config::zero_cost(1, vec![0; 5], Policy::Controlflow);
        let out = simulate(&wl, &cfg);
        assert_eq!(out.times[3].started, Some(sec(2.0)), "D starts when C completes");
        assert_eq!(out.times[4].started, Some(sec(3.0)), "E starts when D completes");
        assert!(!out.timed_out);
    }

    #[test]
    fn cflow_join_timeline_matches_zero_cost() {
        let wl = fan_workload(1.0);
        let cfg = Config {
            store: Store::Central,
            ..Config::zero_cost(1, vec![0; 5], Policy::CFlow)
        };
        let out = simulate(&wl, &cfg);
        assert_eq!(out.times[3].started, Some(sec(2.0)));
        assert_eq!(out.times[4].started, Some(sec(3.0)));
    }

    #[test]
    fn dataflow_prewarm_timeline() {
        let wl = fan_workload(0.5);
        let cfg = Config::zero_cost(1, vec![0; 5], Policy::Dataflow);
        let out = simulate(&wl, &cfg);
        for f in 0..4 {
            assert_eq!(out.times[f].invoked, Some(0), "A,B,C,D invoked at arrival");
        }
        assert_eq!(out.times[4].invoked, Some(sec(0.5)), "E invoked when A completes");
        // D blocks on B and C, computes only after C's output at 2.0s.
        assert_eq!(out.times[3].completed, Some(sec(3.0)));
    }

    #[test]
    fn chain_dataflow_invocations() {
        // A -> B -> C; arrival invokes {A, B}; completion of A invokes C.
        let wl = Workload {
            functions: vec![
                FuncSpec { compute_ns: sec(1.0), coldstart_ns: 0, inputs: vec![], outputs: vec![0] },
                FuncSpec { compute_ns: sec(1.0), coldstart_ns: 0, inputs: vec![0], outputs: vec![1] },
                FuncSpec { compute_ns: sec(1.0), coldstart_ns: 0, inputs: vec![1], outputs: vec![] },
            ],
            producer: vec![Some(0), Some(1)],
            key_bytes: vec![64, 64],
        };
        let cfg = Config::zero_cost(1, vec![0; 3], Policy::Dataflow);
        let out = simulate(&wl, &cfg);
        assert_eq!(out.times[0].invoked, Some(0));
        assert_eq!(out.times[1].invoked, Some(0));
        assert_eq!(out.times[2].invoked, Some(sec(1.0)));
        assert_eq!(out.times[2].completed, Some(sec(3.0)));
    }

    #[test]
    fn single_flow_transfer_arithmetic() {
        // 1 MiB over a 50 MB/s ingress: service alone is 1048576/50e6 s;
        // with one shaping stage the delivery equals exactly that.
        let wl = Workload {
            functions: vec![
                FuncSpec { compute_ns: 0, coldstart_ns: 0, inputs: vec![], outputs: vec![0] },
                FuncSpec { compute_ns: 0, coldstart_ns: 0, inputs: vec![0], outputs: vec![] },
            ],
            producer: vec![Some(0)],
            key_bytes: vec![1 << 20],
        };
        let mut cfg = Config::zero_cost(2, vec![0, 1], Policy::Dataflow);
        cfg.ingress[1] = Some(50_000_000);
        let out = simulate(&wl, &cfg);
        // Producer completes at 0; consumer's gather ends when the transfer
        // lands: sum over 16 chunks of ceil(65536e9/50e6).
        let per_chunk = ceil_div_time(65536, 50_000_000);
        assert_eq!(out.times[1].completed, Some(16 * per_chunk));
        let exact = 1_048_576.0 / 50e6;
        let got = out.times[1].completed.unwrap() as f64 / 1e9;
        assert!((got - exact).abs() < 1e-6, "{} vs {}", got, exact);
    }

    #[test]
    fn two_flows_share_ingress_fairly() {
        // Two producers on different nodes stream 1 MiB each into node 2.
        let wl = Workload {
            functions: vec![
                FuncSpec { compute_ns: 0, coldstart_ns: 0, inputs: vec![], outputs: vec![0] },
                FuncSpec { compute_ns: 0, coldstart_ns: 0, inputs: vec![], outputs: vec![1] },
                FuncSpec { compute_ns: 0, coldstart_ns: 0, inputs: vec![0, 1], outputs: vec![] },
            ],
            producer: vec![Some(0), Some(1)],
            key_bytes: vec![1 << 20, 1 << 20],
        };
        let mut cfg = Config::zero_cost(3, vec![0, 1, 2], Policy::Dataflow);
        cfg.ingress[2] = Some(50_000_000);
        let out = simulate(&wl, &cfg);
        // 2 MiB total through one 50 MB/s bucket.
        let per_chunk = ceil_div_time(65536, 50_000_000);
        assert_eq!(out.times[2].completed, Some(32 * per_chunk));
    }
}
