//! Mutable engine state: execution records, container pools, local stores,
//! the metadata directory, the central store, and in-flight transfers.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use crate::policy::Phase;
use crate::transport::ScopeId;
use crate::workflow::DagView;

use super::{Consumer, DataId, NodeId};

pub type Buffer = Rc<Vec<u8>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecStatus {
    Running,
    Completed { at: u64, latency_ns: u64 },
    TimedOut,
    Failed { reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FuncTimes {
    pub invoked: Option<u64>,
    pub started: Option<u64>,
    pub completed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecResult {
    pub status: ExecStatus,
    pub submitted_at: u64,
    /// Per-key payload hashes recorded at put time.
    pub output_hashes: BTreeMap<String, u64>,
}

#[derive(Debug)]
pub(crate) struct FnRun {
    pub phase: Phase,
    pub invoked: Option<u64>,
    pub started: Option<u64>,
    pub completed: Option<u64>,
    pub pending_inputs: BTreeSet<u32>,
    pub pending_preds: u32,
    pub pending_puts: u32,
}

#[derive(Debug)]
pub(crate) struct ExecState {
    pub wf: usize,
    pub attempt: u32,
    pub t0: u64,
    pub status: ExecStatus,
    pub fns: Vec<FnRun>,
    pub pending_releases: u32,
    /// key -> payload hash, recorded at put.
    pub outputs: BTreeMap<u32, u64>,
}

impl ExecState {
    pub fn new(wf: usize, t0: u64, n: usize, view: &DagView) -> Self {
        ExecState {
            wf,
            attempt: 0,
            t0,
            status: ExecStatus::Running,
            fns: (0..n)
                .map(|f| FnRun {
                    phase: Phase::NotInvoked,
                    invoked: None,
                    started: None,
                    completed: None,
                    pending_inputs: BTreeSet::new(),
                    pending_preds: view.predecessors[f].len() as u32,
                    pending_puts: 0,
                })
                .collect(),
            pending_releases: n as u32,
            outputs: BTreeMap::new(),
        }
    }

    /// Reset lifecycle state for a fresh attempt after a restart.
    pub fn reset_for_attempt(&mut self, view: &DagView) {
        self.attempt += 1;
        self.outputs.clear();
        self.pending_releases = self.fns.len() as u32;
        for (f, st) in self.fns.iter_mut().enumerate() {
            st.phase = Phase::NotInvoked;
            st.invoked = None;
            st.started = None;
            st.completed = None;
            st.pending_inputs.clear();
            st.pending_preds = view.predecessors[f].len() as u32;
            st.pending_puts = 0;
        }
    }

    pub fn running(&self) -> bool {
        self.status == ExecStatus::Running
    }
}

/// One node's container pool: `busy` slots are warming or executing, `warm`
/// slots idle and bound to a function of a workflow, the rest of the cap is
/// free. Blocked bodies hold their slot.
#[derive(Debug, Default)]
pub(crate) struct Pool {
    pub busy: BTreeSet<(u64, u32)>,
    /// (workflow, function) -> release time of the idle warm container.
    pub warm: BTreeMap<(usize, u32), u64>,
    /// Invocations waiting for a slot, FIFO by (invoked_at, exec, f).
    pub queue: BTreeSet<(u64, u64, u32)>,
}

#[derive(Debug, Clone)]
pub(crate) struct StoreEntry {
    pub bytes: Buffer,
    pub hash: u64,
    pub complete: bool,
    /// Bytes present so far; equals len when complete.
    pub progress: u64,
}

#[derive(Debug)]
pub(crate) struct Inflight {
    pub src: NodeId,
    pub waiters: BTreeSet<Consumer>,
    pub retries: u32,
}

/// Per-node local store of the distributed data plane.
#[derive(Debug, Default)]
pub(crate) struct LocalStore {
    pub entries: BTreeMap<DataId, StoreEntry>,
    pub inflight: BTreeMap<DataId, Inflight>,
    pub used_bytes: u64,
}

impl LocalStore {
    pub fn has_complete(&self, id: DataId) -> bool {
        self.entries.get(&id).map(|e| e.complete).unwrap_or(false)
    }
}

#[derive(Debug, Default)]
pub(crate) struct DirRec {
    pub size: u64,
    /// node -> access frequency counter (per datum, never decays).
    pub locations: BTreeMap<NodeId, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct Waiter {
    pub node: NodeId,
    pub consumer: Consumer,
}

/// Master-hosted metadata directory with parked waiters per datum.
#[derive(Debug, Default)]
pub(crate) struct Directory {
    pub recs: BTreeMap<DataId, DirRec>,
    pub waiters: BTreeMap<DataId, BTreeSet<Waiter>>,
    /// Payloads staged by raw_put_at before its event fires.
    pub raw_payloads: BTreeMap<DataId, Buffer>,
    /// Produced payloads whose copy/transfer has not finished yet.
    pub staged: BTreeMap<DataId, (Buffer, u64)>,
}

impl Directory {
    /// Choose the replica with the lowest access frequency (ties toward the
    /// lowest node id) and increment its counter atomically with the choice.
    pub fn choose_and_increment(&mut self, id: DataId) -> Option<(NodeId, u64)> {
        let rec = self.recs.get_mut(&id)?;
        let node = *rec.locations.iter().min_by_key(|(n, f)| (**f, **n))?.0;
        *rec.locations.get_mut(&node).unwrap() += 1;
        Some((node, rec.size))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Purpose {
    /// Container-to-store copy of a produced output on its own node.
    LocalPut { f: u32 },
    /// Receiver-driven replica fetch into a local store.
    Fetch,
    /// Producer pushing an output into the central store.
    CentralPut { f: u32 },
    /// Consumer pulling a datum from the central store.
    CentralGet { consumer: Consumer },
}

#[derive(Debug)]
pub(crate) struct Transfer {
    pub attempt: u32,
    pub stages: Vec<ScopeId>,
    pub total: u64,
    pub chunk_count: u32,
    pub next_chunk: u32,
    pub delivered: u64,
    pub purpose: Purpose,
}

/// Status of a raw store get issued through the harness API.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawGetStatus {
    Pending,
    Served { bytes: Vec<u8>, local: bool, at: u64 },
    SourceChosen { node: super::NodeId, at: u64 },
    Failed { reason: String },
}
