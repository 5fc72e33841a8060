//! A desk-scale serverless-workflow engine.
//!
//! `faasim` executes DAGs of emulated functions on a simulated multi-node
//! cluster under two interchangeable invocation policies:
//!
//! * **dataflow** — a function may be invoked while its predecessors are
//!   still running; it blocks on *data*, not on function state. Entry points
//!   and their successors are invoked at workflow arrival, and each
//!   completion prewarms the not-yet-invoked grand-successors.
//! * **controlflow** — the classic join: a function is invoked only once all
//!   of its predecessors have completed. Available both decentralized (per
//!   node local schedulers) and centralized (`cflow`, master-resident).
//!
//! Data moves through a distributed immutable KV store: per-node local
//! stores hold buffers, a master-hosted directory holds metadata (size,
//! replica locations, per-location access frequency), gets for unpublished
//! data park at the directory and wake on registration, and remote reads are
//! receiver-driven pulls shaped by per-node token buckets. A master-hosted
//! central store is provided as the baseline data plane.
//!
//! Everything runs on a deterministic virtual-time event core, so timelines
//! are exact and reproducible; a real-time mode paces the same event stream
//! against the wall clock for smoke testing.
//!
//! See the crate examples for one runnable walkthrough per capability, and
//! the `bench` module for the experiment driver behind the `faasim` binary.

pub mod bench;
pub mod engine;
pub mod partition;
pub mod policy;
pub mod stats;
pub mod trace;
pub mod transport;
pub mod workflow;

pub use engine::{
    BandwidthScope, ClusterConfig, CostModel, Engine, EngineError, ExecStatus, NodeId, Policy,
    RawGetStatus, StoreKind, TimeMode, MASTER_NODE,
};
pub use partition::{Placement, Strategy};
pub use trace::{ExecutionTrace, TraceEvent, TraceRecord};
pub use workflow::{DagView, FunctionDef, WorkflowError, WorkflowSpec};
