//! Engine events and their total order.
//!
//! Events at equal times dequeue by (class, exec, a, b, c, d); the class
//! table is a fixed convention shared with the reference simulator used in
//! tests:
//!
//! | class | event                                  |
//! |-------|----------------------------------------|
//! | 0     | admin: arrival, failure, bandwidth, raw ops |
//! | 1     | chunk stage completion / install        |
//! | 2     | bucket dispatch                         |
//! | 3     | metadata visible at the directory       |
//! | 4     | metadata reply arrival                  |
//! | 5     | fetch request arrival                   |
//! | 6     | directory query arrival                 |
//! | 7     | completion notification                 |
//! | 8     | invoke                                  |
//! | 9     | body start                              |
//! | 10    | compute done                            |
//! | 11    | execution timeout                       |

use super::config::BandwidthScope;
use super::{Consumer, DataId, NodeId};
use crate::transport::{FlowKey, ScopeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct EvKey {
    pub t: u64,
    pub class: u8,
    pub exec: u64,
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
    pub seq: u64,
}

#[derive(Debug, Clone)]
pub(crate) enum Ev {
    Arrival { exec: u64, attempt: u32 },
    RawPut { node: NodeId, key: u32 },
    RawGet { node: NodeId, key: u32, tag: u64 },
    NodeFail { node: NodeId },
    SetBandwidth { scope: BandwidthScope, rate: Option<u64> },
    ChunkStage { flow: FlowKey, attempt: u32, stage: u32, chunk: u32, bytes: u64 },
    Installed { flow: FlowKey, attempt: u32 },
    Dispatch { scope: ScopeId },
    MetaVisible { id: DataId, attempt: u32, node: NodeId },
    MetaReply { id: DataId, attempt: u32, node: NodeId, consumer: Consumer, source: NodeId },
    FetchArrive { flow: FlowKey, attempt: u32 },
    QueryArrive { id: DataId, attempt: u32, node: NodeId, consumer: Consumer },
    CompleteNotify { owner: NodeId, exec: u64, attempt: u32, f: u32 },
    Invoke { node: NodeId, exec: u64, attempt: u32, f: u32, prewarm: bool },
    BodyStart { node: NodeId, exec: u64, attempt: u32, f: u32 },
    ComputeDone { node: NodeId, exec: u64, attempt: u32, f: u32 },
    Timeout { exec: u64 },
}

fn scope_sort(s: ScopeId) -> (u64, u64, u64) {
    match s {
        ScopeId::Egress(n) => (0, n as u64, 0),
        ScopeId::Link(a, b) => (1, a as u64, b as u64),
        ScopeId::Ingress(n) => (2, n as u64, 0),
    }
}

fn consumer_sort(c: Consumer) -> u64 {
    match c {
        Consumer::Body { f } => f as u64,
        Consumer::Raw { tag } => (1 << 40) | tag,
        Consumer::Probe { tag } => (1 << 41) | tag,
    }
}

pub(crate) fn ev_key(t: u64, ev: &Ev, seq: u64) -> EvKey {
    let (class, exec, a, b, c, d) = match *ev {
        Ev::Arrival { exec, .. } => (0, exec, 0, 0, 0, 0),
        Ev::RawPut { node, key } => (0, 0, 1, node as u64, key as u64, 0),
        Ev::RawGet { node, key, tag } => (0, 0, 2, node as u64, key as u64, tag),
        Ev::NodeFail { node } => (0, 0, 3, node as u64, 0, 0),
        Ev::SetBandwidth { .. } => (0, 0, 4, 0, 0, seq),
        Ev::ChunkStage { flow, stage, chunk, .. } => (
            1,
            flow.exec,
            flow.key as u64,
            ((flow.dst as u64) << 32) | flow.src as u64,
            flow.fid as u64,
            ((stage as u64) << 32) | chunk as u64,
        ),
        Ev::Installed { flow, .. } => (
            1,
            flow.exec,
            flow.key as u64,
            ((flow.dst as u64) << 32) | flow.src as u64,
            flow.fid as u64,
            u64::MAX,
        ),
        Ev::Dispatch { scope } => {
            let (k, a, b) = scope_sort(scope);
            (2, 0, k, a, b, 0)
        }
        Ev::MetaVisible { id, node, .. } => (3, id.exec, id.key as u64, node as u64, 0, 0),
        Ev::MetaReply { id, node, consumer, source, .. } => (
            4,
            id.exec,
            node as u64,
            consumer_sort(consumer),
            id.key as u64,
            source as u64,
        ),
        Ev::FetchArrive { flow, .. } => (
            5,
            flow.exec,
            flow.key as u64,
            ((flow.src as u64) << 32) | flow.dst as u64,
            flow.fid as u64,
            0,
        ),
        Ev::QueryArrive { id, node, consumer, .. } => {
            (6, id.exec, id.key as u64, node as u64, consumer_sort(consumer), 0)
        }
        Ev::CompleteNotify { owner, exec, f, .. } => (7, exec, owner as u64, f as u64, 0, 0),
        Ev::Invoke { node, exec, f, .. } => (8, exec, node as u64, f as u64, 0, 0),
        Ev::BodyStart { node, exec, f, .. } => (9, exec, node as u64, f as u64, 0, 0),
        Ev::ComputeDone { node, exec, f, .. } => (10, exec, node as u64, f as u64, 0, 0),
        Ev::Timeout { exec } => (11, exec, 0, 0, 0, 0),
    };
    EvKey { t, class, exec, a, b, c, d, seq }
}
