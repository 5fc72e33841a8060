//! Timestamped execution traces: every invocation, put, get, block, wake and
//! transfer, exported as line-delimited JSON for tests and the reporter.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

/// Node column in trace records; the master is -1, workers are >= 0.
pub const TRACE_MASTER: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum TraceEvent {
    WorkflowSubmitted { workflow: String },
    PlanRegistered,
    Invoked { function: String, prewarm: bool },
    InvokeQueued { function: String },
    ContainerWarming { function: String },
    ContainerWarm { function: String, reused: bool },
    BodyStarted { function: String },
    InputBlocked { function: String, key: String },
    InputWake { function: String, key: String },
    TransferStarted { key: String, src: i64, dst: i64, bytes: u64 },
    TransferCompleted { key: String, src: i64, dst: i64, bytes: u64 },
    TransferAborted { key: String, src: i64, dst: i64, reason: String },
    PutCompleted { function: Option<String>, key: String, bytes: u64, hash: u64 },
    MetaRegistered { key: String, location: i64, locations: u32 },
    MetaQueried { key: String, source: i64 },
    MetaParked { key: String },
    GetServed { function: Option<String>, key: String, local: bool, hash_ok: bool },
    FunctionCompleted { function: String },
    SlotReleased { function: String },
    ExecutionCompleted { latency_ns: u64 },
    ExecutionTimeout,
    ExecutionFailed { reason: String },
    NodeFailed,
    RestartTriggered { attempt: u32 },
    DirectoryPurged { records: u32 },
    BandwidthChanged { scope: String, rate: Option<u64> },
    Warning { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t_ns: u64,
    pub node: i64,
    pub exec: u64,
    #[serde(flatten)]
    pub event: TraceEvent,
}

/// Ordered event log of one engine instance (possibly many executions).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExecutionTrace {
    pub records: Vec<TraceRecord>,
}

impl ExecutionTrace {
    pub fn push(&mut self, rec: TraceRecord) {
        self.records.push(rec);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter()
    }

    pub fn for_exec(&self, exec: u64) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.exec == exec)
    }

    /// First record matching the predicate.
    pub fn find<F: Fn(&TraceRecord) -> bool>(&self, pred: F) -> Option<&TraceRecord> {
        self.records.iter().find(|r| pred(r))
    }

    pub fn count<F: Fn(&TraceRecord) -> bool>(&self, pred: F) -> usize {
        self.records.iter().filter(|r| pred(r)).count()
    }

    /// Inter-node data transfer completions (same-node serves never appear).
    pub fn transfers(&self) -> impl Iterator<Item = (&TraceRecord, &str, i64, i64, u64)> {
        self.records.iter().filter_map(|r| match &r.event {
            TraceEvent::TransferCompleted { key, src, dst, bytes } => {
                Some((r, key.as_str(), *src, *dst, *bytes))
            }
            _ => None,
        })
    }

    pub fn to_ndjson<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for rec in &self.records {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_ndjson_string(&self) -> String {
        let mut buf = Vec::new();
        self.to_ndjson(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn from_ndjson<R: BufRead>(r: R) -> std::io::Result<Self> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord = serde_json::from_str(&line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            records.push(rec);
        }
        Ok(ExecutionTrace { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ndjson_round_trip() {
        let mut trace = ExecutionTrace::default();
        trace.push(TraceRecord {
            t_ns: 0,
            node: 0,
            exec: 1,
            event: TraceEvent::Invoked { function: "A".into(), prewarm: false },
        });
        trace.push(TraceRecord {
            t_ns: 1_500_000,
            node: TRACE_MASTER,
            exec: 1,
            event: TraceEvent::MetaRegistered { key: "x".into(), location: 0, locations: 1 },
        });
        let text = trace.to_ndjson_string();
        let back = ExecutionTrace::from_ndjson(text.as_bytes()).unwrap();
        assert_eq!(trace, back);
    }
}
