//! Simulated cluster fabric: message envelopes with a stable binary framing,
//! per-node/per-link token-bucket bandwidth shaping for data chunks, and a
//! thin socket transport that shares the envelope codec for smoke tests.
//!
//! Control messages (invoke, register, query, replies) are delivered after
//! link latency and are never bandwidth-shaped; only data chunks pass through
//! the token buckets. A transfer from `src` to `dst` traverses up to three
//! shaping stages in order — `Egress(src)`, `Link(src, dst)`, `Ingress(dst)`
//! — skipping any stage without a configured rate. Chunks of concurrent
//! flows are served round-robin per bucket, which fair-shares a contended
//! bucket at chunk granularity.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::TcpStream;
use std::ops::Bound::{Excluded, Unbounded};

use serde::{Deserialize, Serialize};

/// Sentinel node id for the master role.
pub const MASTER_RAW: u32 = u32::MAX;

// ---------------------------------------------------------------------------
// Envelopes and codec
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageKind {
    InvokeFunction = 0,
    FunctionCompleted = 1,
    RegisterPlan = 2,
    PutLocal = 3,
    RegisterMeta = 4,
    QueryMeta = 5,
    MetaReply = 6,
    FetchData = 7,
    DataChunk = 8,
    CentralPut = 9,
    CentralGet = 10,
}

impl MessageKind {
    fn from_u8(b: u8) -> Option<Self> {
        use MessageKind::*;
        Some(match b {
            0 => InvokeFunction,
            1 => FunctionCompleted,
            2 => RegisterPlan,
            3 => PutLocal,
            4 => RegisterMeta,
            5 => QueryMeta,
            6 => MetaReply,
            7 => FetchData,
            8 => DataChunk,
            9 => CentralPut,
            10 => CentralGet,
            _ => return None,
        })
    }
}

/// Wire message between node roles. `src`/`dst` use -1 for the master.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub src: i64,
    pub dst: i64,
    pub kind: MessageKind,
    pub exec: u64,
    pub payload: Vec<u8>,
}

/// Length-prefixed binary framing:
/// `[u32 len][i64 src][i64 dst][u8 kind][u64 exec][payload]`, all little endian,
/// where `len` counts everything after the prefix.
pub fn encode_envelope(env: &Envelope) -> Vec<u8> {
    let body_len = 8 + 8 + 1 + 8 + env.payload.len();
    let mut buf = Vec::with_capacity(4 + body_len);
    buf.extend_from_slice(&(body_len as u32).to_le_bytes());
    buf.extend_from_slice(&env.src.to_le_bytes());
    buf.extend_from_slice(&env.dst.to_le_bytes());
    buf.push(env.kind as u8);
    buf.extend_from_slice(&env.exec.to_le_bytes());
    buf.extend_from_slice(&env.payload);
    buf
}

pub fn decode_envelope(buf: &[u8]) -> io::Result<(Envelope, usize)> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    if buf.len() < 4 {
        return Err(bad("short prefix"));
    }
    let len = u32::from_le_bytes(buf[0..4].try_into().unwrap()) as usize;
    if buf.len() < 4 + len || len < 25 {
        return Err(bad("truncated envelope"));
    }
    let b = &buf[4..4 + len];
    let src = i64::from_le_bytes(b[0..8].try_into().unwrap());
    let dst = i64::from_le_bytes(b[8..16].try_into().unwrap());
    let kind = MessageKind::from_u8(b[16]).ok_or_else(|| bad("unknown message kind"))?;
    let exec = u64::from_le_bytes(b[17..25].try_into().unwrap());
    let payload = b[25..].to_vec();
    Ok((Envelope { src, dst, kind, exec, payload }, 4 + len))
}

pub fn write_envelope<W: Write>(w: &mut W, env: &Envelope) -> io::Result<()> {
    w.write_all(&encode_envelope(env))
}

/// Read one envelope; returns None on a clean EOF at a frame boundary.
pub fn read_envelope<R: Read>(r: &mut R) -> io::Result<Option<Envelope>> {
    let mut prefix = [0u8; 4];
    match r.read_exact(&mut prefix) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(prefix) as usize;
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    let mut framed = prefix.to_vec();
    framed.extend_from_slice(&body);
    decode_envelope(&framed).map(|(env, _)| Some(env))
}

/// Typed control payloads carried inside envelopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ControlMsg {
    InvokeFunction { function: String },
    FunctionCompleted { function: String },
    RegisterMeta { key: String, size: u64, node: i64 },
    QueryMeta { key: String },
    MetaReply { key: String, size: u64, source: i64 },
    FetchData { key: String },
}

impl ControlMsg {
    pub fn to_payload(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("control message serializes")
    }

    pub fn from_payload(bytes: &[u8]) -> io::Result<Self> {
        serde_json::from_slice(bytes)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// DataChunk payload framing: `[u16 key_len][key][u64 offset][u8 last][data]`.
pub fn encode_chunk(key: &str, offset: u64, last: bool, data: &[u8]) -> Vec<u8> {
    let kb = key.as_bytes();
    let mut buf = Vec::with_capacity(2 + kb.len() + 9 + data.len());
    buf.extend_from_slice(&(kb.len() as u16).to_le_bytes());
    buf.extend_from_slice(kb);
    buf.extend_from_slice(&offset.to_le_bytes());
    buf.push(last as u8);
    buf.extend_from_slice(data);
    buf
}

pub fn decode_chunk(buf: &[u8]) -> io::Result<(String, u64, bool, Vec<u8>)> {
    let bad = |m: &str| io::Error::new(io::ErrorKind::InvalidData, m.to_string());
    if buf.len() < 2 {
        return Err(bad("short chunk"));
    }
    let klen = u16::from_le_bytes(buf[0..2].try_into().unwrap()) as usize;
    if buf.len() < 2 + klen + 9 {
        return Err(bad("truncated chunk"));
    }
    let key = String::from_utf8(buf[2..2 + klen].to_vec()).map_err(|_| bad("bad key"))?;
    let off = u64::from_le_bytes(buf[2 + klen..10 + klen].try_into().unwrap());
    let last = buf[10 + klen] != 0;
    Ok((key, off, last, buf[11 + klen..].to_vec()))
}

/// Minimal real-socket endpoint sharing the envelope codec, for smoke tests.
pub struct SocketTransport {
    stream: TcpStream,
}

impl SocketTransport {
    pub fn new(stream: TcpStream) -> Self {
        SocketTransport { stream }
    }

    pub fn send(&mut self, env: &Envelope) -> io::Result<()> {
        write_envelope(&mut self.stream, env)
    }

    pub fn recv(&mut self) -> io::Result<Option<Envelope>> {
        read_envelope(&mut self.stream)
    }
}

// ---------------------------------------------------------------------------
// Bandwidth shaping
// ---------------------------------------------------------------------------

/// A shaping scope: one token bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ScopeId {
    Egress(u32),
    Link(u32, u32),
    Ingress(u32),
}

impl ScopeId {
    pub fn describe(&self) -> String {
        let n = |x: u32| {
            if x == MASTER_RAW {
                "master".to_string()
            } else {
                x.to_string()
            }
        };
        match self {
            ScopeId::Egress(a) => format!("egress:{}", n(*a)),
            ScopeId::Link(a, b) => format!("link:{}:{}", n(*a), n(*b)),
            ScopeId::Ingress(a) => format!("ingress:{}", n(*a)),
        }
    }
}

/// Identity of one data transfer. Ordering (exec, key, dst, src, fid) fixes
/// the round-robin service order among flows sharing a bucket. `fid`
/// distinguishes central-store reads issued by co-located consumers; store
/// fetches use u32::MAX.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FlowKey {
    pub exec: u64,
    pub key: u32,
    pub dst: u32,
    pub src: u32,
    pub fid: u32,
}

#[derive(Debug)]
struct Bucket {
    rate: Option<u64>,
    cursor: u64,
    ready: BTreeMap<FlowKey, (u32, u64)>,
    last: Option<FlowKey>,
}

impl Bucket {
    fn new(rate: Option<u64>) -> Self {
        Bucket { rate, cursor: 0, ready: BTreeMap::new(), last: None }
    }
}

/// Outcome of a dispatch attempt on one bucket.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dispatched {
    /// Nothing ready to serve.
    Idle,
    /// Bucket busy until the given time; retry then.
    Busy(u64),
    /// One chunk served: service completes at `done_at`; if more chunks wait,
    /// the next dispatch should run at `done_at`.
    Serve { flow: FlowKey, chunk: u32, bytes: u64, done_at: u64, more: bool },
}

/// Token-bucket shaper over all scopes. Chunk service time is
/// `ceil(bytes * 1e9 / rate)` nanoseconds.
#[derive(Debug, Default)]
pub struct Shaper {
    buckets: BTreeMap<ScopeId, Bucket>,
}

pub fn service_ns(bytes: u64, rate: u64) -> u64 {
    let num = bytes as u128 * 1_000_000_000u128;
    ((num + rate as u128 - 1) / rate as u128) as u64
}

impl Shaper {
    pub fn set_rate(&mut self, scope: ScopeId, rate: Option<u64>) {
        match self.buckets.get_mut(&scope) {
            Some(b) => b.rate = rate,
            None => {
                self.buckets.insert(scope, Bucket::new(rate));
            }
        }
    }

    pub fn rate(&self, scope: ScopeId) -> Option<u64> {
        self.buckets.get(&scope).and_then(|b| b.rate)
    }

    /// Shaping stages a transfer src -> dst must traverse, in order.
    pub fn stages(&self, src: u32, dst: u32) -> Vec<ScopeId> {
        [ScopeId::Egress(src), ScopeId::Link(src, dst), ScopeId::Ingress(dst)]
            .into_iter()
            .filter(|s| self.rate(*s).is_some())
            .collect()
    }

    /// Queue a chunk; returns the time at which dispatch should be attempted.
    pub fn enqueue(&mut self, now: u64, scope: ScopeId, flow: FlowKey, chunk: u32, bytes: u64) -> u64 {
        let b = self.buckets.get_mut(&scope).expect("enqueue on configured scope");
        b.ready.insert(flow, (chunk, bytes));
        now.max(b.cursor)
    }

    /// Try to serve one chunk at time `now`.
    pub fn dispatch(&mut self, now: u64, scope: ScopeId) -> Dispatched {
        let Some(b) = self.buckets.get_mut(&scope) else { return Dispatched::Idle };
        if b.ready.is_empty() {
            return Dispatched::Idle;
        }
        if now < b.cursor {
            return Dispatched::Busy(b.cursor);
        }
        let Some(rate) = b.rate else {
            // Rate removed while chunks queued: serve instantly in key order.
            let (&flow, &(chunk, bytes)) = b.ready.iter().next().unwrap();
            b.ready.remove(&flow);
            return Dispatched::Serve { flow, chunk, bytes, done_at: now, more: !b.ready.is_empty() };
        };
        let flow = match b.last {
            Some(last) => b
                .ready
                .range((Excluded(last), Unbounded))
                .next()
                .map(|(k, _)| *k)
                .unwrap_or_else(|| *b.ready.keys().next().unwrap()),
            None => *b.ready.keys().next().unwrap(),
        };
        let (chunk, bytes) = b.ready.remove(&flow).unwrap();
        let done_at = now + service_ns(bytes, rate);
        b.cursor = done_at;
        b.last = Some(flow);
        Dispatched::Serve { flow, chunk, bytes, done_at, more: !b.ready.is_empty() }
    }

    /// Drop all queued chunks of flows matching the predicate (node failure).
    pub fn drop_flows<F: Fn(&FlowKey) -> bool>(&mut self, pred: F) {
        for b in self.buckets.values_mut() {
            b.ready.retain(|k, _| !pred(k));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_codec_round_trip() {
        let env = Envelope {
            src: -1,
            dst: 3,
            kind: MessageKind::MetaReply,
            exec: 42,
            payload: ControlMsg::MetaReply { key: "x".into(), size: 1024, source: 1 }
                .to_payload(),
        };
        let bytes = encode_envelope(&env);
        let (back, used) = decode_envelope(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(env, back);
        let msg = ControlMsg::from_payload(&back.payload).unwrap();
        assert_eq!(msg, ControlMsg::MetaReply { key: "x".into(), size: 1024, source: 1 });
    }

    #[test]
    fn chunk_codec_round_trip() {
        let payload = encode_chunk("data_x", 65536, true, &[7u8; 128]);
        let (key, off, last, data) = decode_chunk(&payload).unwrap();
        assert_eq!(key, "data_x");
        assert_eq!(off, 65536);
        assert!(last);
        assert_eq!(data, vec![7u8; 128]);
    }

    #[test]
    fn service_time_is_exact() {
        // 1 MiB at 50 MB/s = 20.97152 ms.
        assert_eq!(service_ns(1 << 20, 50_000_000), 20_971_520);
        // 10 MiB at 25 MB/s = 419.4304 ms.
        assert_eq!(10 * service_ns(1 << 20, 25_000_000) * 1, 419_430_400);
    }

    #[test]
    fn round_robin_alternates_flows() {
        let mut sh = Shaper::default();
        let scope = ScopeId::Ingress(0);
        sh.set_rate(scope, Some(1_000_000));
        let f1 = FlowKey { exec: 1, key: 0, dst: 0, src: 1, fid: u32::MAX };
        let f2 = FlowKey { exec: 1, key: 1, dst: 0, src: 2, fid: u32::MAX };
        sh.enqueue(0, scope, f1, 0, 1000);
        sh.enqueue(0, scope, f2, 0, 1000);
        let d1 = sh.dispatch(0, scope);
        let Dispatched::Serve { flow, done_at, .. } = d1 else { panic!("{d1:?}") };
        assert_eq!(flow, f1);
        assert_eq!(done_at, 1_000_000);
        // Re-queue f1's next chunk; round robin must still pick f2 next.
        sh.enqueue(done_at, scope, f1, 1, 1000);
        let d2 = sh.dispatch(done_at, scope);
        let Dispatched::Serve { flow, .. } = d2 else { panic!("{d2:?}") };
        assert_eq!(flow, f2);
    }

    #[test]
    fn dispatch_respects_cursor() {
        let mut sh = Shaper::default();
        let scope = ScopeId::Egress(2);
        sh.set_rate(scope, Some(1_000));
        let f = FlowKey { exec: 1, key: 0, dst: 0, src: 2, fid: u32::MAX };
        sh.enqueue(0, scope, f, 0, 1000);
        match sh.dispatch(0, scope) {
            Dispatched::Serve { done_at, .. } => assert_eq!(done_at, 1_000_000_000),
            other => panic!("{other:?}"),
        }
        sh.enqueue(1, scope, f, 1, 1000);
        match sh.dispatch(1, scope) {
            Dispatched::Busy(at) => assert_eq!(at, 1_000_000_000),
            other => panic!("{other:?}"),
        }
    }
}
