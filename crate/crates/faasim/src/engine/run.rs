//! Event handlers and the run loop.

use std::collections::BTreeSet;
use std::rc::Rc;

use super::events::Ev;
use super::state::{
    DirRec, ExecStatus, Inflight, Purpose, RawGetStatus, StoreEntry, Transfer, Waiter,
};
use super::{trace_node, Consumer, DataId, Engine, NodeId, Policy, StoreKind, MASTER_NODE};
use crate::partition;
use crate::policy::Phase;
use crate::stats::{fnv1a, payload_bytes, payload_seed};
use crate::trace::TraceEvent;
use crate::transport::{Dispatched, FlowKey, ScopeId};
use crate::workflow::KeyId;

const FETCH_RETRY_LIMIT: u32 = 3;
const NO_FID: u32 = u32::MAX;

impl Engine {
    /// Drain the event queue. In real-time mode each event is paced against
    /// the wall clock before it is handled.
    pub fn run(&mut self) {
        let anchor = std::time::Instant::now();
        let base = self.now;
        loop {
            let Some((&key, _)) = self.queue.iter().next() else { break };
            if self.cfg.time_mode == super::TimeMode::Real {
                let target = std::time::Duration::from_nanos(key.t.saturating_sub(base));
                let elapsed = anchor.elapsed();
                if target > elapsed {
                    std::thread::sleep(target - elapsed);
                }
            }
            let ev = self.queue.remove(&key).unwrap();
            self.now = key.t;
            self.handle(key.t, ev);
        }
    }

    /// Process events up to and including virtual time `t_ns`.
    pub fn run_until(&mut self, t_ns: u64) {
        loop {
            let Some((&key, _)) = self.queue.iter().next() else { break };
            if key.t > t_ns {
                break;
            }
            let ev = self.queue.remove(&key).unwrap();
            self.now = key.t;
            self.handle(key.t, ev);
        }
        self.now = self.now.max(t_ns);
    }

    fn handle(&mut self, t: u64, ev: Ev) {
        match ev {
            Ev::Arrival { exec, attempt } => self.on_arrival(t, exec, attempt),
            Ev::RawPut { node, key } => self.on_raw_put(t, node, key),
            Ev::RawGet { node, key, tag } => self.on_raw_get(t, node, key, tag),
            Ev::NodeFail { node } => self.on_node_fail(t, node),
            Ev::SetBandwidth { scope, rate } => self.on_set_bandwidth(t, scope, rate),
            Ev::ChunkStage { flow, attempt, stage, chunk, bytes } => {
                self.on_chunk_stage(t, flow, attempt, stage, chunk, bytes)
            }
            Ev::Installed { flow, attempt } => self.on_installed(t, flow, attempt),
            Ev::Dispatch { scope } => self.on_dispatch(t, scope),
            Ev::MetaVisible { id, attempt, node } => self.on_meta_visible(t, id, attempt, node),
            Ev::MetaReply { id, attempt, node, consumer, source } => {
                self.on_meta_reply(t, id, attempt, node, consumer, source)
            }
            Ev::FetchArrive { flow, attempt } => self.on_fetch_arrive(t, flow, attempt),
            Ev::QueryArrive { id, attempt, node, consumer } => {
                self.on_query_arrive(t, id, attempt, node, consumer)
            }
            Ev::CompleteNotify { owner, exec, attempt, f } => {
                self.on_complete_notify(t, owner, exec, attempt, f)
            }
            Ev::Invoke { node, exec, attempt, f, prewarm } => {
                self.on_invoke(t, node, exec, attempt, f, prewarm)
            }
            Ev::BodyStart { node, exec, attempt, f } => {
                self.on_body_start(t, node, exec, attempt, f)
            }
            Ev::ComputeDone { node, exec, attempt, f } => {
                self.on_compute_done(t, node, exec, attempt, f)
            }
            Ev::Timeout { exec } => self.on_timeout(t, exec),
        }
    }

    /// True when events tagged (exec, attempt) are still relevant.
    fn exec_ok(&self, exec: u64, attempt: u32) -> bool {
        if exec == 0 {
            return true; // raw harness operations
        }
        self.execs
            .get(&exec)
            .map(|st| st.running() && st.attempt == attempt)
            .unwrap_or(false)
    }

    fn compute_ns(&self, exec: u64, f: u32) -> u64 {
        let wf = self.execs[&exec].wf;
        self.workflows[wf].spec.functions[f as usize].compute_ms * 1_000_000
    }

    fn coldstart_ns(&self, exec: u64, f: u32) -> u64 {
        let wf = self.execs[&exec].wf;
        self.workflows[wf].spec.functions[f as usize].coldstart_ms * 1_000_000
    }

    fn func_name(&self, exec: u64, f: u32) -> String {
        let wf = self.execs[&exec].wf;
        self.workflows[wf].spec.func_name(f as usize).to_string()
    }

    // -- arrival & invocation ------------------------------------------------

    fn on_arrival(&mut self, t: u64, exec: u64, attempt: u32) {
        if !self.exec_ok(exec, attempt) {
            return;
        }
        let wf = self.execs[&exec].wf;
        let spec = Rc::clone(&self.workflows[wf].spec);
        let placement = self.workflows[wf].placement.clone();

        // Externally supplied inputs materialize with the trigger: empty
        // payloads in each consumer's local store (central store under the
        // central baseline).
        for (k, _) in spec.keys().iter().enumerate() {
            if !spec.is_external(k) {
                continue;
            }
            let id = DataId { exec, key: k as u32 };
            let entry = StoreEntry {
                bytes: Rc::new(Vec::new()),
                hash: fnv1a(&[]),
                complete: true,
                progress: 0,
            };
            match self.cfg.store {
                StoreKind::Central => {
                    self.central.insert(id, entry.bytes);
                }
                StoreKind::DStore => {
                    let consumers: BTreeSet<NodeId> = (0..spec.func_count())
                        .filter(|&f| spec.input_key_ids(f).contains(&k))
                        .map(|f| placement.assignment[f])
                        .collect();
                    for node in consumers {
                        self.stores.entry(node).or_default().entries.insert(id, entry.clone());
                    }
                }
            }
        }

        if spec.func_count() == 0 {
            let st = self.execs.get_mut(&exec).unwrap();
            st.status = ExecStatus::Completed { at: t, latency_ns: t - st.t0 };
            self.record(t, MASTER_NODE, exec, TraceEvent::ExecutionCompleted { latency_ns: 0 });
            return;
        }

        match self.cfg.policy {
            Policy::Dataflow => {
                let plans = self.workflows[wf].plans.clone();
                for plan in &plans {
                    if self.cfg.prewarm_all {
                        for &f in &plan.functions {
                            let prewarm = !self.workflows[wf]
                                .view
                                .predecessors[f]
                                .is_empty();
                            self.push(t, Ev::Invoke {
                                node: plan.node,
                                exec,
                                attempt,
                                f: f as u32,
                                prewarm,
                            });
                        }
                    } else {
                        for a in &plan.local_entry_points {
                            self.push(t, Ev::Invoke {
                                node: plan.node,
                                exec,
                                attempt,
                                f: a.f as u32,
                                prewarm: a.prewarm,
                            });
                        }
                    }
                }
            }
            Policy::Controlflow => {
                let plans = self.workflows[wf].plans.clone();
                for plan in &plans {
                    for a in &plan.local_entry_points {
                        if !a.prewarm {
                            self.push(t, Ev::Invoke {
                                node: plan.node,
                                exec,
                                attempt,
                                f: a.f as u32,
                                prewarm: false,
                            });
                        }
                    }
                }
            }
            Policy::CFlow => {
                // The master fires invocation messages for the entry points.
                for &f in spec.entry_points() {
                    let node = placement.assignment[f];
                    self.push(t + self.cfg.cost.ctrl_latency_ns, Ev::Invoke {
                        node,
                        exec,
                        attempt,
                        f: f as u32,
                        prewarm: false,
                    });
                }
            }
        }
    }

    fn on_invoke(&mut self, t: u64, node: NodeId, exec: u64, attempt: u32, f: u32, prewarm: bool) {
        if !self.exec_ok(exec, attempt) || self.failed_nodes.contains(&node) {
            return;
        }
        {
            let st = &mut self.execs.get_mut(&exec).unwrap().fns[f as usize];
            if st.phase != Phase::NotInvoked {
                return; // invoke-once
            }
            st.phase = Phase::Invoked;
            st.invoked = Some(t);
        }
        let function = self.func_name(exec, f);
        self.record(t, node, exec, TraceEvent::Invoked { function, prewarm });
        self.pool_acquire(t, node, exec, attempt, f);
    }

    fn pool_acquire(&mut self, t: u64, node: NodeId, exec: u64, attempt: u32, f: u32) {
        let wf = self.execs[&exec].wf;
        let cap = self.cfg.pool_cap;
        let lifetime = self.cfg.warm_lifetime_ns;
        let cold = self.coldstart_ns(exec, f);
        let function = self.func_name(exec, f);

        let pool = self.pools.entry(node).or_default();
        pool.warm.retain(|_, rel| *rel + lifetime > t);

        if pool.warm.remove(&(wf, f)).is_some() {
            pool.busy.insert((exec, f));
            self.record(t, node, exec, TraceEvent::ContainerWarm { function, reused: true });
            self.execs.get_mut(&exec).unwrap().fns[f as usize].phase = Phase::Starting;
            self.push(t, Ev::BodyStart { node, exec, attempt, f });
        } else if pool.busy.len() + pool.warm.len() < cap as usize {
            pool.busy.insert((exec, f));
            self.record(t, node, exec, TraceEvent::ContainerWarming { function });
            self.execs.get_mut(&exec).unwrap().fns[f as usize].phase = Phase::Starting;
            self.push(t + cold, Ev::BodyStart { node, exec, attempt, f });
        } else if !pool.warm.is_empty() {
            // Reclaim the least recently released idle container.
            let victim = *pool.warm.iter().min_by_key(|((w, g), rel)| (**rel, *w, *g)).unwrap().0;
            pool.warm.remove(&victim);
            pool.busy.insert((exec, f));
            self.record(t, node, exec, TraceEvent::ContainerWarming { function });
            self.execs.get_mut(&exec).unwrap().fns[f as usize].phase = Phase::Starting;
            self.push(t + cold, Ev::BodyStart { node, exec, attempt, f });
        } else {
            pool.queue.insert((t, exec, f));
            self.record(t, node, exec, TraceEvent::InvokeQueued { function });
        }
    }

    fn pool_release(&mut self, t: u64, node: NodeId, exec: u64, f: u32) {
        let wf = self.execs[&exec].wf;
        let function = self.func_name(exec, f);
        let pool = self.pools.entry(node).or_default();
        pool.busy.remove(&(exec, f));
        pool.warm.insert((wf, f), t);
        self.record(t, node, exec, TraceEvent::SlotReleased { function });
        if let Some(&(it, qe, qf)) = self.pools[&node].queue.iter().next() {
            self.pools.get_mut(&node).unwrap().queue.remove(&(it, qe, qf));
            let qattempt = self.execs[&qe].attempt;
            self.pool_acquire(t, node, qe, qattempt, qf);
        }
        let st = self.execs.get_mut(&exec).unwrap();
        st.pending_releases -= 1;
        if st.pending_releases == 0 {
            let latency_ns = t - st.t0;
            st.status = ExecStatus::Completed { at: t, latency_ns };
            self.record(t, MASTER_NODE, exec, TraceEvent::ExecutionCompleted { latency_ns });
            self.purge_exec_data(exec);
        }
    }

    fn on_body_start(&mut self, t: u64, node: NodeId, exec: u64, attempt: u32, f: u32) {
        if !self.exec_ok(exec, attempt) {
            return;
        }
        {
            let st = &mut self.execs.get_mut(&exec).unwrap().fns[f as usize];
            st.phase = Phase::Running;
            st.started = Some(t);
        }
        let function = self.func_name(exec, f);
        self.record(t, node, exec, TraceEvent::BodyStarted { function: function.clone() });

        let wf = self.execs[&exec].wf;
        let spec = Rc::clone(&self.workflows[wf].spec);
        let inputs = spec.input_key_ids(f as usize);

        let mut pending: BTreeSet<u32> = BTreeSet::new();
        for &k in &inputs {
            let id = DataId { exec, key: k as u32 };
            match self.cfg.store {
                StoreKind::DStore => {
                    if self.stores.entry(node).or_default().has_complete(id) {
                        let hash_ok = self.verify_entry(node, id);
                        self.record(t, node, exec, TraceEvent::GetServed {
                            function: Some(function.clone()),
                            key: spec.key_name(k).to_string(),
                            local: true,
                            hash_ok,
                        });
                    } else {
                        pending.insert(k as u32);
                    }
                }
                StoreKind::Central => {
                    pending.insert(k as u32);
                }
            }
        }
        self.execs.get_mut(&exec).unwrap().fns[f as usize].pending_inputs = pending.clone();

        if pending.is_empty() {
            let compute = self.compute_ns(exec, f);
            self.push(t + compute, Ev::ComputeDone { node, exec, attempt, f });
            return;
        }
        self.execs.get_mut(&exec).unwrap().fns[f as usize].phase = Phase::Blocked;

        // Fine-grained gather: one independent retrieval per input.
        for k in pending {
            let id = DataId { exec, key: k };
            match self.cfg.store {
                StoreKind::DStore => {
                    let store = self.stores.entry(node).or_default();
                    if let Some(infl) = store.inflight.get_mut(&id) {
                        infl.waiters.insert(Consumer::Body { f });
                    } else {
                        self.push(t + self.ctrl_latency(node, MASTER_NODE), Ev::QueryArrive {
                            id,
                            attempt,
                            node,
                            consumer: Consumer::Body { f },
                        });
                    }
                }
                StoreKind::Central => {
                    let flow = FlowKey { exec, key: k, dst: node, src: MASTER_NODE, fid: f };
                    let total = spec.key_bytes(k as KeyId);
                    let tr = self.make_transfer(
                        flow,
                        attempt,
                        total,
                        Purpose::CentralGet { consumer: Consumer::Body { f } },
                    );
                    self.transfers.insert(flow, tr);
                    self.push(
                        t + self.ctrl_latency(node, MASTER_NODE),
                        Ev::FetchArrive { flow, attempt },
                    );
                }
            }
        }
    }

    fn mark_input_ready(&mut self, t: u64, node: NodeId, exec: u64, f: u32, key: u32) {
        let Some(st) = self.execs.get_mut(&exec) else { return };
        if !st.running() {
            return;
        }
        let fr = &mut st.fns[f as usize];
        fr.pending_inputs.remove(&key);
        if fr.pending_inputs.is_empty() && fr.phase == Phase::Blocked {
            fr.phase = Phase::Running;
            let attempt = st.attempt;
            let compute = self.compute_ns(exec, f);
            self.push(t + compute, Ev::ComputeDone { node, exec, attempt, f });
        }
    }

    fn on_compute_done(&mut self, t: u64, node: NodeId, exec: u64, attempt: u32, f: u32) {
        if !self.exec_ok(exec, attempt) {
            return;
        }
        {
            let st = &mut self.execs.get_mut(&exec).unwrap().fns[f as usize];
            st.phase = Phase::Completed;
            st.completed = Some(t);
        }
        let function = self.func_name(exec, f);
        self.record(t, node, exec, TraceEvent::FunctionCompleted { function });

        let wf = self.execs[&exec].wf;
        let spec = Rc::clone(&self.workflows[wf].spec);
        let outputs = spec.output_key_ids(f as usize);

        if outputs.is_empty() {
            self.finish_function(t, node, exec, attempt, f, t);
            return;
        }
        self.execs.get_mut(&exec).unwrap().fns[f as usize].pending_puts = outputs.len() as u32;

        let exec_seed = self.cfg.seed ^ exec.wrapping_mul(0x9E3779B97F4A7C15);
        let mut copy_done = t;
        for &k in &outputs {
            let name = spec.func_name(f as usize);
            let len = spec.functions[f as usize].output_bytes as usize;
            let bytes = payload_bytes(payload_seed(exec_seed, name, spec.key_name(k)), len);
            let hash = fnv1a(&bytes);
            self.execs.get_mut(&exec).unwrap().outputs.insert(k as u32, hash);
            let id = DataId { exec, key: k as u32 };
            match self.cfg.store {
                StoreKind::DStore => {
                    copy_done += self.cfg.cost.memcpy_ns_per_byte * len as u64;
                    // Container-to-store copy: the entry lands and the slot
                    // frees only once the copy finishes.
                    self.stage_local_put(id, Rc::new(bytes), hash);
                    let flow = FlowKey { exec, key: k as u32, dst: node, src: node, fid: f };
                    let tr = Transfer {
                        attempt,
                        stages: Vec::new(),
                        total: len as u64,
                        chunk_count: 0,
                        next_chunk: 0,
                        delivered: 0,
                        purpose: Purpose::LocalPut { f },
                    };
                    self.transfers.insert(flow, tr);
                    self.push(copy_done, Ev::Installed { flow, attempt });
                }
                StoreKind::Central => {
                    let flow =
                        FlowKey { exec, key: k as u32, dst: MASTER_NODE, src: node, fid: NO_FID };
                    self.stage_central_put(id, Rc::new(bytes), hash);
                    let tr = self.make_transfer(
                        flow,
                        attempt,
                        len as u64,
                        Purpose::CentralPut { f },
                    );
                    self.transfers.insert(flow, tr);
                    self.start_transfer_chunks(t, flow, attempt);
                }
            }
        }
    }

    /// Called when a function's outputs are all durable: releases the slot
    /// and fans out the policy's completion reactions.
    fn finish_function(&mut self, t: u64, node: NodeId, exec: u64, attempt: u32, f: u32, signal: u64) {
        self.pool_release(t, node, exec, f);
        if !self.execs.contains_key(&exec) {
            return;
        }
        let wf = self.execs[&exec].wf;
        let view = Rc::clone(&self.workflows[wf].view);
        let placement = self.workflows[wf].placement.clone();
        match self.cfg.policy {
            Policy::Dataflow => {
                let mut targets: BTreeSet<usize> = BTreeSet::new();
                for &s in &view.successors[f as usize] {
                    for &g in &view.successors[s] {
                        targets.insert(g);
                    }
                }
                for g in targets {
                    let owner = placement.assignment[g];
                    self.push(t + self.ctrl_latency(node, owner), Ev::Invoke {
                        node: owner,
                        exec,
                        attempt,
                        f: g as u32,
                        prewarm: true,
                    });
                }
            }
            Policy::Controlflow => {
                let owners: BTreeSet<NodeId> = view.successors[f as usize]
                    .iter()
                    .map(|&s| placement.assignment[s])
                    .collect();
                for owner in owners {
                    self.push(signal + self.ctrl_latency(node, owner), Ev::CompleteNotify {
                        owner,
                        exec,
                        attempt,
                        f,
                    });
                }
            }
            Policy::CFlow => {
                if !view.successors[f as usize].is_empty() {
                    self.push(
                        signal + self.ctrl_latency(node, MASTER_NODE),
                        Ev::CompleteNotify { owner: MASTER_NODE, exec, attempt, f },
                    );
                }
            }
        }
    }

    fn on_complete_notify(&mut self, t: u64, owner: NodeId, exec: u64, attempt: u32, f: u32) {
        if !self.exec_ok(exec, attempt) {
            return;
        }
        let wf = self.execs[&exec].wf;
        let view = Rc::clone(&self.workflows[wf].view);
        let placement = self.workflows[wf].placement.clone();
        for &s in &view.successors[f as usize] {
            let target = placement.assignment[s];
            match self.cfg.policy {
                Policy::Controlflow => {
                    if target != owner {
                        continue;
                    }
                    let fr = &mut self.execs.get_mut(&exec).unwrap().fns[s];
                    fr.pending_preds -= 1;
                    if fr.pending_preds == 0 {
                        self.push(t, Ev::Invoke {
                            node: target,
                            exec,
                            attempt,
                            f: s as u32,
                            prewarm: false,
                        });
                    }
                }
                Policy::CFlow => {
                    let fr = &mut self.execs.get_mut(&exec).unwrap().fns[s];
                    fr.pending_preds -= 1;
                    if fr.pending_preds == 0 {
                        self.push(t + self.cfg.cost.ctrl_latency_ns, Ev::Invoke {
                            node: target,
                            exec,
                            attempt,
                            f: s as u32,
                            prewarm: false,
                        });
                    }
                }
                Policy::Dataflow => unreachable!("dataflow sends no join notifications"),
            }
        }
    }

    // -- directory -----------------------------------------------------------

    fn on_query_arrive(&mut self, t: u64, id: DataId, attempt: u32, node: NodeId, consumer: Consumer) {
        if !self.exec_ok(id.exec, attempt) {
            return;
        }
        if let Some((source, _size)) = self.directory.choose_and_increment(id) {
            let key = self.key_name(id);
            self.record(t, MASTER_NODE, id.exec, TraceEvent::MetaQueried {
                key,
                source: trace_node(source),
            });
            self.push(t + self.ctrl_latency(MASTER_NODE, node), Ev::MetaReply {
                id,
                attempt,
                node,
                consumer,
                source,
            });
        } else {
            let key = self.key_name(id);
            self.record(t, MASTER_NODE, id.exec, TraceEvent::MetaParked { key: key.clone() });
            if let Consumer::Body { f } = consumer {
                let function = self.func_name(id.exec, f);
                self.record(t, node, id.exec, TraceEvent::InputBlocked { function, key });
            }
            self.directory.waiters.entry(id).or_default().insert(Waiter { node, consumer });
        }
    }

    fn on_meta_visible(&mut self, t: u64, id: DataId, attempt: u32, node: NodeId) {
        if !self.exec_ok(id.exec, attempt) {
            return;
        }
        let size = self
            .stores
            .get(&node)
            .and_then(|s| s.entries.get(&id))
            .map(|e| e.bytes.len() as u64)
            .unwrap_or(0);
        let created = !self.directory.recs.contains_key(&id);
        let rec = self.directory.recs.entry(id).or_insert_with(DirRec::default);
        rec.size = rec.size.max(size);
        rec.locations.entry(node).or_insert(0);
        let count = rec.locations.len() as u32;
        let key = self.key_name(id);
        self.record(t, MASTER_NODE, id.exec, TraceEvent::MetaRegistered {
            key: key.clone(),
            location: trace_node(node),
            locations: count,
        });
        if !created {
            return;
        }
        // First registration wakes every parked waiter, each choosing (and
        // charging) its own source in deterministic waiter order.
        let Some(waiters) = self.directory.waiters.remove(&id) else { return };
        for w in waiters {
            let (source, _sz) = self.directory.choose_and_increment(id).expect("just created");
            if let Consumer::Body { f } = w.consumer {
                let function = self.func_name(id.exec, f);
                self.record(t, w.node, id.exec, TraceEvent::InputWake {
                    function,
                    key: key.clone(),
                });
            }
            self.push(t + self.ctrl_latency(MASTER_NODE, w.node), Ev::MetaReply {
                id,
                attempt,
                node: w.node,
                consumer: w.consumer,
                source,
            });
        }
    }

    fn on_meta_reply(
        &mut self,
        t: u64,
        id: DataId,
        attempt: u32,
        node: NodeId,
        consumer: Consumer,
        source: NodeId,
    ) {
        if !self.exec_ok(id.exec, attempt) {
            return;
        }
        if let Consumer::Probe { tag } = consumer {
            self.raw_results.insert(tag, RawGetStatus::SourceChosen { node: source, at: t });
            return;
        }
        let store = self.stores.entry(node).or_default();
        if store.has_complete(id) || source == node {
            self.serve_from_local(t, node, id, consumer);
            return;
        }
        if let Some(infl) = store.inflight.get_mut(&id) {
            infl.waiters.insert(consumer);
            if !self.failed_nodes.contains(&infl.src) {
                return;
            }
            // The chosen source died mid-flight; restart from the new one.
            let old_src = infl.src;
            infl.src = source;
            let old_flow =
                FlowKey { exec: id.exec, key: id.key, dst: node, src: old_src, fid: NO_FID };
            self.transfers.remove(&old_flow);
        } else {
            store.inflight.insert(id, Inflight {
                src: source,
                waiters: BTreeSet::from([consumer]),
                retries: 0,
            });
        }
        let size = self.directory.recs.get(&id).map(|r| r.size).unwrap_or(0);
        let key = self.key_name(id);
        self.record(t, node, id.exec, TraceEvent::TransferStarted {
            key,
            src: trace_node(source),
            dst: trace_node(node),
            bytes: size,
        });
        let flow = FlowKey { exec: id.exec, key: id.key, dst: node, src: source, fid: NO_FID };
        let tr = self.make_transfer(flow, attempt, size, Purpose::Fetch);
        self.transfers.insert(flow, tr);
        self.push(t + self.ctrl_latency(node, source), Ev::FetchArrive { flow, attempt });
    }

    // -- transfers -----------------------------------------------------------

    fn make_transfer(&self, flow: FlowKey, attempt: u32, total: u64, purpose: Purpose) -> Transfer {
        let stages = self.shaper.stages(flow.src, flow.dst);
        let chunk_count = if total == 0 {
            0
        } else {
            total.div_ceil(self.cfg.chunk_bytes) as u32
        };
        Transfer { attempt, stages, total, chunk_count, next_chunk: 0, delivered: 0, purpose }
    }

    fn start_transfer_chunks(&mut self, t: u64, flow: FlowKey, attempt: u32) {
        let tr = &self.transfers[&flow];
        if tr.stages.is_empty() || tr.chunk_count == 0 {
            self.push(t, Ev::Installed { flow, attempt });
            return;
        }
        let first = tr.stages[0];
        let bytes = self.chunk_len(&flow, 0);
        self.transfers.get_mut(&flow).unwrap().next_chunk = 1;
        let at = self.shaper.enqueue(t, first, flow, 0, bytes);
        self.push(at, Ev::Dispatch { scope: first });
    }

    fn chunk_len(&self, flow: &FlowKey, chunk: u32) -> u64 {
        let tr = &self.transfers[flow];
        if chunk + 1 == tr.chunk_count {
            tr.total - chunk as u64 * self.cfg.chunk_bytes
        } else {
            self.cfg.chunk_bytes
        }
    }

    fn on_fetch_arrive(&mut self, t: u64, flow: FlowKey, attempt: u32) {
        if !self.exec_ok(flow.exec, attempt) || !self.transfers.contains_key(&flow) {
            return;
        }
        let id = DataId { exec: flow.exec, key: flow.key };
        let purpose = self.transfers[&flow].purpose;
        match purpose {
            Purpose::Fetch => {
                let src_alive = !self.failed_nodes.contains(&flow.src);
                let has = self
                    .stores
                    .get(&flow.src)
                    .map(|s| s.has_complete(id))
                    .unwrap_or(false);
                if !src_alive || !has {
                    self.handle_source_gone(t, flow, attempt, "source lost datum");
                    return;
                }
            }
            Purpose::CentralGet { consumer } => {
                if !self.central.contains_key(&id) && self.transfers[&flow].total > 0 {
                    // Under controlflow semantics data precedes invocation;
                    // reaching here is a scheduler bug.
                    let key = self.key_name(id);
                    self.record(t, MASTER_NODE, id.exec, TraceEvent::Warning {
                        message: format!("missing central datum `{key}`"),
                    });
                    self.fail_consumer(t, flow.dst, id, consumer, "missing central datum");
                    self.transfers.remove(&flow);
                    return;
                }
            }
            Purpose::CentralPut { .. } | Purpose::LocalPut { .. } => {}
        }
        self.start_transfer_chunks(t, flow, attempt);
    }

    fn handle_source_gone(&mut self, t: u64, flow: FlowKey, attempt: u32, why: &str) {
        let id = DataId { exec: flow.exec, key: flow.key };
        let key = self.key_name(id);
        self.record(t, flow.dst, id.exec, TraceEvent::TransferAborted {
            key,
            src: trace_node(flow.src),
            dst: trace_node(flow.dst),
            reason: why.to_string(),
        });
        self.transfers.remove(&flow);
        self.shaper.drop_flows(|k| *k == flow);
        let Some(store) = self.stores.get_mut(&flow.dst) else { return };
        let Some(infl) = store.inflight.get_mut(&id) else { return };
        infl.retries += 1;
        if infl.retries <= FETCH_RETRY_LIMIT {
            let consumer = *infl.waiters.iter().next().expect("inflight has a waiter");
            self.push(
                t + self.ctrl_latency(flow.dst, MASTER_NODE),
                Ev::QueryArrive { id, attempt, node: flow.dst, consumer },
            );
        } else {
            let waiters = store.inflight.remove(&id).unwrap().waiters;
            for w in waiters {
                self.fail_consumer(t, flow.dst, id, w, "fetch retries exhausted");
            }
        }
    }

    fn fail_consumer(&mut self, t: u64, node: NodeId, id: DataId, consumer: Consumer, why: &str) {
        match consumer {
            Consumer::Raw { tag } | Consumer::Probe { tag } => {
                self.raw_results.insert(tag, RawGetStatus::Failed { reason: why.to_string() });
            }
            Consumer::Body { .. } => {
                if id.exec != 0 {
                    self.abort_execution(t, id.exec, ExecStatus::Failed { reason: why.to_string() });
                    self.record(t, node, id.exec, TraceEvent::ExecutionFailed {
                        reason: why.to_string(),
                    });
                }
            }
        }
    }

    fn on_chunk_stage(&mut self, t: u64, flow: FlowKey, attempt: u32, stage: u32, chunk: u32, bytes: u64) {
        if !self.exec_ok(flow.exec, attempt) || !self.transfers.contains_key(&flow) {
            return;
        }
        let (stages, chunk_count, next_chunk) = {
            let tr = &self.transfers[&flow];
            (tr.stages.clone(), tr.chunk_count, tr.next_chunk)
        };
        if stage == 0 && next_chunk < chunk_count {
            let nb = self.chunk_len(&flow, next_chunk);
            self.transfers.get_mut(&flow).unwrap().next_chunk += 1;
            let at = self.shaper.enqueue(t, stages[0], flow, next_chunk, nb);
            self.push(at, Ev::Dispatch { scope: stages[0] });
        }
        if (stage as usize + 1) < stages.len() {
            let next = stages[stage as usize + 1];
            let at = self.shaper.enqueue(t, next, flow, chunk, bytes);
            self.push(at, Ev::Dispatch { scope: next });
        } else {
            let tr = self.transfers.get_mut(&flow).unwrap();
            tr.delivered += bytes;
            let done = tr.delivered >= tr.total;
            if self.cfg.track_partial_entries {
                if let Purpose::Fetch = tr.purpose {
                    let id = DataId { exec: flow.exec, key: flow.key };
                    let e = self.stores.entry(flow.dst).or_default().entries.entry(id).or_insert(
                        StoreEntry {
                            bytes: Rc::new(Vec::new()),
                            hash: 0,
                            complete: false,
                            progress: 0,
                        },
                    );
                    if !e.complete {
                        e.progress += bytes;
                    }
                }
            }
            if done {
                self.push(t, Ev::Installed { flow, attempt });
            }
        }
    }

    fn on_dispatch(&mut self, t: u64, scope: ScopeId) {
        match self.shaper.dispatch(t, scope) {
            Dispatched::Idle => {}
            Dispatched::Busy(at) => self.push(at, Ev::Dispatch { scope }),
            Dispatched::Serve { flow, chunk, bytes, done_at, more } => {
                if let Some(tr) = self.transfers.get(&flow) {
                    let stage = tr.stages.iter().position(|&s| s == scope).unwrap() as u32;
                    let attempt = tr.attempt;
                    self.push(done_at, Ev::ChunkStage { flow, attempt, stage, chunk, bytes });
                }
                if more {
                    self.push(done_at, Ev::Dispatch { scope });
                }
            }
        }
    }

    fn on_installed(&mut self, t: u64, flow: FlowKey, attempt: u32) {
        if !self.exec_ok(flow.exec, attempt) {
            return;
        }
        let Some(tr) = self.transfers.remove(&flow) else { return };
        let id = DataId { exec: flow.exec, key: flow.key };
        let key = self.key_name(id);
        match tr.purpose {
            Purpose::LocalPut { f } => {
                let (bytes_len, hash) = self.commit_staged_local(t, flow.dst, id);
                self.record(t, flow.dst, id.exec, TraceEvent::PutCompleted {
                    function: Some(self.func_name(id.exec, f)),
                    key,
                    bytes: bytes_len,
                    hash,
                });
                let vis = t + self.ctrl_latency(flow.dst, MASTER_NODE) + self.cfg.cost.meta_write_ns;
                self.push(vis, Ev::MetaVisible { id, attempt, node: flow.dst });
                let fr = &mut self.execs.get_mut(&id.exec).unwrap().fns[f as usize];
                fr.pending_puts -= 1;
                if fr.pending_puts == 0 {
                    let signal =
                        t + self.ctrl_latency(flow.dst, MASTER_NODE) + self.cfg.cost.meta_write_ns;
                    self.finish_function(t, flow.dst, id.exec, attempt, f, signal);
                }
            }
            Purpose::Fetch => {
                let src_entry = self
                    .stores
                    .get(&flow.src)
                    .and_then(|s| s.entries.get(&id))
                    .cloned();
                let Some(src_entry) = src_entry else {
                    self.handle_source_gone(t, flow, attempt, "source lost datum");
                    return;
                };
                *self.bytes_by_link.entry((flow.src, flow.dst)).or_insert(0) += tr.total;
                self.record(t, flow.dst, id.exec, TraceEvent::TransferCompleted {
                    key: key.clone(),
                    src: trace_node(flow.src),
                    dst: trace_node(flow.dst),
                    bytes: tr.total,
                });
                let store = self.stores.entry(flow.dst).or_default();
                store.used_bytes += src_entry.bytes.len() as u64;
                store.entries.insert(id, StoreEntry {
                    bytes: Rc::clone(&src_entry.bytes),
                    hash: src_entry.hash,
                    complete: true,
                    progress: src_entry.bytes.len() as u64,
                });
                let over_capacity = self
                    .cfg
                    .store_capacity
                    .map(|cap| self.stores[&flow.dst].used_bytes > cap)
                    .unwrap_or(false);
                if over_capacity {
                    self.record(t, flow.dst, id.exec, TraceEvent::Warning {
                        message: "store capacity exceeded".into(),
                    });
                }
                let waiters = self
                    .stores
                    .get_mut(&flow.dst)
                    .unwrap()
                    .inflight
                    .remove(&id)
                    .map(|i| i.waiters)
                    .unwrap_or_default();
                for w in waiters {
                    self.serve_from_local(t, flow.dst, id, w);
                }
                let vis = t + self.ctrl_latency(flow.dst, MASTER_NODE) + self.cfg.cost.meta_write_ns;
                self.push(vis, Ev::MetaVisible { id, attempt, node: flow.dst });
            }
            Purpose::CentralPut { f } => {
                *self.bytes_by_link.entry((flow.src, flow.dst)).or_insert(0) += tr.total;
                self.record(t, MASTER_NODE, id.exec, TraceEvent::TransferCompleted {
                    key: key.clone(),
                    src: trace_node(flow.src),
                    dst: trace_node(flow.dst),
                    bytes: tr.total,
                });
                let (bytes_len, hash) = self.commit_staged_central(id);
                self.record(t, MASTER_NODE, id.exec, TraceEvent::PutCompleted {
                    function: Some(self.func_name(id.exec, f)),
                    key,
                    bytes: bytes_len,
                    hash,
                });
                let fr = &mut self.execs.get_mut(&id.exec).unwrap().fns[f as usize];
                fr.pending_puts -= 1;
                if fr.pending_puts == 0 {
                    let signal = t + self.ctrl_latency(MASTER_NODE, flow.src);
                    self.finish_function(t, flow.src, id.exec, attempt, f, signal);
                }
            }
            Purpose::CentralGet { consumer } => {
                *self.bytes_by_link.entry((flow.src, flow.dst)).or_insert(0) += tr.total;
                self.record(t, flow.dst, id.exec, TraceEvent::TransferCompleted {
                    key: key.clone(),
                    src: trace_node(flow.src),
                    dst: trace_node(flow.dst),
                    bytes: tr.total,
                });
                let buf = self.central.get(&id).cloned().unwrap_or_else(|| Rc::new(Vec::new()));
                match consumer {
                    Consumer::Body { f } => {
                        self.record(t, flow.dst, id.exec, TraceEvent::GetServed {
                            function: Some(self.func_name(id.exec, f)),
                            key,
                            local: false,
                            hash_ok: true,
                        });
                        let _ = buf;
                        self.mark_input_ready(t, flow.dst, id.exec, f, id.key);
                    }
                    Consumer::Raw { tag } => {
                        self.raw_results.insert(tag, RawGetStatus::Served {
                            bytes: (*buf).clone(),
                            local: false,
                            at: t,
                        });
                    }
                    Consumer::Probe { tag } => {
                        self.raw_results
                            .insert(tag, RawGetStatus::SourceChosen { node: flow.src, at: t });
                    }
                }
            }
        }
    }

    fn serve_from_local(&mut self, t: u64, node: NodeId, id: DataId, consumer: Consumer) {
        let entry = self.stores.get(&node).and_then(|s| s.entries.get(&id)).cloned();
        let Some(entry) = entry else {
            // Metadata said the datum is here but it is not; re-query.
            self.record(t, node, id.exec, TraceEvent::Warning {
                message: format!("local serve miss for `{}`", self.key_name(id)),
            });
            let attempt = if id.exec == 0 { 0 } else { self.execs[&id.exec].attempt };
            self.push(
                t + self.ctrl_latency(node, MASTER_NODE),
                Ev::QueryArrive { id, attempt, node, consumer },
            );
            return;
        };
        let hash_ok = fnv1a(&entry.bytes) == entry.hash;
        match consumer {
            Consumer::Body { f } => {
                let key = self.key_name(id);
                self.record(t, node, id.exec, TraceEvent::GetServed {
                    function: Some(self.func_name(id.exec, f)),
                    key,
                    local: true,
                    hash_ok,
                });
                self.mark_input_ready(t, node, id.exec, f, id.key);
            }
            Consumer::Raw { tag } => {
                self.raw_results.insert(tag, RawGetStatus::Served {
                    bytes: (*entry.bytes).clone(),
                    local: true,
                    at: t,
                });
            }
            Consumer::Probe { tag } => {
                self.raw_results.insert(tag, RawGetStatus::SourceChosen { node, at: t });
            }
        }
    }

    // -- staged put buffers --------------------------------------------------
    //
    // Payload bytes are generated at ComputeDone but only become store
    // entries once the copy/transfer completes; in between they sit staged.

    fn stage_local_put(&mut self, id: DataId, bytes: super::state::Buffer, hash: u64) {
        self.directory.staged.insert(id, (bytes, hash));
    }

    fn commit_staged_local(&mut self, t: u64, node: NodeId, id: DataId) -> (u64, u64) {
        let (bytes, hash) = self.directory.staged.remove(&id).expect("staged put");
        let len = bytes.len() as u64;
        let store = self.stores.entry(node).or_default();
        store.used_bytes += len;
        store.entries.insert(id, StoreEntry { bytes, hash, complete: true, progress: len });
        if let Some(cap) = self.cfg.store_capacity {
            if self.stores[&node].used_bytes > cap {
                self.record(t, node, id.exec, TraceEvent::Warning {
                    message: "store capacity exceeded".into(),
                });
            }
        }
        (len, hash)
    }

    fn stage_central_put(&mut self, id: DataId, bytes: super::state::Buffer, hash: u64) {
        self.directory.staged.insert(id, (bytes, hash));
    }

    fn commit_staged_central(&mut self, id: DataId) -> (u64, u64) {
        let (bytes, hash) = self.directory.staged.remove(&id).expect("staged put");
        let len = bytes.len() as u64;
        self.central.insert(id, bytes);
        (len, hash)
    }

    fn verify_entry(&self, node: NodeId, id: DataId) -> bool {
        self.stores
            .get(&node)
            .and_then(|s| s.entries.get(&id))
            .map(|e| fnv1a(&e.bytes) == e.hash)
            .unwrap_or(false)
    }

    // -- raw harness ----------------------------------------------------------

    fn on_raw_put(&mut self, t: u64, node: NodeId, key: u32) {
        let id = DataId { exec: 0, key };
        let Some(bytes) = self.directory.raw_payloads.remove(&id) else { return };
        let hash = fnv1a(&bytes);
        let duplicate = self.directory.recs.contains_key(&id)
            || self.stores.get(&node).map(|s| s.entries.contains_key(&id)).unwrap_or(false)
            || self.central.contains_key(&id);
        if duplicate {
            self.record(t, node, 0, TraceEvent::Warning {
                message: format!("duplicate put of `{}` rejected", self.raw_keys[key as usize]),
            });
            return;
        }
        let len = bytes.len() as u64;
        match self.cfg.store {
            StoreKind::Central => {
                self.central.insert(id, bytes);
                self.record(t, MASTER_NODE, 0, TraceEvent::PutCompleted {
                    function: None,
                    key: self.raw_keys[key as usize].clone(),
                    bytes: len,
                    hash,
                });
            }
            StoreKind::DStore => {
                let store = self.stores.entry(node).or_default();
                store.used_bytes += len;
                store.entries.insert(id, StoreEntry {
                    bytes,
                    hash,
                    complete: true,
                    progress: len,
                });
                self.record(t, node, 0, TraceEvent::PutCompleted {
                    function: None,
                    key: self.raw_keys[key as usize].clone(),
                    bytes: len,
                    hash,
                });
                let vis = t + self.ctrl_latency(node, MASTER_NODE) + self.cfg.cost.meta_write_ns;
                self.push(vis, Ev::MetaVisible { id, attempt: 0, node });
            }
        }
    }

    fn on_raw_get(&mut self, t: u64, node: NodeId, key: u32, tag: u64) {
        let id = DataId { exec: 0, key };
        match self.cfg.store {
            StoreKind::Central => {
                let flow = FlowKey {
                    exec: 0,
                    key,
                    dst: node,
                    src: MASTER_NODE,
                    fid: (tag & 0xffff_ffff) as u32,
                };
                let total = self.central.get(&id).map(|b| b.len() as u64).unwrap_or(0);
                let tr = self.make_transfer(flow, 0, total, Purpose::CentralGet {
                    consumer: Consumer::Raw { tag },
                });
                self.transfers.insert(flow, tr);
                self.push(
                    t + self.ctrl_latency(node, MASTER_NODE),
                    Ev::FetchArrive { flow, attempt: 0 },
                );
            }
            StoreKind::DStore => {
                if self.stores.entry(node).or_default().has_complete(id) {
                    self.serve_from_local(t, node, id, Consumer::Raw { tag });
                    return;
                }
                let store = self.stores.entry(node).or_default();
                if let Some(infl) = store.inflight.get_mut(&id) {
                    infl.waiters.insert(Consumer::Raw { tag });
                } else {
                    self.push(t + self.ctrl_latency(node, MASTER_NODE), Ev::QueryArrive {
                        id,
                        attempt: 0,
                        node,
                        consumer: Consumer::Raw { tag },
                    });
                }
            }
        }
    }

    // -- faults, bandwidth, timeout -------------------------------------------

    fn on_set_bandwidth(&mut self, t: u64, scope: super::BandwidthScope, rate: Option<u64>) {
        if !self.cfg.scope_is_known(scope) {
            self.record(t, MASTER_NODE, 0, TraceEvent::Warning {
                message: format!("bandwidth change for unknown scope {scope:?} ignored"),
            });
            return;
        }
        for s in self.cfg.expand_scope(scope) {
            self.shaper.set_rate(s, rate);
            self.record(t, MASTER_NODE, 0, TraceEvent::BandwidthChanged {
                scope: s.describe(),
                rate,
            });
        }
    }

    fn on_node_fail(&mut self, t: u64, node: NodeId) {
        if self.failed_nodes.contains(&node) || node >= self.cfg.node_count {
            return;
        }
        self.failed_nodes.insert(node);
        self.record(t, node, 0, TraceEvent::NodeFailed);
        self.pools.remove(&node);
        self.stores.remove(&node);

        // Abort transfers touching the node; fetches into live nodes retry.
        let dead: Vec<FlowKey> = self
            .transfers
            .keys()
            .copied()
            .filter(|k| k.src == node || k.dst == node)
            .collect();
        for flow in dead {
            self.shaper.drop_flows(|k| *k == flow);
            let tr = &self.transfers[&flow];
            let attempt = tr.attempt;
            let is_fetch = matches!(tr.purpose, Purpose::Fetch);
            if is_fetch && flow.dst != node {
                self.handle_source_gone(t, flow, attempt, "source node failed");
            } else {
                self.transfers.remove(&flow);
            }
        }

        // Directory forgets replicas on the failed node.
        let mut emptied = Vec::new();
        for (id, rec) in self.directory.recs.iter_mut() {
            rec.locations.remove(&node);
            if rec.locations.is_empty() {
                emptied.push(*id);
            }
        }
        for id in emptied {
            self.directory.recs.remove(&id);
        }

        // Repartition workflows placed on the failed node and restart their
        // running executions from scratch.
        let survivors: Vec<NodeId> =
            (0..self.cfg.node_count).filter(|n| !self.failed_nodes.contains(n)).collect();
        let mut affected_wfs = Vec::new();
        for (wi, entry) in self.workflows.iter().enumerate() {
            if entry.placement.assignment.contains(&node) {
                affected_wfs.push(wi);
            }
        }
        for wi in &affected_wfs {
            let entry = &self.workflows[*wi];
            let Ok(placement) = partition::repartition_and_restart(
                &entry.spec,
                &entry.view,
                &survivors,
                entry.strategy,
            ) else {
                continue; // no survivors; running execs will time out
            };
            let plans = partition::compute_node_plans(&entry.spec, &entry.view, &placement);
            let entry = &mut self.workflows[*wi];
            entry.placement = placement;
            entry.plans = plans;
        }

        let to_restart: Vec<u64> = self
            .execs
            .iter()
            .filter(|(_, st)| st.running() && affected_wfs.contains(&st.wf))
            .map(|(&e, _)| e)
            .collect();
        for exec in to_restart {
            let purged = self.purge_exec_data(exec);
            self.record(t, MASTER_NODE, exec, TraceEvent::DirectoryPurged { records: purged });
            // Release any slots the old attempt still holds on live nodes.
            self.release_exec_slots(t, exec);
            let wf = self.execs[&exec].wf;
            let view = Rc::clone(&self.workflows[wf].view);
            let st = self.execs.get_mut(&exec).unwrap();
            st.reset_for_attempt(&view);
            let attempt = st.attempt;
            self.record(t, MASTER_NODE, exec, TraceEvent::RestartTriggered { attempt });
            self.push(t, Ev::Arrival { exec, attempt });
        }
    }

    fn on_timeout(&mut self, t: u64, exec: u64) {
        let Some(st) = self.execs.get(&exec) else { return };
        if !st.running() {
            return;
        }
        self.record(t, MASTER_NODE, exec, TraceEvent::ExecutionTimeout);
        self.abort_execution(t, exec, ExecStatus::TimedOut);
    }

    fn abort_execution(&mut self, t: u64, exec: u64, status: ExecStatus) {
        {
            let st = self.execs.get_mut(&exec).unwrap();
            if !st.running() {
                return;
            }
            st.status = status;
        }
        self.release_exec_slots(t, exec);
        self.purge_exec_data(exec);
    }

    /// Free queue entries and busy slots held by an execution. Aborted
    /// containers are killed, not parked warm.
    fn release_exec_slots(&mut self, t: u64, exec: u64) {
        let nodes: Vec<NodeId> = self.pools.keys().copied().collect();
        for node in nodes {
            let pool = self.pools.get_mut(&node).unwrap();
            pool.queue.retain(|&(_, e, _)| e != exec);
            let dead: Vec<(u64, u32)> =
                pool.busy.iter().copied().filter(|&(e, _)| e == exec).collect();
            let freed = dead.len();
            for b in dead {
                pool.busy.remove(&b);
            }
            for _ in 0..freed {
                let Some(&(it, qe, qf)) = self.pools[&node].queue.iter().next() else { break };
                self.pools.get_mut(&node).unwrap().queue.remove(&(it, qe, qf));
                let qattempt = self.execs[&qe].attempt;
                self.pool_acquire(t, node, qe, qattempt, qf);
            }
        }
    }

    /// Drop every datum, metadata record, parked waiter and transfer of an
    /// execution. Returns the number of directory records removed.
    fn purge_exec_data(&mut self, exec: u64) -> u32 {
        for store in self.stores.values_mut() {
            let freed: u64 = store
                .entries
                .iter()
                .filter(|(id, _)| id.exec == exec)
                .map(|(_, e)| e.bytes.len() as u64)
                .sum();
            store.used_bytes = store.used_bytes.saturating_sub(freed);
            store.entries.retain(|id, _| id.exec != exec);
            store.inflight.retain(|id, _| id.exec != exec);
        }
        self.central.retain(|id, _| id.exec != exec);
        let before = self.directory.recs.len();
        self.directory.recs.retain(|id, _| id.exec != exec);
        let purged = (before - self.directory.recs.len()) as u32;
        self.directory.waiters.retain(|id, _| id.exec != exec);
        self.directory.staged.retain(|id, _| id.exec != exec);
        self.transfers.retain(|k, _| k.exec != exec);
        self.shaper.drop_flows(|k| k.exec == exec);
        purged
    }
}
