//! Deterministic execution of combining phases: a scripted single-schedule
//! driver and an exhaustive scheduler for small configurations.
//!
//! Both run the exact step machines and combiner preparation routines of the
//! concurrent heap, so their verdicts transfer to the threaded
//! implementation. The exhaustive scheduler enumerates, by depth-first
//! search with state deduplication, every interleaving of the client
//! machines within one combining phase and checks each terminal state
//! against the multiset oracle, the quiescence walk, and the instrumentation
//! bounds. A violation is reported with the schedule that produced it, as a
//! list of machine indices that can be replayed.

use std::collections::HashSet;
use std::fmt;
use std::hash::Hash;

use crate::combining::Status;
use crate::heap::client::{InsertDescent, SiftDown, Step};
use crate::heap::combiner::level_chunks;
use crate::heap::state::HeapState;
use crate::heap::{InsertSet, Op, PqRequest};
use crate::verify::{
    check_bounds, check_phase, MultisetOracle, OpRecord, PhaseLog, PhaseRecord,
};
use crate::Value;

/// Bounds accepted by [`simulate_schedules`].
pub const MAX_SIM_HEAP: usize = 15;
pub const MAX_SIM_CLIENTS: usize = 3;

/// One phase to explore exhaustively.
#[derive(Debug, Clone)]
pub struct SimConfig<T> {
    /// Initial heap contents (inserted sequentially before the phase).
    pub initial: Vec<T>,
    /// The batch, in publication order.
    pub batch: Vec<Op<T>>,
}

#[derive(Debug, Clone, Default)]
pub struct SimReport {
    /// Distinct scheduler states expanded.
    pub states: u64,
    /// Terminal states reached (counted per arriving path).
    pub terminal_hits: u64,
}

/// A failed interleaving, with the replayable schedule that produced it.
#[derive(Debug, Clone)]
pub struct SimViolation {
    pub detail: String,
    pub schedule: Vec<usize>,
}

impl fmt::Display for SimViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} under schedule {:?}", self.detail, self.schedule)
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
enum Machine<T> {
    Sift(SiftDown),
    Insert(InsertDescent<T>),
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Slot<T> {
    req: usize,
    machine: Machine<T>,
    done: bool,
}

impl<T: Value> Slot<T> {
    fn sift(req: usize, start: usize) -> Self {
        Slot {
            req,
            machine: Machine::Sift(SiftDown::new(start)),
            done: false,
        }
    }

    fn insert(req: usize, start: usize) -> Self {
        Slot {
            req,
            machine: Machine::Insert(InsertDescent::new(start)),
            done: false,
        }
    }

    /// One machine step; on completion, records counters and finishes the
    /// request exactly like the concurrent client driver.
    unsafe fn step(&mut self, heap: &HeapState<T>, reqs: &[Box<PqRequest<T>>]) -> Step {
        debug_assert!(!self.done);
        let out = match &mut self.machine {
            Machine::Sift(m) => m.step(heap),
            Machine::Insert(m) => m.step(heap),
        };
        if out == Step::Done {
            self.done = true;
            let req = &reqs[self.req];
            match &self.machine {
                Machine::Sift(m) => req.force_counters(m.iters, 0),
                Machine::Insert(m) => req.force_counters(m.iters, m.moves),
            }
            req.advance(Status::Finished);
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
enum Stage {
    Extract,
    InsertChunk(usize),
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct NodeSnap<T> {
    val: T,
    locked: bool,
    split: Option<InsertSet<T>>,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct ReqSnap<T> {
    status: u8,
    res: Option<Option<T>>,
    start: usize,
    leaf: (usize, usize),
    iters: u64,
    moves: u64,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Snapshot<T> {
    m: usize,
    bounds: (usize, usize),
    nodes: Vec<NodeSnap<T>>,
    reqs: Vec<ReqSnap<T>>,
}

struct World<T: Value> {
    heap: HeapState<T>,
    reqs: Vec<Box<PqRequest<T>>>,
    initial: Vec<T>,
    extract_idx: Vec<usize>,
    insert_idx: Vec<usize>,
    /// Unpaired insert request indices, set after extract preparation.
    remaining: Vec<usize>,
    chunks: Vec<usize>,
    /// Node slots the phase can touch; fixed up front.
    capacity: usize,
    /// Extract responses in preparation order.
    responses: Vec<T>,
}

impl<T: Value + Hash + fmt::Debug> World<T> {
    fn new(cfg: &SimConfig<T>) -> World<T> {
        let heap = HeapState::new();
        let inserts = cfg
            .batch
            .iter()
            .filter(|op| matches!(op, Op::Insert(_)))
            .count();
        let capacity = cfg.initial.len() + inserts;
        unsafe {
            heap.ensure_capacity(capacity);
            // Give every reachable slot a defined value so snapshots can
            // read the whole array; real content is written over it.
            let sentinel = cfg.initial.first().copied().or_else(|| {
                cfg.batch.iter().find_map(|op| match op {
                    Op::Insert(v) => Some(*v),
                    Op::ExtractMin => None,
                })
            });
            if let Some(s) = sentinel {
                for idx in 1..=capacity {
                    heap.node(idx).set_val(s);
                }
            }
            for &v in &cfg.initial {
                heap.seq_insert(v);
            }
        }

        let mut reqs = Vec::with_capacity(cfg.batch.len());
        let mut extract_idx = Vec::new();
        let mut insert_idx = Vec::new();
        for (i, op) in cfg.batch.iter().enumerate() {
            let req = Box::new(PqRequest::<T>::empty());
            unsafe { req.publish(*op) };
            match op {
                Op::ExtractMin => extract_idx.push(i),
                Op::Insert(_) => insert_idx.push(i),
            }
            reqs.push(req);
        }

        World {
            heap,
            reqs,
            initial: cfg.initial.clone(),
            extract_idx,
            insert_idx,
            remaining: Vec::new(),
            chunks: Vec::new(),
            capacity,
            responses: Vec::new(),
        }
    }

    fn req_refs(&self, idx: &[usize]) -> Vec<&PqRequest<T>> {
        idx.iter().map(|&i| &*self.reqs[i]).collect()
    }

    /// Run the combiner preparation that precedes client execution. Returns
    /// the initial machines, or `None` when the batch was served
    /// sequentially (nothing to schedule).
    fn prepare(&mut self) -> Option<Vec<Slot<T>>> {
        let m_pre = self.heap.len();
        if m_pre <= self.reqs.len() {
            let batch: Vec<&PqRequest<T>> = self.reqs.iter().map(|b| &**b).collect();
            unsafe { self.heap.serve_sequentially(&batch) };
            return None;
        }
        let extracts = self.req_refs(&self.extract_idx);
        let inserts = self.req_refs(&self.insert_idx);
        let (paired, responses) = unsafe { self.heap.extract_prep(&extracts, &inserts) };
        self.responses = responses;
        self.remaining = self.insert_idx[paired..].to_vec();
        self.chunks = level_chunks(self.heap.len(), self.remaining.len());
        Some(
            self.extract_idx
                .iter()
                .map(|&i| Slot::sift(i, self.reqs[i].start()))
                .collect(),
        )
    }

    /// Prepare insert chunk `ci` and return its machines, or `None` past the
    /// last chunk.
    fn prepare_chunk(&self, ci: usize) -> Option<Vec<Slot<T>>> {
        if ci >= self.chunks.len() {
            return None;
        }
        let off: usize = self.chunks[..ci].iter().sum();
        let idx = &self.remaining[off..off + self.chunks[ci]];
        let sub = self.req_refs(idx);
        unsafe { self.heap.insert_subphase_prep(&sub) };
        Some(
            idx.iter()
                .map(|&i| Slot::insert(i, self.reqs[i].start()))
                .collect(),
        )
    }

    fn snapshot(&self) -> Snapshot<T> {
        let nodes = (1..=self.capacity)
            .map(|idx| {
                let node = unsafe { self.heap.node(idx) };
                NodeSnap {
                    val: unsafe { node.val() },
                    locked: node.locked(),
                    split: unsafe { node.split_clone() },
                }
            })
            .collect();
        let reqs = self
            .reqs
            .iter()
            .map(|req| ReqSnap {
                status: req.status() as u8,
                res: unsafe { req.peek_result() }.map(|r| *r),
                start: req.start(),
                leaf: req.leaf_range(),
                iters: req.iterations(),
                moves: req.split_moves(),
            })
            .collect();
        Snapshot {
            m: self.heap.len(),
            bounds: self.heap.insert_bounds(),
            nodes,
            reqs,
        }
    }

    fn restore(&self, snap: &Snapshot<T>) {
        self.heap.set_len(snap.m);
        self.heap.set_insert_bounds(snap.bounds.0, snap.bounds.1);
        for (idx, ns) in snap.nodes.iter().enumerate() {
            let node = unsafe { self.heap.node(idx + 1) };
            unsafe { node.set_val(ns.val) };
            if node.locked() != ns.locked {
                if ns.locked {
                    node.lock();
                } else {
                    node.unlock();
                }
            }
            node.take_split();
            if let Some(set) = &ns.split {
                node.deposit_split(set.clone());
            }
        }
        for (req, rs) in self.reqs.iter().zip(&snap.reqs) {
            req.force_status(match rs.status {
                0 => Status::Initial,
                1 => Status::Started,
                2 => Status::Sift,
                _ => Status::Finished,
            });
            unsafe { req.force_result(rs.res) };
            req.set_start(rs.start);
            req.set_leaf_range(rs.leaf.0, rs.leaf.1);
            req.force_counters(rs.iters, rs.moves);
        }
    }

    /// Build the phase record exactly as the concurrent recorder would.
    fn phase_record(&self) -> PhaseRecord<T> {
        let mut ops = Vec::with_capacity(self.reqs.len());
        for (&i, _) in self.extract_idx.iter().zip(0..) {
            let req = &self.reqs[i];
            ops.push(OpRecord::Extract {
                res: unsafe { req.peek_result() }.copied().flatten(),
                iters: req.iterations(),
            });
        }
        for &i in &self.insert_idx {
            let req = &self.reqs[i];
            let Op::Insert(arg) = (unsafe { *req.op() }) else {
                unreachable!()
            };
            ops.push(OpRecord::Insert {
                arg,
                iters: req.iterations(),
                moves: req.split_moves(),
            });
        }
        PhaseRecord {
            phase: 0,
            m_pre: self.initial.len(),
            ops,
        }
    }

    /// Oracle, quiescence, and bound checks on a finished phase.
    fn verify_terminal(&self) -> Result<(), String> {
        for (i, req) in self.reqs.iter().enumerate() {
            if req.status() != Status::Finished {
                return Err(format!("request {i} never finished"));
            }
        }
        if let Some(v) = unsafe { self.heap.quiescence_violation() } {
            return Err(v);
        }
        let record = self.phase_record();
        let mut oracle = MultisetOracle::from_values(self.initial.iter().copied());
        check_phase(&record, &mut oracle).map_err(|e| e.to_string())?;
        let mut got = unsafe { self.heap.values() };
        got.sort_unstable();
        let want = oracle.to_sorted_vec();
        if got != want {
            return Err(format!("final heap {got:?} differs from oracle {want:?}"));
        }
        let log = PhaseLog {
            phases: vec![record],
        };
        check_bounds(&log).map_err(|e| e.to_string())?;
        Ok(())
    }
}

/// Explore every interleaving of the client machines of one phase.
///
/// Accepts heaps of at most [`MAX_SIM_HEAP`] nodes and batches of at most
/// [`MAX_SIM_CLIENTS`] requests.
pub fn simulate_schedules<T: Value + Hash + fmt::Debug>(
    cfg: &SimConfig<T>,
) -> Result<SimReport, SimViolation> {
    assert!(
        cfg.initial.len() <= MAX_SIM_HEAP,
        "simulated heap larger than {MAX_SIM_HEAP}"
    );
    assert!(
        !cfg.batch.is_empty() && cfg.batch.len() <= MAX_SIM_CLIENTS,
        "simulated batch must hold 1..={MAX_SIM_CLIENTS} requests"
    );

    let mut world = World::new(cfg);
    let mut report = SimReport::default();
    match world.prepare() {
        None => {
            // Sequential fallback: a single deterministic execution.
            report.terminal_hits = 1;
            report.states = 1;
            world.verify_terminal().map_err(|detail| SimViolation {
                detail,
                schedule: Vec::new(),
            })?;
            Ok(report)
        }
        Some(slots) => {
            let mut visited = HashSet::new();
            let mut path = Vec::new();
            dfs(
                &world,
                slots,
                Stage::Extract,
                &mut visited,
                &mut path,
                &mut report,
            )?;
            Ok(report)
        }
    }
}

fn dfs<T: Value + Hash + fmt::Debug>(
    world: &World<T>,
    slots: Vec<Slot<T>>,
    stage: Stage,
    visited: &mut HashSet<(Snapshot<T>, Vec<Slot<T>>, Stage)>,
    path: &mut Vec<usize>,
    report: &mut SimReport,
) -> Result<(), SimViolation> {
    let mut slots = slots;
    let mut stage = stage;
    while slots.iter().all(|s| s.done) {
        let next_chunk = match stage {
            Stage::Extract => 0,
            Stage::InsertChunk(ci) => ci + 1,
        };
        match world.prepare_chunk(next_chunk) {
            Some(ms) => {
                stage = Stage::InsertChunk(next_chunk);
                slots = ms;
            }
            None => {
                report.terminal_hits += 1;
                return world.verify_terminal().map_err(|detail| SimViolation {
                    detail,
                    schedule: path.clone(),
                });
            }
        }
    }

    if !visited.insert((world.snapshot(), slots.clone(), stage)) {
        return Ok(());
    }
    report.states += 1;

    let snap = world.snapshot();
    let mut progressed = false;
    for i in 0..slots.len() {
        if slots[i].done {
            continue;
        }
        let mut next = slots.clone();
        let out = unsafe { next[i].step(&world.heap, &world.reqs) };
        if out == Step::Blocked {
            // A blocked step mutates nothing; skip this choice.
            continue;
        }
        progressed = true;
        path.push(i);
        dfs(world, next, stage, visited, path, report)?;
        path.pop();
        world.restore(&snap);
    }
    if progressed {
        Ok(())
    } else {
        Err(SimViolation {
            detail: "deadlock: every unfinished machine is blocked".to_string(),
            schedule: path.clone(),
        })
    }
}

/// Re-run one schedule produced by [`simulate_schedules`], for debugging a
/// reported violation. Returns the terminal verification verdict.
pub fn replay_schedule<T: Value + Hash + fmt::Debug>(
    cfg: &SimConfig<T>,
    schedule: &[usize],
) -> Result<(), String> {
    let mut world = World::new(cfg);
    let Some(mut slots) = world.prepare() else {
        return world.verify_terminal();
    };
    let mut stage = Stage::Extract;
    for &i in schedule {
        while slots.iter().all(|s| s.done) {
            let next_chunk = match stage {
                Stage::Extract => 0,
                Stage::InsertChunk(ci) => ci + 1,
            };
            match world.prepare_chunk(next_chunk) {
                Some(ms) => {
                    stage = Stage::InsertChunk(next_chunk);
                    slots = ms;
                }
                None => return Err("schedule runs past the end of the phase".to_string()),
            }
        }
        if i >= slots.len() || slots[i].done {
            return Err(format!("schedule step on invalid machine {i}"));
        }
        if unsafe { slots[i].step(&world.heap, &world.reqs) } == Step::Blocked {
            return Err(format!("schedule step on blocked machine {i}"));
        }
    }
    // Drain whatever the schedule left unfinished, round-robin.
    loop {
        while slots.iter().all(|s| s.done) {
            let next_chunk = match stage {
                Stage::Extract => 0,
                Stage::InsertChunk(ci) => ci + 1,
            };
            match world.prepare_chunk(next_chunk) {
                Some(ms) => {
                    stage = Stage::InsertChunk(next_chunk);
                    slots = ms;
                }
                None => return world.verify_terminal(),
            }
        }
        let mut moved = false;
        for i in 0..slots.len() {
            if !slots[i].done && unsafe { slots[i].step(&world.heap, &world.reqs) } != Step::Blocked
            {
                moved = true;
            }
        }
        if !moved {
            return Err("deadlock while draining schedule".to_string());
        }
    }
}

/// A deterministic, single-threaded priority queue that applies whole
/// batches phase by phase with the combiner and client code of the
/// concurrent heap, logging every phase.
///
/// This is the workhorse for scripted tests and for generating instrumented
/// phases in bulk.
pub struct SimQueue<T: Value> {
    heap: HeapState<T>,
    log: PhaseLog<T>,
    phase: u64,
    _not_sync: std::marker::PhantomData<std::cell::Cell<()>>,
}

impl<T: Value + fmt::Debug> SimQueue<T> {
    pub fn new() -> Self {
        SimQueue {
            heap: HeapState::new(),
            log: PhaseLog::default(),
            phase: 0,
            _not_sync: std::marker::PhantomData,
        }
    }

    pub fn from_values(values: impl IntoIterator<Item = T>) -> Self {
        let queue = Self::new();
        for v in values {
            unsafe { queue.heap.seq_insert(v) };
        }
        queue
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.len() == 0
    }

    pub fn values(&self) -> Vec<T> {
        unsafe { self.heap.values() }
    }

    pub fn check_quiescence(&self) -> Result<(), String> {
        match unsafe { self.heap.quiescence_violation() } {
            None => Ok(()),
            Some(v) => Err(v),
        }
    }

    pub fn log(&self) -> &PhaseLog<T> {
        &self.log
    }

    pub fn take_log(&mut self) -> PhaseLog<T> {
        std::mem::take(&mut self.log)
    }

    /// Apply one batch as a single combining phase; responses align with
    /// `ops` (inserts yield `None`).
    pub fn apply_phase(&mut self, ops: &[Op<T>]) -> Vec<Option<T>> {
        assert!(!ops.is_empty(), "empty batch");
        let phase = self.phase;
        self.phase += 1;
        let m_pre = self.heap.len();

        let reqs: Vec<Box<PqRequest<T>>> = ops
            .iter()
            .map(|op| {
                let req = Box::new(PqRequest::<T>::empty());
                unsafe { req.publish(*op) };
                req
            })
            .collect();
        let extracts: Vec<&PqRequest<T>> = reqs
            .iter()
            .zip(ops)
            .filter(|(_, op)| matches!(op, Op::ExtractMin))
            .map(|(r, _)| &**r)
            .collect();
        let inserts: Vec<&PqRequest<T>> = reqs
            .iter()
            .zip(ops)
            .filter(|(_, op)| matches!(op, Op::Insert(_)))
            .map(|(r, _)| &**r)
            .collect();

        let mut records = Vec::with_capacity(ops.len());
        if m_pre <= ops.len() {
            let batch: Vec<&PqRequest<T>> = reqs.iter().map(|b| &**b).collect();
            let served = unsafe { self.heap.serve_sequentially(&batch) };
            for (op, res) in served {
                records.push(match op {
                    Op::ExtractMin => OpRecord::Extract { res, iters: 0 },
                    Op::Insert(arg) => OpRecord::Insert {
                        arg,
                        iters: 0,
                        moves: 0,
                    },
                });
            }
        } else {
            let (paired, responses) = unsafe { self.heap.extract_prep(&extracts, &inserts) };
            let mut slots: Vec<Slot<T>> = extracts
                .iter()
                .enumerate()
                .map(|(i, req)| Slot::sift(i, req.start()))
                .collect();
            self.run_round_robin(&mut slots, &extracts);

            let remaining = &inserts[paired..];
            let mut offset = 0;
            for chunk in level_chunks(self.heap.len(), remaining.len()) {
                let sub = &remaining[offset..offset + chunk];
                offset += chunk;
                unsafe { self.heap.insert_subphase_prep(sub) };
                let mut slots: Vec<Slot<T>> = sub
                    .iter()
                    .enumerate()
                    .map(|(i, req)| Slot::insert(i, req.start()))
                    .collect();
                self.run_round_robin(&mut slots, sub);
            }

            for (req, res) in extracts.iter().zip(responses) {
                records.push(OpRecord::Extract {
                    res: Some(res),
                    iters: req.iterations(),
                });
            }
            for req in &inserts {
                let Op::Insert(arg) = (unsafe { *req.op() }) else {
                    unreachable!()
                };
                records.push(OpRecord::Insert {
                    arg,
                    iters: req.iterations(),
                    moves: req.split_moves(),
                });
            }
        }

        self.log.phases.push(PhaseRecord {
            phase,
            m_pre,
            ops: records,
        });

        // Responses in input order.
        ops.iter()
            .zip(reqs.iter())
            .map(|(op, req)| match op {
                Op::ExtractMin => unsafe { req.peek_result() }.copied().flatten(),
                Op::Insert(_) => None,
            })
            .collect()
    }

    fn run_round_robin(&self, slots: &mut [Slot<T>], reqs: &[&PqRequest<T>]) {
        loop {
            let mut moved = false;
            let mut all_done = true;
            for slot in slots.iter_mut() {
                if slot.done {
                    continue;
                }
                all_done = false;
                let out = match &mut slot.machine {
                    Machine::Sift(m) => unsafe { m.step(&self.heap) },
                    Machine::Insert(m) => unsafe { m.step(&self.heap) },
                };
                if out != Step::Blocked {
                    moved = true;
                }
                if out == Step::Done {
                    slot.done = true;
                    let req = reqs[slot.req];
                    match &slot.machine {
                        Machine::Sift(m) => req.force_counters(m.iters, 0),
                        Machine::Insert(m) => req.force_counters(m.iters, m.moves),
                    }
                    req.advance(Status::Finished);
                }
            }
            if all_done {
                return;
            }
            assert!(moved, "phase deadlocked under round-robin scheduling");
        }
    }
}

impl<T: Value + fmt::Debug> Default for SimQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}
