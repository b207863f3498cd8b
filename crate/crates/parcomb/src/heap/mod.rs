//! A concurrent priority queue built from a parallel batched binary heap.
//!
//! Each combining phase applies its whole batch in two stages. The combiner
//! selects the k smallest nodes (k = number of extracts), records them as
//! responses, pairs as many inserts as possible into the vacated nodes,
//! refills the remaining holes from the array tail, and hands each extract
//! request a locked start node; the clients then sift the new values down in
//! parallel with hand-over-hand locking. Unpaired inserts are routed as one
//! sorted set deposited at the root: each client descends toward its own
//! target leaf, splitting the set at every split node and waking the client
//! waiting at the right child. Batches at least as large as the heap are
//! served sequentially instead.
//!
//! ```
//! let queue = parcomb::heap::PriorityQueue::new();
//! let handle = queue.register();
//! handle.insert(3u64);
//! handle.insert(1);
//! assert_eq!(handle.extract_min(), Some(1));
//! ```

pub(crate) mod client;
pub(crate) mod combiner;
mod insert_set;
mod seq;
pub(crate) mod state;
pub(crate) mod tree;

pub use insert_set::InsertSet;
pub use seq::SeqHeap;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::combining::{wait_finished, Behavior, PublicationList, Request, Status, Token};
use crate::verify::{OpRecord, PhaseLog, PhaseRecord};
use crate::Value;

use client::{drive_insert, drive_sift};
use combiner::level_chunks;
use state::HeapState;

/// A priority-queue operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op<T> {
    Insert(T),
    ExtractMin,
}

pub(crate) type PqRequest<T> = Request<Op<T>, Option<T>>;

/// What the phase recorder should verify while recording.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecorderConfig {
    /// Walk the heap at every phase boundary and record quiescence
    /// violations (heap property, leftover locks, occupied split slots).
    pub check_quiescence: bool,
}

struct Recorder<T> {
    log: Mutex<PhaseLog<T>>,
    check_quiescence: bool,
    violations: Mutex<Vec<String>>,
}

pub(crate) struct PqBehavior<T> {
    heap: HeapState<T>,
    phases: AtomicU64,
    recorder: Option<Recorder<T>>,
}

impl<T: Value> PqBehavior<T> {
    fn serve_own_if_pending(&self, own: &PqRequest<T>) {
        if own.status() != Status::Sift {
            return;
        }
        match unsafe { own.op() } {
            Op::ExtractMin => {
                let iters = drive_sift(&self.heap, own.start());
                own.add_iterations(iters);
                own.advance(Status::Finished);
            }
            Op::Insert(_) => {
                let (iters, moves) = drive_insert(&self.heap, own.start());
                own.add_iterations(iters);
                own.add_split_moves(moves);
                own.advance(Status::Finished);
            }
        }
    }

    fn record_phase(&self, m_pre: usize, ops: Vec<OpRecord<T>>) {
        let Some(rec) = &self.recorder else { return };
        if rec.check_quiescence {
            // All requests are finished and the lock is still held, so the
            // heap is externally quiescent here.
            if let Some(v) = unsafe { self.heap.quiescence_violation() } {
                rec.violations.lock().unwrap().push(format!(
                    "phase {}: {v}",
                    self.phases.load(Ordering::Relaxed)
                ));
            }
        }
        let phase = self.phases.load(Ordering::Relaxed);
        rec.log.lock().unwrap().phases.push(PhaseRecord {
            phase,
            m_pre,
            ops,
        });
    }
}

impl<T: Value> Behavior<Op<T>, Option<T>> for PqBehavior<T> {
    fn combiner(&self, batch: &[&PqRequest<T>], own: &PqRequest<T>) {
        self.phases.fetch_add(1, Ordering::Relaxed);
        let m_pre = self.heap.len();

        // Partition and capture the operations now; a request's cells are
        // off limits once it is finished.
        let mut extracts = Vec::new();
        let mut inserts = Vec::new();
        let mut insert_args = Vec::new();
        for req in batch {
            req.reset_counters();
            match unsafe { *req.op() } {
                Op::ExtractMin => extracts.push(*req),
                Op::Insert(arg) => {
                    inserts.push(*req);
                    insert_args.push(arg);
                }
            }
        }

        if m_pre <= batch.len() {
            // Sequential fallback; there is nothing to parallelize.
            let served = unsafe { self.heap.serve_sequentially(batch) };
            self.record_phase(
                m_pre,
                served
                    .into_iter()
                    .map(|(op, res)| match op {
                        Op::ExtractMin => OpRecord::Extract { res, iters: 0 },
                        Op::Insert(arg) => OpRecord::Insert {
                            arg,
                            iters: 0,
                            moves: 0,
                        },
                    })
                    .collect(),
            );
            return;
        }

        let (paired, responses) = unsafe { self.heap.extract_prep(&extracts, &inserts) };
        self.serve_own_if_pending(own);
        for req in &extracts {
            wait_finished(req);
        }

        let remaining = &inserts[paired..];
        let mut offset = 0;
        for chunk in level_chunks(self.heap.len(), remaining.len()) {
            let sub = &remaining[offset..offset + chunk];
            offset += chunk;
            unsafe { self.heap.insert_subphase_prep(sub) };
            self.serve_own_if_pending(own);
            for req in sub {
                wait_finished(req);
            }
        }

        if self.recorder.is_some() {
            let mut ops = Vec::with_capacity(batch.len());
            for (req, res) in extracts.iter().zip(responses) {
                ops.push(OpRecord::Extract {
                    res: Some(res),
                    iters: req.iterations(),
                });
            }
            for (req, arg) in inserts.iter().zip(insert_args) {
                ops.push(OpRecord::Insert {
                    arg,
                    iters: req.iterations(),
                    moves: req.split_moves(),
                });
            }
            self.record_phase(m_pre, ops);
        }
    }

    fn client(&self, req: &PqRequest<T>) {
        // A request finished by the combiner (a paired insert, or any
        // request of a sequential phase) has nothing left to do.
        self.serve_own_if_pending(req);
    }
}

struct PqShared<T: Value> {
    list: PublicationList<Op<T>, Option<T>>,
    behavior: PqBehavior<T>,
}

/// The concurrent priority queue. Cloning shares the underlying structure.
pub struct PriorityQueue<T: Value = u64> {
    shared: Arc<PqShared<T>>,
}

impl<T: Value> Clone for PriorityQueue<T> {
    fn clone(&self) -> Self {
        PriorityQueue {
            shared: self.shared.clone(),
        }
    }
}

impl<T: Value> PriorityQueue<T> {
    pub fn new() -> Self {
        Self::build(None)
    }

    /// A queue that logs every combining phase for offline verification.
    pub fn with_recorder(cfg: RecorderConfig) -> Self {
        Self::build(Some(Recorder {
            log: Mutex::new(PhaseLog::default()),
            check_quiescence: cfg.check_quiescence,
            violations: Mutex::new(Vec::new()),
        }))
    }

    fn build(recorder: Option<Recorder<T>>) -> Self {
        PriorityQueue {
            shared: Arc::new(PqShared {
                list: PublicationList::new(),
                behavior: PqBehavior {
                    heap: HeapState::new(),
                    phases: AtomicU64::new(0),
                    recorder,
                },
            }),
        }
    }

    /// Register the calling thread. One handle per thread.
    pub fn register(&self) -> PqHandle<T> {
        PqHandle {
            token: self.shared.list.register(),
            shared: self.shared.clone(),
        }
    }

    /// Current size; exact only while no operations are in flight.
    pub fn len(&self) -> usize {
        self.shared.behavior.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Combining phases run so far.
    pub fn phases(&self) -> u64 {
        self.shared.behavior.phases.load(Ordering::Relaxed)
    }

    /// Take the recorded phase log, leaving an empty one behind.
    pub fn take_log(&self) -> Option<PhaseLog<T>> {
        self.shared
            .behavior
            .recorder
            .as_ref()
            .map(|r| std::mem::take(&mut *r.log.lock().unwrap()))
    }

    /// Quiescence violations observed at phase boundaries so far.
    pub fn quiescence_violations(&self) -> Vec<String> {
        self.shared
            .behavior
            .recorder
            .as_ref()
            .map(|r| r.violations.lock().unwrap().clone())
            .unwrap_or_default()
    }

    /// Snapshot of the stored values in array order.
    ///
    /// # Safety
    ///
    /// Requires quiescence: no operation may be in flight.
    pub unsafe fn values(&self) -> Vec<T> {
        self.shared.behavior.heap.values()
    }

    /// Check heap property, lock flags and split slots.
    ///
    /// # Safety
    ///
    /// Requires quiescence: no operation may be in flight.
    pub unsafe fn verify_quiescent(&self) -> Result<(), String> {
        match self.shared.behavior.heap.quiescence_violation() {
            None => Ok(()),
            Some(v) => Err(v),
        }
    }
}

impl<T: Value> Default for PriorityQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// A thread's handle to a [`PriorityQueue`]. `Send` but not `Sync`: every
/// thread registers its own.
pub struct PqHandle<T: Value> {
    shared: Arc<PqShared<T>>,
    token: Token<Op<T>, Option<T>>,
}

impl<T: Value> PqHandle<T> {
    pub fn insert(&self, value: T) {
        self.shared
            .list
            .execute(&self.token, Op::Insert(value), &self.shared.behavior);
    }

    pub fn extract_min(&self) -> Option<T> {
        self.shared
            .list
            .execute(&self.token, Op::ExtractMin, &self.shared.behavior)
    }
}

#[cfg(test)]
mod tests;
