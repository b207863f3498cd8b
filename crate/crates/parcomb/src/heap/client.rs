//! Client-side step machines for the two parallel phases.
//!
//! Both routines are written as resumable machines whose `step` performs one
//! loop iteration (one node visit). The concurrent drivers spin on `Blocked`
//! with backoff; the deterministic scheduler in [`crate::verify::sim`]
//! enumerates interleavings of the same machines, so its verdicts transfer to
//! the concurrent code. A `Blocked` step performs no mutation.
//!
//! One loop iteration is the right step granularity: a sift front keeps its
//! current node locked for the whole iteration and a descent owns its insert
//! set outright, so no other thread can observe a state between the
//! sub-steps of an iteration.

use crossbeam_utils::Backoff;

use super::insert_set::InsertSet;
use super::state::HeapState;
use super::tree::targets_in_subtree;
use crate::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    /// Waiting on another thread (a locked child or an empty split slot).
    Blocked,
    Progress,
    Done,
}

/// Hand-over-hand sift-down from a node locked by the combiner.
///
/// At each node the front waits until both existing children are unlocked,
/// picks the smaller child, swaps downward if that child's value is smaller,
/// and locks the child before unlocking the current node. Fronts only wait
/// on nodes strictly below themselves, so the deepest front can always run.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct SiftDown {
    v: usize,
    pub iters: u64,
}

impl SiftDown {
    pub fn new(start: usize) -> Self {
        SiftDown { v: start, iters: 0 }
    }

    /// # Safety
    ///
    /// The machine must own the lock on its current node, per the extract
    /// phase protocol.
    pub unsafe fn step<T: Value>(&mut self, heap: &HeapState<T>) -> Step {
        let m = heap.len();
        let v = self.v;
        debug_assert!(heap.node(v).locked());
        let left = 2 * v;
        let right = 2 * v + 1;
        if left <= m && heap.node(left).locked() {
            return Step::Blocked;
        }
        if right <= m && heap.node(right).locked() {
            return Step::Blocked;
        }
        self.iters += 1;
        if left > m {
            heap.node(v).unlock();
            return Step::Done;
        }
        let mut c = left;
        if right <= m && heap.node(right).val() < heap.node(left).val() {
            c = right;
        }
        let child = heap.node(c).val();
        let cur = heap.node(v).val();
        if child < cur {
            heap.node(c).set_val(cur);
            heap.node(v).set_val(child);
            heap.node(c).lock();
            heap.node(v).unlock();
            self.v = c;
            Step::Progress
        } else {
            heap.node(v).unlock();
            Step::Done
        }
    }
}

/// Insert descent from a start node toward a single target leaf.
///
/// The machine first waits for an insert set to appear in its start node's
/// split slot. Descending, it keeps the node value the minimum of node and
/// set (displaced values go to the sorted tail of the set), and at a split
/// node it splits the set by target counts, deposits the right part at the
/// right child to wake the client waiting there, and continues left. At its
/// target node the single remaining value is written.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub(crate) struct InsertDescent<T> {
    v: usize,
    set: Option<InsertSet<T>>,
    pub iters: u64,
    pub moves: u64,
}

impl<T: Value> InsertDescent<T> {
    pub fn new(start: usize) -> Self {
        InsertDescent {
            v: start,
            set: None,
            iters: 0,
            moves: 0,
        }
    }

    /// # Safety
    ///
    /// Insert-phase protocol: the machine's start node was assigned by the
    /// combiner and every node it visits is visited by no other machine.
    pub unsafe fn step(&mut self, heap: &HeapState<T>) -> Step {
        if self.set.is_none() {
            match heap.node(self.v).take_split() {
                None => return Step::Blocked,
                Some(s) => {
                    self.set = Some(s);
                    return Step::Progress;
                }
            }
        }
        let (lo, hi) = heap.insert_bounds();
        let v = self.v;
        let set = self.set.as_mut().unwrap();
        self.iters += 1;

        if (lo..=hi).contains(&v) {
            debug_assert_eq!(set.len(), 1, "target node reached with {} values", set.len());
            heap.node(v).set_val(set.take_min());
            return Step::Done;
        }

        // Keep the node value the minimum of node and set.
        let cur = heap.node(v).val();
        if let Some(min) = set.peek_min() {
            if cur > min {
                set.take_min();
                set.push_displaced(cur);
                heap.node(v).set_val(min);
            }
        }

        let (left, right) = (2 * v, 2 * v + 1);
        let in_left = targets_in_subtree(left, lo, hi);
        let in_right = targets_in_subtree(right, lo, hi);
        debug_assert_eq!(in_left + in_right, set.len());
        if in_right == 0 {
            self.v = left;
        } else if in_left == 0 {
            self.v = right;
        } else {
            // Split node: hand the right part to the waiting client.
            let owned = self.set.take().unwrap();
            let (l, r) = owned.split(in_left, &mut self.moves);
            heap.node(right).deposit_split(r);
            self.set = Some(l);
            self.v = left;
        }
        Step::Progress
    }
}

/// Run a sift-down to completion on the current thread; returns the
/// iteration count for the caller to record on the request.
pub(crate) fn drive_sift<T: Value>(heap: &HeapState<T>, start: usize) -> u64 {
    let mut machine = SiftDown::new(start);
    let backoff = Backoff::new();
    loop {
        match unsafe { machine.step(heap) } {
            Step::Done => return machine.iters,
            Step::Progress => {}
            Step::Blocked => backoff.snooze(),
        }
    }
}

/// Run an insert descent to completion; returns (iterations, split moves).
pub(crate) fn drive_insert<T: Value>(heap: &HeapState<T>, start: usize) -> (u64, u64) {
    let mut machine = InsertDescent::new(start);
    let backoff = Backoff::new();
    loop {
        match unsafe { machine.step(heap) } {
            Step::Done => return (machine.iters, machine.moves),
            Step::Progress => {}
            Step::Blocked => backoff.snooze(),
        }
    }
}
