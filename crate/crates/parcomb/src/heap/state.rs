//! Shared heap storage used by the combiner and the clients.
//!
//! The heap is a 1-indexed node array plus a size `m`. Each node carries a
//! value, a lock flag for hand-over-hand sift-downs, and a split slot used to
//! hand an [`InsertSet`] to the client waiting at that node.
//!
//! Ownership protocol: the combiner is the only mutator of `m`, the phase
//! target bounds and unlocked node values; a client mutates only nodes
//! reachable under its own lock front (extract phase) or via an insert set it
//! exclusively holds (insert phase). Lock flags and split slots are single
//! words with acquire/release ordering; values are plain data published by
//! those words and by the request status edges. The node array grows only
//! under the combiner while every client of the previous phase is finished,
//! so no concurrent resize can be observed.

use std::cell::UnsafeCell;
use std::mem::MaybeUninit;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicUsize, Ordering};

use super::insert_set::InsertSet;
use crate::Value;

pub struct Node<T> {
    val: UnsafeCell<MaybeUninit<T>>,
    locked: AtomicBool,
    split: AtomicPtr<InsertSet<T>>,
}

impl<T: Value> Node<T> {
    fn empty() -> Self {
        Node {
            val: UnsafeCell::new(MaybeUninit::uninit()),
            locked: AtomicBool::new(false),
            split: AtomicPtr::new(std::ptr::null_mut()),
        }
    }

    /// Read the node value.
    ///
    /// # Safety
    ///
    /// The caller must own the node under the phase protocol and the value
    /// must have been written (index at most `m`, or a target node already
    /// served).
    pub unsafe fn val(&self) -> T {
        (*self.val.get()).assume_init()
    }

    /// Write the node value.
    ///
    /// # Safety
    ///
    /// As for [`Node::val`]; no other thread may access the value
    /// concurrently.
    pub unsafe fn set_val(&self, v: T) {
        (*self.val.get()).write(v);
    }

    pub fn locked(&self) -> bool {
        self.locked.load(Ordering::Acquire)
    }

    pub fn lock(&self) {
        self.locked.store(true, Ordering::Release);
    }

    pub fn unlock(&self) {
        self.locked.store(false, Ordering::Release);
    }

    /// Deposit an insert set, waking the client spinning on this slot.
    pub fn deposit_split(&self, set: InsertSet<T>) {
        let ptr = Box::into_raw(Box::new(set));
        let prev = self.split.swap(ptr, Ordering::Release);
        debug_assert!(prev.is_null(), "split slot deposited twice");
    }

    /// Take the deposited insert set, if any, clearing the slot.
    pub fn take_split(&self) -> Option<InsertSet<T>> {
        if self.split.load(Ordering::Relaxed).is_null() {
            return None;
        }
        let ptr = self.split.swap(std::ptr::null_mut(), Ordering::Acquire);
        if ptr.is_null() {
            None
        } else {
            Some(*unsafe { Box::from_raw(ptr) })
        }
    }

    pub fn has_split(&self) -> bool {
        !self.split.load(Ordering::Relaxed).is_null()
    }

    /// Clone the deposited set without taking it. Scheduler snapshots only.
    ///
    /// # Safety
    ///
    /// Single-threaded access to the node.
    pub(crate) unsafe fn split_clone(&self) -> Option<InsertSet<T>>
    where
        T: Clone,
    {
        let ptr = self.split.load(Ordering::Relaxed);
        if ptr.is_null() {
            None
        } else {
            Some((*ptr).clone())
        }
    }
}

impl<T> Drop for Node<T> {
    fn drop(&mut self) {
        let ptr = *self.split.get_mut();
        if !ptr.is_null() {
            drop(unsafe { Box::from_raw(ptr) });
        }
    }
}

pub struct HeapState<T> {
    m: AtomicUsize,
    nodes: UnsafeCell<Vec<Node<T>>>,
    /// Target bounds `m + 1 ..= m + k` of the insert phase in flight.
    ins_lo: AtomicUsize,
    ins_hi: AtomicUsize,
}

unsafe impl<T: Send> Sync for HeapState<T> {}
unsafe impl<T: Send> Send for HeapState<T> {}

impl<T: Value> HeapState<T> {
    pub fn new() -> Self {
        HeapState {
            m: AtomicUsize::new(0),
            // Index 0 is never used.
            nodes: UnsafeCell::new(vec![Node::empty()]),
            ins_lo: AtomicUsize::new(1),
            ins_hi: AtomicUsize::new(0),
        }
    }

    /// Current size. Written only by the combiner; reads from other threads
    /// ride the status edges of the phase protocol.
    pub fn len(&self) -> usize {
        self.m.load(Ordering::Relaxed)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn set_len(&self, m: usize) {
        self.m.store(m, Ordering::Relaxed);
    }

    pub(crate) fn insert_bounds(&self) -> (usize, usize) {
        (
            self.ins_lo.load(Ordering::Relaxed),
            self.ins_hi.load(Ordering::Relaxed),
        )
    }

    pub(crate) fn set_insert_bounds(&self, lo: usize, hi: usize) {
        self.ins_lo.store(lo, Ordering::Relaxed);
        self.ins_hi.store(hi, Ordering::Relaxed);
    }

    /// Shared access to a node.
    ///
    /// # Safety
    ///
    /// `idx` must be within the grown capacity and no concurrent growth may
    /// be possible (growth only happens under the combiner at quiescence).
    pub(crate) unsafe fn node(&self, idx: usize) -> &Node<T> {
        let nodes = &*self.nodes.get();
        debug_assert!(idx < nodes.len(), "node index {idx} out of bounds");
        nodes.get_unchecked(idx)
    }

    /// Ensure nodes `1 ..= cap` exist, growing geometrically.
    ///
    /// # Safety
    ///
    /// Combiner only, with no client of any previous phase still active.
    pub(crate) unsafe fn ensure_capacity(&self, cap: usize) {
        let nodes = &mut *self.nodes.get();
        if nodes.len() <= cap {
            let new_len = (cap + 1).max(nodes.len() * 2);
            nodes.resize_with(new_len, Node::empty);
        }
    }

    /// Values at nodes `1 ..= m`. Requires quiescence.
    pub(crate) unsafe fn values(&self) -> Vec<T> {
        (1..=self.len()).map(|v| self.node(v).val()).collect()
    }

    /// Walk `1 ..= m` and report the first quiescence violation: a heap
    /// property breach, a node still locked, or a split slot still occupied.
    ///
    /// # Safety
    ///
    /// Requires quiescence (no phase in flight).
    pub(crate) unsafe fn quiescence_violation(&self) -> Option<String> {
        let m = self.len();
        for v in 1..=m {
            let node = self.node(v);
            if node.locked() {
                return Some(format!("node {v} is still locked"));
            }
            if node.has_split() {
                return Some(format!("node {v} still holds an insert set"));
            }
            for c in [2 * v, 2 * v + 1] {
                if c <= m && self.node(c).val() < node.val() {
                    return Some(format!("heap property violated between {v} and {c}"));
                }
            }
        }
        None
    }
}

impl<T: Value> Default for HeapState<T> {
    fn default() -> Self {
        Self::new()
    }
}
