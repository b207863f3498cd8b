//! Combiner-side phase preparation for the batched heap.
//!
//! These routines run under the combiner lock. They are shared verbatim by
//! the concurrent behavior in [`super`] and by the deterministic scheduler in
//! [`crate::verify::sim`]: the concurrent path interleaves client machines on
//! real threads between the preparation calls, the simulator enumerates the
//! interleavings instead.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::insert_set::InsertSet;
use super::state::HeapState;
use super::tree::{depth, insert_starts, subtree_interval_at};
use super::{Op, PqRequest};
use crate::combining::Status;
use crate::Value;

/// Entry of the combiner's auxiliary min-heap for k-smallest selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct SelectionEntry<T> {
    pub val: T,
    pub idx: usize,
}

impl<T: Ord> Ord for SelectionEntry<T> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (&self.val, self.idx).cmp(&(&other.val, other.idx))
    }
}

impl<T: Ord> PartialOrd for SelectionEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Value> HeapState<T> {
    /// Indices of the k smallest values, in increasing value order.
    ///
    /// Dijkstra-like frontier walk: pop the smallest known node, then offer
    /// its children. The result is always a connected subtree containing the
    /// root, because a node is only reachable through its (smaller) parent.
    ///
    /// # Safety
    ///
    /// Combiner only; requires `1 <= k <= m`.
    pub(crate) unsafe fn select_k_smallest(&self, k: usize) -> Vec<usize> {
        let m = self.len();
        assert!(k >= 1 && k <= m, "selection of {k} from heap of {m}");
        let mut frontier = BinaryHeap::new();
        frontier.push(Reverse(SelectionEntry {
            val: self.node(1).val(),
            idx: 1,
        }));
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let Reverse(entry) = frontier.pop().expect("frontier exhausted early");
            out.push(entry.idx);
            for child in [2 * entry.idx, 2 * entry.idx + 1] {
                if child <= m {
                    frontier.push(Reverse(SelectionEntry {
                        val: self.node(child).val(),
                        idx: child,
                    }));
                }
            }
        }
        out
    }

    /// Prepare the extract phase: record responses, lock the sift starts,
    /// pair inserts with extracted slots, refill the remaining holes from
    /// the live tail of the array, and flip every extract request to `Sift`.
    ///
    /// Returns the number of insert requests completed by pairing and the
    /// extract responses, aligned with `extracts` (ascending).
    ///
    /// # Safety
    ///
    /// Combiner only, with `|extracts| <= m` and no phase in flight.
    pub(crate) unsafe fn extract_prep(
        &self,
        extracts: &[&PqRequest<T>],
        inserts: &[&PqRequest<T>],
    ) -> (usize, Vec<T>) {
        let m0 = self.len();
        let k = extracts.len();
        if k == 0 {
            return (0, Vec::new());
        }
        debug_assert!(k <= m0);
        let selected = self.select_k_smallest(k);
        let mut responses = Vec::with_capacity(k);
        for (req, &v) in extracts.iter().zip(&selected) {
            let node = self.node(v);
            responses.push(node.val());
            req.set_result(Some(node.val()));
            node.lock();
            req.set_start(v);
        }

        let paired = k.min(inserts.len());
        for (req, &v) in inserts.iter().zip(&selected).take(paired) {
            let Op::Insert(arg) = *req.op() else {
                unreachable!("extract request in the insert set")
            };
            self.node(v).set_val(arg);
            req.complete(None);
        }

        // Unpaired holes are refilled from the consumed tail. A hole can lie
        // inside the tail itself; such a hole vanishes with the shrink and
        // the extracted value that still sits there must not be copied back.
        let final_m = m0 - (k - paired);
        let holes = &selected[paired..];
        let mut live_tail = Vec::new();
        for idx in final_m + 1..=m0 {
            if !holes.contains(&idx) {
                live_tail.push(self.node(idx).val());
            }
        }
        let mut fill = live_tail.into_iter();
        for &hole in holes {
            if hole <= final_m {
                self.node(hole)
                    .set_val(fill.next().expect("tail shorter than hole count"));
            }
        }
        debug_assert!(fill.next().is_none());
        self.set_len(final_m);

        for req in extracts {
            req.advance(Status::Sift);
        }
        (paired, responses)
    }

    /// Prepare one single-level insert sub-phase: compute the descent start
    /// and leaf range of every request, extend the heap over the new target
    /// nodes, deposit the sorted argument set at the root, and flip the
    /// requests to `Sift`.
    ///
    /// # Safety
    ///
    /// Combiner only; all extract-phase clients and any previous sub-phase
    /// must have finished. Targets `m+1 ..= m+k` must share one depth level.
    pub(crate) unsafe fn insert_subphase_prep(&self, sub: &[&PqRequest<T>]) {
        let m0 = self.len();
        let k = sub.len();
        debug_assert!(k >= 1);
        let level = depth(m0 + 1);
        debug_assert_eq!(
            level,
            depth(m0 + k),
            "insert sub-phase spans two target levels"
        );
        self.ensure_capacity(m0 + k);

        let starts = insert_starts(m0, k);
        for (req, &start) in sub.iter().zip(&starts) {
            req.set_start(start);
            let (lo, hi) = subtree_interval_at(start, level);
            req.set_leaf_range(lo, hi);
        }
        self.set_insert_bounds(m0 + 1, m0 + k);
        self.set_len(m0 + k);

        let args = sub
            .iter()
            .map(|req| match *req.op() {
                Op::Insert(arg) => arg,
                Op::ExtractMin => unreachable!("extract request in the insert phase"),
            })
            .collect();
        self.node(1).deposit_split(InsertSet::from_args(args));

        for req in sub {
            req.advance(Status::Sift);
        }
    }

    /// Serve a whole batch sequentially: extracts in publication order
    /// first, then inserts, mirroring the parallel path's linearization.
    /// Returns the served operations with their responses, in serve order.
    ///
    /// # Safety
    ///
    /// Combiner only, with no phase in flight.
    pub(crate) unsafe fn serve_sequentially(
        &self,
        batch: &[&PqRequest<T>],
    ) -> Vec<(Op<T>, Option<T>)> {
        let mut served = Vec::with_capacity(batch.len());
        for req in batch {
            if matches!(*req.op(), Op::ExtractMin) {
                let res = self.seq_extract_min();
                served.push((Op::ExtractMin, res));
                req.complete(res);
            }
        }
        for req in batch {
            if let Op::Insert(arg) = *req.op() {
                self.seq_insert(arg);
                served.push((Op::Insert(arg), None));
                req.complete(None);
            }
        }
        served
    }
}

/// Sizes of the single-level sub-phases for `k` inserts on a heap of size
/// `m`. Targets span at most two levels whenever `k <= m`, so this yields
/// one or two chunks.
pub(crate) fn level_chunks(mut m: usize, mut k: usize) -> Vec<usize> {
    let mut chunks = Vec::new();
    while k > 0 {
        let level_hi = (1usize << (depth(m + 1) + 1)) - 1;
        let take = k.min(level_hi - m);
        chunks.push(take);
        m += take;
        k -= take;
    }
    debug_assert!(chunks.len() <= 2);
    chunks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn heap_from(values: &[u64]) -> HeapState<u64> {
        let state = HeapState::new();
        for &v in values {
            unsafe { state.seq_insert(v) };
        }
        state
    }

    #[test]
    fn selection_order_is_by_value() {
        // Array layout [1, 3, 2, 7, 4, 6, 5] is already a heap.
        let state = heap_from(&[1, 3, 2, 7, 4, 6, 5]);
        assert_eq!(unsafe { state.values() }, vec![1, 3, 2, 7, 4, 6, 5]);
        assert_eq!(unsafe { state.select_k_smallest(3) }, vec![1, 3, 2]);
    }

    #[test]
    fn selection_of_one_is_the_root() {
        let state = heap_from(&[5, 9, 7]);
        assert_eq!(unsafe { state.select_k_smallest(1) }, vec![1]);
    }

    #[test]
    fn selection_of_all_is_every_index() {
        let state = heap_from(&[4, 2, 9, 1]);
        let mut sel = unsafe { state.select_k_smallest(4) };
        sel.sort_unstable();
        assert_eq!(sel, vec![1, 2, 3, 4]);
    }

    #[test]
    fn selection_is_connected_subtree() {
        let state = heap_from(&[10, 40, 20, 70, 50, 30, 60, 90, 80]);
        for k in 1..=9 {
            let sel = unsafe { state.select_k_smallest(k) };
            assert!(sel.contains(&1));
            for &v in &sel {
                assert!(v == 1 || sel.contains(&(v / 2)), "parent of {v} missing");
            }
        }
    }

    #[test]
    fn level_chunks_split_on_boundary() {
        assert_eq!(level_chunks(6, 2), vec![1, 1]); // targets 7 and 8
        assert_eq!(level_chunks(8, 4), vec![4]); // targets 9..=12
        assert_eq!(level_chunks(4, 3), vec![3]); // targets 5..=7
        assert_eq!(level_chunks(5, 4), vec![2, 2]); // targets 6..=9
    }
}
