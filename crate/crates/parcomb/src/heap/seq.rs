//! The sequential binary heap: a standalone structure and the in-place
//! variants the combiner uses on shared storage for small batches.
//!
//! Insert walks the root-to-leaf path to the new node, swapping the carried
//! value with any larger ancestor on the way; extract-min moves the last
//! value to the root and sifts it down. Both run in O(log m) steps. The heap
//! property is non-strict so duplicate values are fine.

use super::state::HeapState;
use super::tree::depth;
use crate::Value;

/// A plain sequential binary-heap priority queue.
#[derive(Debug, Clone, Default)]
pub struct SeqHeap<T> {
    // 1-indexed; index 0 unused.
    items: Vec<T>,
}

impl<T: Value> SeqHeap<T> {
    pub fn new() -> Self
    where
        T: Default,
    {
        SeqHeap {
            items: vec![T::default()],
        }
    }

    pub fn from_values(values: impl IntoIterator<Item = T>) -> Self
    where
        T: Default,
    {
        let mut heap = SeqHeap::new();
        for v in values {
            heap.insert(v);
        }
        heap
    }

    pub fn len(&self) -> usize {
        self.items.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, x: T) {
        self.items.push(x);
        let m = self.len();
        let mut val = x;
        // Ancestors of m from the root down, excluding m itself.
        for shift in (1..=depth(m)).rev() {
            let v = m >> shift;
            if val < self.items[v] {
                std::mem::swap(&mut val, &mut self.items[v]);
            }
        }
        self.items[m] = val;
    }

    pub fn extract_min(&mut self) -> Option<T> {
        let m = self.len();
        if m == 0 {
            return None;
        }
        let res = self.items[1];
        let last = self.items.pop().unwrap();
        if m > 1 {
            self.items[1] = last;
            self.sift_down(1);
        }
        Some(res)
    }

    fn sift_down(&mut self, mut v: usize) {
        let m = self.len();
        loop {
            let mut c = 2 * v;
            if c > m {
                return;
            }
            if c + 1 <= m && self.items[c + 1] < self.items[c] {
                c += 1;
            }
            if self.items[c] < self.items[v] {
                self.items.swap(c, v);
                v = c;
            } else {
                return;
            }
        }
    }

    /// Values at nodes `1 ..= m` in array order.
    pub fn values(&self) -> &[T] {
        &self.items[1..]
    }

    pub fn is_heap(&self) -> bool {
        let m = self.len();
        (1..=m).all(|v| {
            [2 * v, 2 * v + 1]
                .into_iter()
                .filter(|&c| c <= m)
                .all(|c| self.items[v] <= self.items[c])
        })
    }
}

impl<T: Value> HeapState<T> {
    /// Sequential insert on the shared array.
    ///
    /// # Safety
    ///
    /// Combiner only, with no clients active (the sequential fallback path).
    pub(crate) unsafe fn seq_insert(&self, x: T) {
        let m = self.len() + 1;
        self.ensure_capacity(m);
        let mut val = x;
        for shift in (1..=depth(m)).rev() {
            let node = self.node(m >> shift);
            let cur = node.val();
            if val < cur {
                node.set_val(val);
                val = cur;
            }
        }
        self.node(m).set_val(val);
        self.set_len(m);
    }

    /// Sequential extract-min on the shared array.
    ///
    /// # Safety
    ///
    /// As for [`HeapState::seq_insert`].
    pub(crate) unsafe fn seq_extract_min(&self) -> Option<T> {
        let m = self.len();
        if m == 0 {
            return None;
        }
        let res = self.node(1).val();
        let last = self.node(m).val();
        self.set_len(m - 1);
        if m > 1 {
            self.node(1).set_val(last);
            self.seq_sift_down(1);
        }
        Some(res)
    }

    unsafe fn seq_sift_down(&self, mut v: usize) {
        let m = self.len();
        loop {
            let mut c = 2 * v;
            if c > m {
                return;
            }
            if c + 1 <= m && self.node(c + 1).val() < self.node(c).val() {
                c += 1;
            }
            if self.node(c).val() < self.node(v).val() {
                let (a, b) = (self.node(v).val(), self.node(c).val());
                self.node(v).set_val(b);
                self.node(c).set_val(a);
                v = c;
            } else {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn path_insert_keeps_array_order() {
        let heap = SeqHeap::from_values([1u64, 2, 3]);
        assert_eq!(heap.values(), &[1, 2, 3]);
    }

    #[test]
    fn insert_into_empty_sets_root() {
        let mut heap = SeqHeap::new();
        heap.insert(7u64);
        assert_eq!(heap.values(), &[7]);
    }

    #[test]
    fn small_insert_displaces_ancestors() {
        let mut heap = SeqHeap::from_values([1u64, 2, 3]);
        heap.insert(0);
        assert_eq!(heap.values(), &[0, 1, 3, 2]);
        assert!(heap.is_heap());
    }

    #[test]
    fn extract_restores_heap() {
        let mut heap = SeqHeap::from_values([1u64, 2, 3]);
        assert_eq!(heap.extract_min(), Some(1));
        let mut rest = heap.values().to_vec();
        rest.sort_unstable();
        assert_eq!(rest, vec![2, 3]);
        assert!(heap.is_heap());
    }

    #[test]
    fn singleton_extract_empties() {
        let mut heap = SeqHeap::from_values([7u64]);
        assert_eq!(heap.extract_min(), Some(7));
        assert_eq!(heap.extract_min(), None);
    }

    #[test]
    fn random_inserts_drain_sorted() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let values: Vec<u64> = (0..1000).map(|_| rng.gen_range(0..500)).collect();
        let mut heap = SeqHeap::from_values(values.iter().copied());
        assert!(heap.is_heap());
        let mut drained = Vec::new();
        while let Some(v) = heap.extract_min() {
            drained.push(v);
        }
        let mut want = values;
        want.sort_unstable();
        assert_eq!(drained, want);
    }

    #[test]
    fn in_place_ops_match_standalone() {
        let state = HeapState::<u64>::new();
        let mut reference = SeqHeap::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..400 {
            if rng.gen_bool(0.6) {
                let v = rng.gen_range(0..100);
                unsafe { state.seq_insert(v) };
                reference.insert(v);
            } else {
                let got = unsafe { state.seq_extract_min() };
                assert_eq!(got, reference.extract_min());
            }
        }
        assert_eq!(unsafe { state.values() }, reference.values());
    }

    proptest! {
        #[test]
        fn multiset_preserved_and_heap_holds(values in proptest::collection::vec(0u64..64, 0..64)) {
            let heap = SeqHeap::from_values(values.iter().copied());
            prop_assert!(heap.is_heap());
            let mut got = heap.values().to_vec();
            got.sort_unstable();
            let mut want = values;
            want.sort_unstable();
            prop_assert_eq!(got, want);
        }
    }
}
