//! The set of pending insert values routed down the tree during an insert
//! phase.
//!
//! An `InsertSet` is a pair of sorted sequences: `a` holds pending insert
//! arguments and `b` holds values displaced from ancestors on the way down.
//! Displaced values are appended to `b`; because every element of `b` came
//! from a strict ancestor of the current node, the append keeps `b` sorted.

use std::collections::VecDeque;

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct InsertSet<T> {
    a: VecDeque<T>,
    b: VecDeque<T>,
}

impl<T: Copy + Ord> InsertSet<T> {
    pub fn new() -> Self {
        InsertSet {
            a: VecDeque::new(),
            b: VecDeque::new(),
        }
    }

    /// Build from insert arguments, sorting them into `a`.
    pub fn from_args(mut args: Vec<T>) -> Self {
        args.sort_unstable();
        InsertSet {
            a: args.into(),
            b: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty() && self.b.is_empty()
    }

    /// Minimum of the two heads; an empty head compares as infinity.
    pub fn peek_min(&self) -> Option<T> {
        match (self.a.front(), self.b.front()) {
            (Some(&x), Some(&y)) => Some(x.min(y)),
            (Some(&x), None) => Some(x),
            (None, Some(&y)) => Some(y),
            (None, None) => None,
        }
    }

    /// Remove and return the minimum from whichever sequence holds it.
    pub fn take_min(&mut self) -> T {
        let from_a = match (self.a.front(), self.b.front()) {
            (Some(x), Some(y)) => x <= y,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => panic!("take_min on an empty insert set"),
        };
        if from_a {
            self.a.pop_front().unwrap()
        } else {
            self.b.pop_front().unwrap()
        }
    }

    /// Append a value displaced from an ancestor.
    pub fn push_displaced(&mut self, v: T) {
        debug_assert!(
            self.b.back().map_or(true, |&last| last <= v),
            "displaced value breaks sortedness of b"
        );
        self.b.push_back(v);
    }

    /// Split off a left part of exactly `l` elements.
    ///
    /// Exactly `min(l, len - l)` elements are moved into a fresh set, taken
    /// as a prefix of `a` when `a` can supply them and as a prefix of `b`
    /// otherwise; the shorter side of the split is the fresh set. Both
    /// outputs keep their sequences sorted. The moved-element count is added
    /// to `moved`.
    pub fn split(mut self, l: usize, moved: &mut u64) -> (InsertSet<T>, InsertSet<T>) {
        let total = self.len();
        assert!(l >= 1 && l < total, "split size {l} out of range for set of {total}");
        let move_count = l.min(total - l);
        let mut fresh = InsertSet::new();
        if self.a.len() >= move_count {
            fresh.a = self.a.drain(..move_count).collect();
        } else {
            debug_assert!(self.b.len() >= move_count);
            fresh.b = self.b.drain(..move_count).collect();
        }
        *moved += move_count as u64;
        if move_count == l {
            (fresh, self)
        } else {
            (self, fresh)
        }
    }

    pub fn is_sorted(&self) -> bool {
        let ok = |s: &VecDeque<T>| s.iter().zip(s.iter().skip(1)).all(|(x, y)| x <= y);
        ok(&self.a) && ok(&self.b)
    }

    #[cfg(test)]
    pub(crate) fn parts(&self) -> (Vec<T>, Vec<T>) {
        (
            self.a.iter().copied().collect(),
            self.b.iter().copied().collect(),
        )
    }

    #[cfg(test)]
    pub(crate) fn from_parts(a: Vec<T>, b: Vec<T>) -> Self {
        InsertSet {
            a: a.into(),
            b: b.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn split_moves_prefix_of_a() {
        let set = InsertSet::from_args(vec![3, 1, 2]);
        let mut moved = 0;
        let (left, right) = set.split(1, &mut moved);
        assert_eq!(left.parts(), (vec![1], vec![]));
        assert_eq!(right.parts(), (vec![2, 3], vec![]));
        assert_eq!(moved, 1);
    }

    #[test]
    fn split_moves_from_b_when_a_is_short() {
        let set = InsertSet::from_parts(vec![5], vec![2, 4]);
        let mut moved = 0;
        let (left, right) = set.split(2, &mut moved);
        // One element moves from a into the smaller (right) side.
        assert_eq!(left.parts(), (vec![], vec![2, 4]));
        assert_eq!(right.parts(), (vec![5], vec![]));
        assert_eq!(moved, 1);
    }

    #[test]
    fn split_off_last_moves_at_most_one() {
        let set = InsertSet::from_args(vec![4, 3, 2, 1]);
        let mut moved = 0;
        let (left, right) = set.split(3, &mut moved);
        assert_eq!(left.len(), 3);
        assert_eq!(right.len(), 1);
        assert!(moved <= 1);
    }

    #[test]
    fn min_prefers_smaller_head() {
        let mut set = InsertSet::from_parts(vec![5, 9], vec![3, 7]);
        assert_eq!(set.peek_min(), Some(3));
        assert_eq!(set.take_min(), 3);
        assert_eq!(set.take_min(), 5);
        assert_eq!(set.take_min(), 7);
        assert_eq!(set.take_min(), 9);
        assert_eq!(set.peek_min(), None);
    }

    proptest! {
        #[test]
        fn split_respects_sizes_and_sortedness(
            args in proptest::collection::vec(0u64..100, 2..24),
            frac in 0.0f64..1.0,
        ) {
            let set = InsertSet::from_args(args.clone());
            let total = set.len();
            let l = ((total as f64 * frac) as usize).clamp(1, total - 1);
            let mut moved = 0;
            let (left, right) = set.split(l, &mut moved);
            prop_assert_eq!(left.len(), l);
            prop_assert_eq!(right.len(), total - l);
            prop_assert_eq!(moved, l.min(total - l) as u64);
            prop_assert!(left.is_sorted() && right.is_sorted());
            // The two halves partition the original multiset.
            let mut got: Vec<u64> = left.parts().0.into_iter()
                .chain(left.parts().1)
                .chain(right.parts().0)
                .chain(right.parts().1)
                .collect();
            got.sort_unstable();
            let mut want = args;
            want.sort_unstable();
            prop_assert_eq!(got, want);
        }

        #[test]
        fn displacement_keeps_both_sorted(ops in proptest::collection::vec(0u64..50, 1..30)) {
            // Drain with displacements in non-decreasing order, mirroring a
            // descent where ancestor values only grow.
            let mut set = InsertSet::from_args(ops.clone());
            let mut floor = 0;
            while !set.is_empty() {
                let min = set.peek_min().unwrap();
                if min < floor {
                    set.take_min();
                    set.push_displaced(floor);
                } else {
                    set.take_min();
                    floor = min;
                }
                prop_assert!(set.is_sorted());
            }
        }
    }
}
