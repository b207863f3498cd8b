//! Index arithmetic for the 1-indexed complete binary tree backing the heap.
//!
//! Node `v` has children `2v` and `2v + 1`; depth counts edges from the
//! root. Target nodes of an insert phase are the consecutive indices
//! `m + 1 ..= m + k`, and a split node is a node whose both child subtrees
//! contain at least one target.

/// Depth of node `v` (root has depth 0).
pub fn depth(v: usize) -> usize {
    debug_assert!(v >= 1);
    (usize::BITS - 1 - v.leading_zeros()) as usize
}

/// Ceiling of log2, with `ceil_log2(0) = ceil_log2(1) = 0`.
pub fn ceil_log2(x: usize) -> u32 {
    if x <= 1 {
        0
    } else {
        usize::BITS - (x - 1).leading_zeros()
    }
}

/// Number of targets in `lo ..= hi` that lie in the subtree of `v`.
///
/// The subtree of `v` covers the contiguous interval
/// `[v << d, ((v + 1) << d) - 1]` at each level `d` below `v`; targets
/// occupy at most two adjacent levels, so the count is the sum of at most
/// two interval intersections.
pub fn targets_in_subtree(v: usize, lo: usize, hi: usize) -> usize {
    if lo > hi {
        return 0;
    }
    let dv = depth(v);
    let mut count = 0;
    for level in depth(lo)..=depth(hi) {
        if level < dv {
            continue;
        }
        let shift = level - dv;
        let sub_lo = v << shift;
        let sub_hi = ((v + 1) << shift) - 1;
        let t_lo = lo.max(1 << level);
        let t_hi = hi.min((1 << (level + 1)) - 1);
        let a = sub_lo.max(t_lo);
        let b = sub_hi.min(t_hi);
        if a <= b {
            count += b - a + 1;
        }
    }
    count
}

/// Lowest common ancestor of consecutive targets `prev` and `prev + 1`.
///
/// Walk up from `prev` while it is a right child; the node reached is a
/// left child (or the root, when `prev` is the rightmost node of its
/// level), and its parent is the ancestor below which the two targets
/// diverge.
pub fn split_parent(prev: usize) -> usize {
    let mut t = prev;
    while t > 1 && t & 1 == 1 {
        t >>= 1;
    }
    if t == 1 {
        1
    } else {
        t >> 1
    }
}

/// Start nodes for an insert batch with targets `m + 1 ..= m + k`.
///
/// The first request descends from the root; request `i` descends from the
/// right child of the lowest common ancestor of targets `m + i - 1` and
/// `m + i`. Those ancestors are exactly the split nodes of the batch.
pub fn insert_starts(m: usize, k: usize) -> Vec<usize> {
    debug_assert!(k >= 1);
    std::iter::once(1)
        .chain((1..k).map(|j| 2 * split_parent(m + j) + 1))
        .collect()
}

/// Interval of the subtree of `start` at level `level`, the leaf range a
/// descent from `start` can reach among that level's indices.
pub fn subtree_interval_at(start: usize, level: usize) -> (usize, usize) {
    let d = depth(start);
    debug_assert!(level >= d);
    let shift = level - d;
    (start << shift, ((start + 1) << shift) - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force LCA over ancestor chains.
    fn lca(mut a: usize, mut b: usize) -> usize {
        while a != b {
            if a > b {
                a /= 2;
            } else {
                b /= 2;
            }
        }
        a
    }

    /// Brute-force subtree membership.
    fn in_subtree(node: usize, root: usize) -> bool {
        let mut v = node;
        while v > root {
            v /= 2;
        }
        v == root
    }

    #[test]
    fn depth_of_first_levels() {
        assert_eq!(depth(1), 0);
        assert_eq!(depth(2), 1);
        assert_eq!(depth(3), 1);
        assert_eq!(depth(7), 2);
        assert_eq!(depth(8), 3);
    }

    #[test]
    fn ceil_log2_small_values() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(4), 2);
        assert_eq!(ceil_log2(5), 3);
        assert_eq!(ceil_log2(64), 6);
        assert_eq!(ceil_log2(65), 7);
    }

    #[test]
    fn targets_under_node_two() {
        // Subtree of 2 contains 9, 10, 11 out of 9..=12.
        assert_eq!(targets_in_subtree(2, 9, 12), 3);
    }

    #[test]
    fn root_sees_every_target() {
        assert_eq!(targets_in_subtree(1, 9, 12), 4);
        assert_eq!(targets_in_subtree(1, 7, 8), 2);
    }

    #[test]
    fn level_crossing_count() {
        // Targets 7 and 8 span two levels; subtree of 3 holds only 7.
        assert_eq!(targets_in_subtree(3, 7, 8), 1);
        assert_eq!(targets_in_subtree(2, 7, 8), 1);
    }

    #[test]
    fn starts_for_eight_plus_four() {
        // Targets 9..=12; split nodes are 2, 5 and 1.
        assert_eq!(insert_starts(8, 4), vec![1, 5, 11, 3]);
        assert_eq!(split_parent(9), 2);
        assert_eq!(split_parent(10), 5);
        assert_eq!(split_parent(11), 1);
    }

    #[test]
    fn single_insert_starts_at_root() {
        assert_eq!(insert_starts(5, 1), vec![1]);
    }

    #[test]
    fn starts_for_level_crossing_targets() {
        // Targets 7 and 8 cross a level boundary; their LCA is the root.
        assert_eq!(insert_starts(6, 2), vec![1, 3]);
    }

    #[test]
    fn sibling_targets_start_at_the_target() {
        // Targets 4 and 5 share parent 2, so the second descent starts at 5.
        assert_eq!(insert_starts(3, 2), vec![1, 5]);
    }

    proptest! {
        #[test]
        fn split_parent_matches_brute_force_lca(prev in 1usize..4096) {
            prop_assert_eq!(split_parent(prev), lca(prev, prev + 1));
        }

        #[test]
        fn subtree_count_matches_enumeration(
            v in 1usize..64,
            lo in 1usize..256,
            len in 0usize..8,
        ) {
            let hi = lo + len;
            let brute = (lo..=hi).filter(|&t| in_subtree(t, v)).count();
            prop_assert_eq!(targets_in_subtree(v, lo, hi), brute);
        }
    }
}
