//! Oracles and checkers for the batched structures.
//!
//! Every combining phase is the unit of verification: the multiset of
//! extract responses must be the k smallest elements of the pre-phase
//! state, the post-phase state must be the pre-state plus inserts minus
//! responses, and the per-phase linearization (extracts by increasing
//! response, then inserts) replayed against a sequential executor must
//! reproduce every response exactly. Instrumentation counters are checked
//! against the bounds the batched algorithm is designed to meet.
//!
//! # Phase-log text format
//!
//! A [`PhaseLog`] serializes as line-delimited records, one line per
//! operation:
//!
//! ```text
//! phase,m_pre,op,arg,res,iters,moves
//! ```
//!
//! `op` is `insert` or `extract`; unused fields are `-`; an extract that
//! found the queue empty records `empty` as its response. Lines of one phase
//! are contiguous. Example:
//!
//! ```text
//! 0,0,insert,42,-,0,0
//! 1,1,extract,-,42,1,0
//! 2,0,extract,-,empty,0,0
//! ```

pub mod sim;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::heap::tree::ceil_log2;
use crate::Value;

/// One recorded operation of a phase, with its instrumentation counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpRecord<T> {
    Insert { arg: T, iters: u64, moves: u64 },
    Extract { res: Option<T>, iters: u64 },
}

impl<T: Copy> OpRecord<T> {
    pub fn iters(&self) -> u64 {
        match self {
            OpRecord::Insert { iters, .. } | OpRecord::Extract { iters, .. } => *iters,
        }
    }

    pub fn moves(&self) -> u64 {
        match self {
            OpRecord::Insert { moves, .. } => *moves,
            OpRecord::Extract { .. } => 0,
        }
    }
}

/// Record of one combining phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseRecord<T> {
    pub phase: u64,
    /// Size of the structure before the phase.
    pub m_pre: usize,
    /// Batch contents with responses, extracts first in increasing response
    /// order, then inserts.
    pub ops: Vec<OpRecord<T>>,
}

impl<T: Copy> PhaseRecord<T> {
    pub fn extracts(&self) -> impl Iterator<Item = Option<T>> + '_ {
        self.ops.iter().filter_map(|op| match op {
            OpRecord::Extract { res, .. } => Some(*res),
            _ => None,
        })
    }

    pub fn inserts(&self) -> impl Iterator<Item = T> + '_ {
        self.ops.iter().filter_map(|op| match op {
            OpRecord::Insert { arg, .. } => Some(*arg),
            _ => None,
        })
    }
}

/// Phase records of one run, in phase order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseLog<T> {
    pub phases: Vec<PhaseRecord<T>>,
}

impl<T> Default for PhaseLog<T> {
    fn default() -> Self {
        PhaseLog { phases: Vec::new() }
    }
}

impl<T: Copy> PhaseLog<T> {
    pub fn total_ops(&self) -> usize {
        self.phases.iter().map(|p| p.ops.len()).sum()
    }
}

impl<T: Copy + fmt::Display> PhaseLog<T> {
    /// Write the log in the line format documented at module level.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for phase in &self.phases {
            for op in &phase.ops {
                match op {
                    OpRecord::Insert { arg, iters, moves } => writeln!(
                        w,
                        "{},{},insert,{arg},-,{iters},{moves}",
                        phase.phase, phase.m_pre
                    )?,
                    OpRecord::Extract { res, iters } => {
                        let res = match res {
                            Some(v) => v.to_string(),
                            None => "empty".to_string(),
                        };
                        writeln!(
                            w,
                            "{},{},extract,-,{res},{iters},0",
                            phase.phase, phase.m_pre
                        )?
                    }
                }
            }
        }
        Ok(())
    }
}

impl<T: Copy + FromStr> PhaseLog<T> {
    /// Parse a log written by [`PhaseLog::write_to`].
    pub fn read_from<R: BufRead>(r: R) -> Result<Self, String> {
        let mut log = PhaseLog::default();
        for (no, line) in r.lines().enumerate() {
            let line = line.map_err(|e| format!("line {}: {e}", no + 1))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let [phase, m_pre, op, arg, res, iters, moves] = fields[..] else {
                return Err(format!("line {}: expected 7 fields", no + 1));
            };
            let bad = |what: &str| format!("line {}: bad {what}", no + 1);
            let phase: u64 = phase.parse().map_err(|_| bad("phase"))?;
            let m_pre: usize = m_pre.parse().map_err(|_| bad("m_pre"))?;
            let iters: u64 = iters.parse().map_err(|_| bad("iters"))?;
            let record = match op {
                "insert" => OpRecord::Insert {
                    arg: arg.parse().map_err(|_| bad("arg"))?,
                    iters,
                    moves: moves.parse().map_err(|_| bad("moves"))?,
                },
                "extract" => OpRecord::Extract {
                    res: match res {
                        "empty" => None,
                        v => Some(v.parse().map_err(|_| bad("res"))?),
                    },
                    iters,
                },
                other => return Err(format!("line {}: unknown op {other}", no + 1)),
            };
            match log.phases.last_mut() {
                Some(last) if last.phase == phase => {
                    if last.m_pre != m_pre {
                        return Err(format!("line {}: m_pre changed within a phase", no + 1));
                    }
                    last.ops.push(record);
                }
                _ => log.phases.push(PhaseRecord {
                    phase,
                    m_pre,
                    ops: vec![record],
                }),
            }
        }
        Ok(log)
    }
}

/// Sorted multiset mirroring the abstract queue state; doubles as the
/// sequential reference executor for replay checks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MultisetOracle<T> {
    items: BTreeMap<T, usize>,
    len: usize,
}

impl<T: Value> MultisetOracle<T> {
    pub fn new() -> Self {
        MultisetOracle {
            items: BTreeMap::new(),
            len: 0,
        }
    }

    pub fn from_values(values: impl IntoIterator<Item = T>) -> Self {
        let mut set = Self::new();
        for v in values {
            set.insert(v);
        }
        set
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert(&mut self, v: T) {
        *self.items.entry(v).or_insert(0) += 1;
        self.len += 1;
    }

    pub fn extract_min(&mut self) -> Option<T> {
        let (&v, count) = self.items.iter_mut().next()?;
        *count -= 1;
        if *count == 0 {
            self.items.remove(&v);
        }
        self.len -= 1;
        Some(v)
    }

    pub fn remove(&mut self, v: T) -> bool {
        match self.items.get_mut(&v) {
            Some(count) => {
                *count -= 1;
                if *count == 0 {
                    self.items.remove(&v);
                }
                self.len -= 1;
                true
            }
            None => false,
        }
    }

    /// The k smallest elements in ascending order (k capped at the size).
    pub fn k_smallest(&self, k: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(k.min(self.len));
        'outer: for (&v, &count) in &self.items {
            for _ in 0..count {
                if out.len() == k {
                    break 'outer;
                }
                out.push(v);
            }
        }
        out
    }

    pub fn to_sorted_vec(&self) -> Vec<T> {
        self.k_smallest(self.len)
    }
}

/// A failed phase check, carrying a minimal counterexample.
#[derive(Debug, Clone)]
pub struct PhaseViolation {
    pub phase: u64,
    pub detail: String,
}

impl fmt::Display for PhaseViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "phase {}: {}", self.phase, self.detail)
    }
}

fn preview<T: fmt::Debug>(items: &[T]) -> String {
    const CAP: usize = 12;
    if items.len() <= CAP {
        format!("{items:?}")
    } else {
        format!("{:?}… ({} total)", &items[..CAP], items.len())
    }
}

/// Check one phase against the oracle and advance the oracle past it.
///
/// Passes iff the non-empty extract responses are exactly the
/// `min(|E|, |pre|)` smallest elements of the pre-phase multiset, empty
/// responses account for the rest, and (by construction of the update) the
/// post-state is pre ∪ inserts ∖ responses.
pub fn check_phase<T: Value + fmt::Debug>(
    record: &PhaseRecord<T>,
    oracle: &mut MultisetOracle<T>,
) -> Result<(), PhaseViolation> {
    let fail = |detail: String| PhaseViolation {
        phase: record.phase,
        detail,
    };
    if record.m_pre != oracle.len() {
        return Err(fail(format!(
            "recorded m_pre {} but oracle holds {} values",
            record.m_pre,
            oracle.len()
        )));
    }
    let responses: Vec<Option<T>> = record.extracts().collect();
    let served = oracle.len().min(responses.len());
    let mut got: Vec<T> = responses.iter().filter_map(|r| *r).collect();
    got.sort_unstable();
    let want = oracle.k_smallest(served);
    if got != want {
        return Err(fail(format!(
            "extract responses {} are not the {} smallest {}",
            preview(&got),
            served,
            preview(&want)
        )));
    }
    let empties = responses.len() - got.len();
    if empties != responses.len() - served {
        return Err(fail(format!(
            "{empties} empty responses, expected {}",
            responses.len() - served
        )));
    }
    for v in want {
        oracle.remove(v);
    }
    for arg in record.inserts() {
        oracle.insert(arg);
    }
    Ok(())
}

/// Replay the phase's linearization order (extracts by increasing response,
/// empties last, then inserts) against a sequential executor and demand an
/// exact response match.
pub fn check_linearization<T: Value + fmt::Debug>(
    record: &PhaseRecord<T>,
    executor: &mut MultisetOracle<T>,
) -> Result<(), PhaseViolation> {
    let mut extracts: Vec<Option<T>> = record.extracts().collect();
    extracts.sort_by_key(|r| (r.is_none(), *r));
    for (i, want) in extracts.into_iter().enumerate() {
        let got = executor.extract_min();
        if got != want {
            return Err(PhaseViolation {
                phase: record.phase,
                detail: format!("linearized extract {i} returned {got:?}, recorded {want:?}"),
            });
        }
    }
    for arg in record.inserts() {
        executor.insert(arg);
    }
    Ok(())
}

/// Run [`check_phase`] and [`check_linearization`] across a whole log,
/// starting from an empty structure; returns the final oracle state.
pub fn check_log<T: Value + fmt::Debug>(
    log: &PhaseLog<T>,
) -> Result<MultisetOracle<T>, PhaseViolation> {
    let mut oracle = MultisetOracle::new();
    let mut executor = MultisetOracle::new();
    for record in &log.phases {
        check_phase(record, &mut oracle)?;
        check_linearization(record, &mut executor)?;
    }
    debug_assert_eq!(oracle.to_sorted_vec(), executor.to_sorted_vec());
    Ok(oracle)
}

/// A violated instrumentation bound.
#[derive(Debug, Clone)]
pub struct BoundsViolation {
    pub phase: u64,
    pub detail: String,
}

impl fmt::Display for BoundsViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "phase {}: {}", self.phase, self.detail)
    }
}

/// Per-request iteration ceiling for a phase: `ceil(log2(m + c)) + 1`.
pub fn iteration_bound(m_pre: usize, batch: usize) -> u64 {
    u64::from(ceil_log2(m_pre + batch)) + 1
}

/// Phase-total split-move ceiling for `k` unpaired inserts:
/// `k * (ceil(log2 k) + 1)`.
pub fn split_move_bound(unpaired_inserts: usize) -> u64 {
    unpaired_inserts as u64 * (u64::from(ceil_log2(unpaired_inserts)) + 1)
}

/// Check the instrumentation counters of every phase: total split moves stay
/// under the move bound and every request's loop iterations stay under the
/// iteration ceiling.
pub fn check_bounds<T: Value>(log: &PhaseLog<T>) -> Result<(), BoundsViolation> {
    for record in &log.phases {
        let batch = record.ops.len();
        let extracts = record.extracts().count();
        let inserts = batch - extracts;
        let unpaired = inserts - extracts.min(inserts);
        let move_bound = split_move_bound(unpaired);
        let moves: u64 = record.ops.iter().map(OpRecord::moves).sum();
        if moves > move_bound {
            return Err(BoundsViolation {
                phase: record.phase,
                detail: format!(
                    "{moves} split moves exceed bound {move_bound} for {unpaired} inserts"
                ),
            });
        }
        let iter_bound = iteration_bound(record.m_pre, batch);
        for (i, op) in record.ops.iter().enumerate() {
            if op.iters() > iter_bound {
                return Err(BoundsViolation {
                    phase: record.phase,
                    detail: format!(
                        "op {i} ran {} iterations, bound {iter_bound} (m_pre {}, batch {batch})",
                        op.iters(),
                        record.m_pre
                    ),
                });
            }
        }
    }
    Ok(())
}

/// Union-find over `0..n`, rebuilt from scratch as a connectivity oracle.
#[derive(Debug, Clone)]
pub struct DisjointSets {
    parent: Vec<u32>,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n as u32).collect(),
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let mut sets = Self::new(n);
        for (u, v) in edges {
            sets.union(u, v);
        }
        sets
    }

    fn find(&mut self, mut v: u32) -> u32 {
        while self.parent[v as usize] != v {
            let grand = self.parent[self.parent[v as usize] as usize];
            self.parent[v as usize] = grand;
            v = grand;
        }
        v
    }

    pub fn union(&mut self, u: u32, v: u32) {
        let (ru, rv) = (self.find(u), self.find(v));
        if ru != rv {
            self.parent[ru as usize] = rv;
        }
    }

    pub fn connected(&mut self, u: u32, v: u32) -> bool {
        self.find(u) == self.find(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extract(res: Option<u64>) -> OpRecord<u64> {
        OpRecord::Extract { res, iters: 0 }
    }

    fn insert(arg: u64) -> OpRecord<u64> {
        OpRecord::Insert {
            arg,
            iters: 0,
            moves: 0,
        }
    }

    #[test]
    fn phase_with_two_smallest_passes() {
        let mut oracle = MultisetOracle::from_values([1u64, 2, 3]);
        let record = PhaseRecord {
            phase: 0,
            m_pre: 3,
            ops: vec![extract(Some(1)), extract(Some(2))],
        };
        check_phase(&record, &mut oracle).unwrap();
        assert_eq!(oracle.to_sorted_vec(), vec![3]);
    }

    #[test]
    fn non_minimal_response_fails() {
        let mut oracle = MultisetOracle::from_values([1u64, 2, 3]);
        let record = PhaseRecord {
            phase: 4,
            m_pre: 3,
            ops: vec![extract(Some(2))],
        };
        let err = check_phase(&record, &mut oracle).unwrap_err();
        assert_eq!(err.phase, 4);
    }

    #[test]
    fn insert_only_phase_grows_oracle() {
        let mut oracle = MultisetOracle::new();
        let record = PhaseRecord {
            phase: 0,
            m_pre: 0,
            ops: vec![insert(5), insert(2)],
        };
        check_phase(&record, &mut oracle).unwrap();
        assert_eq!(oracle.to_sorted_vec(), vec![2, 5]);
    }

    #[test]
    fn empty_extracts_only_after_exhaustion() {
        let mut oracle = MultisetOracle::from_values([7u64]);
        let record = PhaseRecord {
            phase: 0,
            m_pre: 1,
            ops: vec![extract(Some(7)), extract(None)],
        };
        check_phase(&record, &mut oracle).unwrap();
        assert!(oracle.is_empty());

        // An empty response while values remain is a violation.
        let mut oracle = MultisetOracle::from_values([7u64, 9]);
        let record = PhaseRecord {
            phase: 1,
            m_pre: 2,
            ops: vec![extract(Some(7)), extract(None)],
        };
        assert!(check_phase(&record, &mut oracle).is_err());
    }

    #[test]
    fn bounds_flag_excessive_moves() {
        let log = PhaseLog {
            phases: vec![PhaseRecord {
                phase: 0,
                m_pre: 100,
                ops: vec![OpRecord::Insert {
                    arg: 1u64,
                    iters: 2,
                    moves: 99,
                }],
            }],
        };
        assert!(check_bounds(&log).is_err());
    }

    #[test]
    fn log_round_trips_through_text() {
        let log = PhaseLog {
            phases: vec![
                PhaseRecord {
                    phase: 0,
                    m_pre: 0,
                    ops: vec![insert(42)],
                },
                PhaseRecord {
                    phase: 1,
                    m_pre: 1,
                    ops: vec![
                        OpRecord::Extract {
                            res: Some(42),
                            iters: 1,
                        },
                        extract(None),
                    ],
                },
            ],
        };
        let mut buf = Vec::new();
        log.write_to(&mut buf).unwrap();
        let parsed = PhaseLog::<u64>::read_from(&buf[..]).unwrap();
        assert_eq!(parsed, log);
    }

    #[test]
    fn union_find_matches_hand_edges() {
        let mut sets = DisjointSets::from_edges(5, [(0, 1), (1, 2)]);
        assert!(sets.connected(0, 2));
        assert!(!sets.connected(0, 3));
    }
}
