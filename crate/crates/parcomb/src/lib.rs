//! Concurrent data structures built from parallel batched algorithms.
//!
//! The core idea is *parallel combining*: concurrent operation calls are
//! explicitly synchronized into batches. One thread wins an election and
//! becomes the *combiner* for a phase; it collects the pending requests and
//! orchestrates a parallel batched algorithm in which the owners of the
//! collected requests (the *clients*) take part. Sequential combining, where
//! the combiner serves every request itself, is the degenerate case.
//!
//! The crate provides:
//!
//! * [`combining`] — the request type, the publication-list combining
//!   structure with combiner election, and the generic `execute` driver that
//!   routes a calling thread into combiner or client code.
//! * [`heap`] — a parallel batched binary-heap priority queue: the combiner
//!   prepares each phase (k-smallest selection, insert/extract pairing,
//!   split-node routing) and the clients run parallel hand-over-hand
//!   sift-downs and insert descents.
//! * [`read_optimized`] — a wrapper that turns any sequential structure with
//!   a read/update classification into a linearizable concurrent one whose
//!   reads run in parallel on the clients.
//! * [`graph`] — a small BFS-connectivity graph used as the read-optimized
//!   demo structure.
//! * [`sequential`] — sequential combining over any batch-applicable
//!   structure (the baseline mode).
//! * [`verify`] — phase logs, multiset and linearization oracles, quiescence
//!   and instrumentation-bound checkers, and a deterministic scheduler that
//!   enumerates all interleavings of small phases.
//! * [`bench`] — the workload harness behind the `parcomb-bench` binary.
//!
//! Runnable demos for each capability live in `examples/`.

pub mod bench;
pub mod combining;
pub mod graph;
pub mod heap;
pub mod read_optimized;
pub mod sequential;
pub mod verify;

/// Value types storable in the priority queue.
///
/// Values are moved between nodes by copy under the phase protocol, so the
/// bound is `Copy` rather than `Clone`.
pub trait Value: Copy + Ord + Send + 'static {}

impl<T: Copy + Ord + Send + 'static> Value for T {}
