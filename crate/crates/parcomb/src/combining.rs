//! The combining structure: published requests, combiner election, and the
//! generic execute driver.
//!
//! Threads register once and receive a publication record. To run an
//! operation a thread publishes a request in its record and either wins the
//! combiner election (a one-word lock) or spins as a client until a combiner
//! serves it. The combiner collects every pending request in one scan of the
//! publication list, runs the behavior's combiner code on the batch, and
//! releases the lock. While a client spins it keeps retrying the election so
//! a request left pending after a release is always picked up.
//!
//! Memory-ordering contract: a status word is written with release ordering
//! after all payload writes (operation, result, routing fields) and read with
//! acquire ordering, so observing a status value publishes the payload
//! written before it. Everything else on the record is a single word with
//! relaxed ordering riding on those edges.

use std::cell::UnsafeCell;
use std::marker::PhantomData;
use std::ptr::NonNull;
use std::sync::atomic::{AtomicBool, AtomicPtr, AtomicU32, AtomicU64, AtomicU8, AtomicUsize, Ordering};

use crossbeam_utils::{Backoff, CachePadded};

/// Status of a published request.
///
/// Transitions only move forward: `Initial` to `Started` or `Sift` to
/// `Finished` (a request served entirely by the combiner may jump straight to
/// `Finished`). Only the combiner writes `Started` or `Sift`; `Finished` is
/// written by whichever party completes the request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum Status {
    Initial = 0,
    Started = 1,
    Sift = 2,
    Finished = 3,
}

impl Status {
    fn from_u8(v: u8) -> Status {
        match v {
            0 => Status::Initial,
            1 => Status::Started,
            2 => Status::Sift,
            _ => Status::Finished,
        }
    }
}

/// Role assigned by [`PublicationList::add_request`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Combiner,
    Client,
}

/// A published operation descriptor.
///
/// The operation is written by the owner before publishing; the result slot
/// is written by the serving party before the `Finished` transition. `start`
/// and the leaf range are routing fields used by the heap protocol and are
/// written by the combiner before the request leaves `Initial`. The
/// iteration and move counters instrument the serving loops.
pub struct Request<O, R> {
    status: AtomicU8,
    op: UnsafeCell<Option<O>>,
    res: UnsafeCell<Option<R>>,
    start: AtomicUsize,
    leaf_lo: AtomicUsize,
    leaf_hi: AtomicUsize,
    iters: AtomicU64,
    moves: AtomicU64,
}

impl<O, R> Request<O, R> {
    pub(crate) fn empty() -> Self {
        Request {
            // Fresh records look served so scans skip them.
            status: AtomicU8::new(Status::Finished as u8),
            op: UnsafeCell::new(None),
            res: UnsafeCell::new(None),
            start: AtomicUsize::new(0),
            leaf_lo: AtomicUsize::new(0),
            leaf_hi: AtomicUsize::new(0),
            iters: AtomicU64::new(0),
            moves: AtomicU64::new(0),
        }
    }

    /// Publish a new operation in this request slot.
    ///
    /// # Safety
    ///
    /// Only the owning thread may call this, and only while the request has
    /// no pending (non-`Finished`) operation. A finished request may be
    /// republished as soon as its owner observes `Finished`, so a combiner
    /// must not touch the cells of a request after completing it; anything it
    /// needs later (the operation, the response) it copies while the request
    /// is still pending.
    pub(crate) unsafe fn publish(&self, op: O) {
        debug_assert_eq!(self.status(), Status::Finished);
        *self.op.get() = Some(op);
        *self.res.get() = None;
        self.status.store(Status::Initial as u8, Ordering::Release);
    }

    pub fn status(&self) -> Status {
        Status::from_u8(self.status.load(Ordering::Acquire))
    }

    /// Move the status forward. Panics in debug builds on a regression.
    pub fn advance(&self, to: Status) {
        let prev = self.status.swap(to as u8, Ordering::AcqRel);
        debug_assert!(
            prev < to as u8,
            "status regression: {:?} -> {:?}",
            Status::from_u8(prev),
            to
        );
    }

    /// Read the published operation.
    ///
    /// # Safety
    ///
    /// The caller must hold the request under the phase protocol (it is the
    /// owner, or a combiner that collected it) and must not keep the
    /// reference past the request's `Finished` transition back to the owner.
    pub unsafe fn op(&self) -> &O {
        (*self.op.get()).as_ref().expect("request has no operation")
    }

    /// Write the result without changing the status.
    ///
    /// # Safety
    ///
    /// Only the single party serving the request under the phase protocol
    /// may call this.
    pub unsafe fn set_result(&self, res: R) {
        *self.res.get() = Some(res);
    }

    /// Write the result and mark the request served.
    ///
    /// # Safety
    ///
    /// Only the single party serving the request under the phase protocol
    /// may call this, exactly once per published operation.
    pub unsafe fn complete(&self, res: R) {
        *self.res.get() = Some(res);
        self.advance(Status::Finished);
    }

    /// Take the result after completion.
    ///
    /// # Safety
    ///
    /// Owner only, after it has observed `Finished`.
    pub(crate) unsafe fn take_result(&self) -> Option<R> {
        (*self.res.get()).take()
    }

    /// Read the result of a finished request without consuming it.
    ///
    /// # Safety
    ///
    /// Owner only (or a scripted driver that owns every request), after
    /// `Finished` was observed for the current operation.
    pub unsafe fn peek_result(&self) -> Option<&R> {
        (*self.res.get()).as_ref()
    }

    /// Zero the instrumentation counters.
    ///
    /// Called by the combiner when it collects a request, before any serving
    /// loop can increment them; resetting at publication instead would race
    /// with a combiner still reading the previous operation's counters.
    pub fn reset_counters(&self) {
        self.iters.store(0, Ordering::Relaxed);
        self.moves.store(0, Ordering::Relaxed);
    }

    /// Overwrite the status without the forward-only check. Used by the
    /// deterministic scheduler to restore snapshots.
    pub(crate) fn force_status(&self, s: Status) {
        self.status.store(s as u8, Ordering::Relaxed);
    }

    /// Overwrite the result slot. Scheduler restore only.
    ///
    /// # Safety
    ///
    /// Single-threaded access to the request.
    pub(crate) unsafe fn force_result(&self, res: Option<R>) {
        *self.res.get() = res;
    }

    /// Overwrite the counters. Scheduler restore only.
    pub(crate) fn force_counters(&self, iters: u64, moves: u64) {
        self.iters.store(iters, Ordering::Relaxed);
        self.moves.store(moves, Ordering::Relaxed);
    }

    pub fn start(&self) -> usize {
        self.start.load(Ordering::Relaxed)
    }

    /// Set by the combiner before the request leaves `Initial`.
    pub fn set_start(&self, v: usize) {
        self.start.store(v, Ordering::Relaxed);
    }

    pub fn leaf_range(&self) -> (usize, usize) {
        (
            self.leaf_lo.load(Ordering::Relaxed),
            self.leaf_hi.load(Ordering::Relaxed),
        )
    }

    pub fn set_leaf_range(&self, lo: usize, hi: usize) {
        self.leaf_lo.store(lo, Ordering::Relaxed);
        self.leaf_hi.store(hi, Ordering::Relaxed);
    }

    /// Loop iterations spent serving this request (sift-down steps or insert
    /// descent steps).
    pub fn iterations(&self) -> u64 {
        self.iters.load(Ordering::Relaxed)
    }

    pub fn add_iterations(&self, n: u64) {
        self.iters.fetch_add(n, Ordering::Relaxed);
    }

    /// Insert-set elements moved by splits performed for this request.
    pub fn split_moves(&self) -> u64 {
        self.moves.load(Ordering::Relaxed)
    }

    pub fn add_split_moves(&self, n: u64) {
        self.moves.fetch_add(n, Ordering::Relaxed);
    }
}

/// A registered thread's slot in the publication list.
struct PubRecord<O, R> {
    req: Request<O, R>,
    next: AtomicPtr<PubRecord<O, R>>,
    owner: u64,
    active: AtomicBool,
}

// Requests are handed between the owner and the combiner under the status
// protocol; the cells are never accessed concurrently.
unsafe impl<O: Send, R: Send> Sync for PubRecord<O, R> {}
unsafe impl<O: Send, R: Send> Send for PubRecord<O, R> {}

/// Combiner and client code for one kind of batched structure.
///
/// `combiner` receives every collected request (the combiner's own request
/// is an element of `batch`) and must drive each of them to `Finished`
/// before returning. `client` runs on the owning thread once its request's
/// status has left `Initial`.
pub trait Behavior<O, R>: Sync {
    fn combiner(&self, batch: &[&Request<O, R>], own: &Request<O, R>);
    fn client(&self, req: &Request<O, R>);
}

/// The combining structure: a flat-combining publication list with a
/// one-word combiner lock.
pub struct PublicationList<O, R> {
    head: AtomicPtr<PubRecord<O, R>>,
    lock: CachePadded<AtomicBool>,
    /// Instrumented mutual-exclusion counter; never exceeds one.
    in_combiner: AtomicU32,
    phases: AtomicU64,
    next_owner: AtomicU64,
}

unsafe impl<O: Send, R: Send> Sync for PublicationList<O, R> {}
unsafe impl<O: Send, R: Send> Send for PublicationList<O, R> {}

/// A registered thread's handle to its publication record.
///
/// One token per thread; the token is `Send` but deliberately not `Sync` or
/// `Clone` so a record never carries two pending requests.
pub struct Token<O, R> {
    rec: NonNull<PubRecord<O, R>>,
    _not_sync: PhantomData<std::cell::Cell<()>>,
}

unsafe impl<O: Send, R: Send> Send for Token<O, R> {}

impl<O, R> Token<O, R> {
    fn rec(&self) -> &PubRecord<O, R> {
        // The list never frees records while it is alive, and tokens are
        // only used with the list that issued them.
        unsafe { self.rec.as_ref() }
    }

    pub fn request(&self) -> &Request<O, R> {
        &self.rec().req
    }
}

impl<O, R> PublicationList<O, R> {
    pub fn new() -> Self {
        PublicationList {
            head: AtomicPtr::new(std::ptr::null_mut()),
            lock: CachePadded::new(AtomicBool::new(false)),
            in_combiner: AtomicU32::new(0),
            phases: AtomicU64::new(0),
            next_owner: AtomicU64::new(0),
        }
    }

    /// Register the calling thread; records are never evicted.
    pub fn register(&self) -> Token<O, R> {
        let owner = self.next_owner.fetch_add(1, Ordering::Relaxed);
        let rec = Box::into_raw(Box::new(PubRecord {
            req: Request::empty(),
            next: AtomicPtr::new(std::ptr::null_mut()),
            owner,
            active: AtomicBool::new(true),
        }));
        let mut head = self.head.load(Ordering::Relaxed);
        loop {
            unsafe { (*rec).next.store(head, Ordering::Relaxed) };
            match self
                .head
                .compare_exchange(head, rec, Ordering::Release, Ordering::Relaxed)
            {
                Ok(_) => break,
                Err(cur) => head = cur,
            }
        }
        Token {
            rec: NonNull::new(rec).unwrap(),
            _not_sync: PhantomData,
        }
    }

    fn try_lock(&self) -> bool {
        !self.lock.load(Ordering::Relaxed)
            && self
                .lock
                .compare_exchange(false, true, Ordering::Acquire, Ordering::Relaxed)
                .is_ok()
    }

    /// Publish a request and attempt the combiner election once.
    pub fn add_request(&self, token: &Token<O, R>, op: O) -> Role {
        // The token is not Sync and execute completes before returning, so
        // the record has no pending request here.
        unsafe { token.rec().req.publish(op) };
        if self.try_lock() {
            Role::Combiner
        } else {
            Role::Client
        }
    }

    /// Collect every request published before the scan that is still
    /// `Initial`. Caller must hold the combiner lock.
    pub fn get_requests(&self) -> Vec<&Request<O, R>> {
        let mut out = Vec::new();
        let mut cur = self.head.load(Ordering::Acquire);
        while let Some(rec) = unsafe { cur.as_ref() } {
            if rec.active.load(Ordering::Relaxed) && rec.req.status() == Status::Initial {
                out.push(&rec.req);
            }
            cur = rec.next.load(Ordering::Acquire);
        }
        out
    }

    /// Release the combiner lock. Panics if the lock is not held.
    pub fn release(&self) {
        let prev = self.lock.swap(false, Ordering::Release);
        assert!(prev, "combiner lock released while free");
    }

    /// Number of combining phases started so far.
    pub fn phases(&self) -> u64 {
        self.phases.load(Ordering::Relaxed)
    }

    fn run_phase<B: Behavior<O, R>>(&self, own: &Request<O, R>, behavior: &B) {
        let nesting = self.in_combiner.fetch_add(1, Ordering::AcqRel);
        assert_eq!(nesting, 0, "two combiners active at once");
        self.phases.fetch_add(1, Ordering::Relaxed);

        let batch = self.get_requests();
        debug_assert!(!batch.is_empty());
        behavior.combiner(&batch, own);

        self.in_combiner.fetch_sub(1, Ordering::AcqRel);
        self.release();
    }

    /// Run one operation to completion: publish, then serve it as the
    /// combiner or wait for a combiner and run the client code.
    pub fn execute<B: Behavior<O, R>>(&self, token: &Token<O, R>, op: O, behavior: &B) -> R {
        let req = token.request();
        match self.add_request(token, op) {
            Role::Combiner => {
                // The election can be won after another combiner already
                // served this request; there is nothing left to combine then.
                if req.status() == Status::Initial {
                    self.run_phase(req, behavior);
                } else {
                    self.release();
                }
            }
            Role::Client => {
                let backoff = Backoff::new();
                loop {
                    if req.status() != Status::Initial {
                        behavior.client(req);
                        break;
                    }
                    // Retry the election so a request left pending after a
                    // release is always picked up.
                    if self.try_lock() {
                        if req.status() == Status::Initial {
                            self.run_phase(req, behavior);
                        } else {
                            self.release();
                            behavior.client(req);
                        }
                        break;
                    }
                    backoff.snooze();
                }
            }
        }
        debug_assert_eq!(req.status(), Status::Finished);
        unsafe { req.take_result() }.expect("request finished without a result")
    }
}

impl<O, R> Default for PublicationList<O, R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<O, R> Drop for PublicationList<O, R> {
    fn drop(&mut self) {
        let mut cur = *self.head.get_mut();
        while !cur.is_null() {
            let boxed = unsafe { Box::from_raw(cur) };
            cur = boxed.next.load(Ordering::Relaxed);
        }
    }
}

/// Spin until the request reaches `Finished`, yielding under contention.
pub fn wait_finished<O, R>(req: &Request<O, R>) {
    let backoff = Backoff::new();
    while req.status() != Status::Finished {
        backoff.snooze();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU64;
    use std::sync::{Arc, Barrier};

    /// Sequential combining over a shared counter: the combiner serves
    /// everything, client code is empty.
    struct CounterBehavior {
        value: AtomicU64,
    }

    impl Behavior<u64, u64> for CounterBehavior {
        fn combiner(&self, batch: &[&Request<u64, u64>], _own: &Request<u64, u64>) {
            for req in batch {
                let add = unsafe { *req.op() };
                let new = self.value.load(Ordering::Relaxed) + add;
                self.value.store(new, Ordering::Relaxed);
                unsafe { req.complete(new) };
            }
        }

        fn client(&self, _req: &Request<u64, u64>) {}
    }

    #[test]
    fn single_thread_becomes_combiner() {
        let list = PublicationList::<u64, u64>::new();
        let tok = list.register();
        assert_eq!(list.add_request(&tok, 1), Role::Combiner);
        let batch = list.get_requests();
        assert_eq!(batch.len(), 1);
        unsafe { batch[0].complete(1) };
        list.release();
    }

    #[test]
    fn second_publisher_is_client_and_is_scanned() {
        // Scripted two-token schedule on one thread.
        let list = PublicationList::<u64, u64>::new();
        let t1 = list.register();
        let t2 = list.register();
        assert_eq!(list.add_request(&t1, 1), Role::Combiner);
        assert_eq!(list.add_request(&t2, 2), Role::Client);
        let batch = list.get_requests();
        assert_eq!(batch.len(), 2);
        for req in &batch {
            unsafe { req.complete(0) };
        }
        list.release();
    }

    #[test]
    fn publish_after_scan_lands_in_next_phase() {
        let list = PublicationList::<u64, u64>::new();
        let t1 = list.register();
        let t2 = list.register();
        assert_eq!(list.add_request(&t1, 1), Role::Combiner);
        let batch = list.get_requests();
        assert_eq!(batch.len(), 1);
        // Publication racing the scan: here it lands strictly after.
        assert_eq!(list.add_request(&t2, 2), Role::Client);
        unsafe { batch[0].complete(0) };
        list.release();
        // The request was not lost; the next election finds it.
        assert!(list.try_lock());
        let next = list.get_requests();
        assert_eq!(next.len(), 1);
        unsafe { next[0].complete(0) };
        list.release();
    }

    #[test]
    #[should_panic(expected = "released while free")]
    fn double_release_is_rejected() {
        let list = PublicationList::<u64, u64>::new();
        let tok = list.register();
        assert_eq!(list.add_request(&tok, 1), Role::Combiner);
        unsafe { list.get_requests()[0].complete(0) };
        list.release();
        list.release();
    }

    #[test]
    fn release_lets_pending_client_win() {
        let list = PublicationList::<u64, u64>::new();
        let t1 = list.register();
        let t2 = list.register();
        assert_eq!(list.add_request(&t1, 1), Role::Combiner);
        assert_eq!(list.add_request(&t2, 2), Role::Client);
        // Serve only the first request, then release.
        unsafe { t1.request().complete(0) };
        list.release();
        // The pending client can now win the election itself.
        assert!(list.try_lock());
        assert_eq!(list.get_requests().len(), 1);
        unsafe { t2.request().complete(0) };
        list.release();
    }

    #[test]
    fn sequential_combining_counter() {
        let behavior = Arc::new(CounterBehavior {
            value: AtomicU64::new(0),
        });
        let list = Arc::new(PublicationList::<u64, u64>::new());
        let barrier = Arc::new(Barrier::new(4));
        let mut joins = Vec::new();
        for _ in 0..4 {
            let (list, behavior, barrier) = (list.clone(), behavior.clone(), barrier.clone());
            joins.push(std::thread::spawn(move || {
                let tok = list.register();
                barrier.wait();
                list.execute(&tok, 1, &*behavior)
            }));
        }
        for j in joins {
            j.join().unwrap();
        }
        assert_eq!(behavior.value.load(Ordering::Relaxed), 4);
    }

    #[test]
    fn single_thread_equals_sequential_application() {
        let behavior = CounterBehavior {
            value: AtomicU64::new(0),
        };
        let list = PublicationList::<u64, u64>::new();
        let tok = list.register();
        for i in 1..=10 {
            assert_eq!(list.execute(&tok, 1, &behavior), i);
        }
    }

    #[test]
    fn status_flip_publishes_payload() {
        // Race a payload behind the status word: a reader that observes a
        // non-Initial status must see the writer's payload.
        let list = Arc::new(PublicationList::<u64, u64>::new());
        for round in 0..2000u64 {
            let list = list.clone();
            let writer = {
                let list = list.clone();
                std::thread::spawn(move || {
                    let tok = list.register();
                    unsafe { tok.request().publish(round) };
                    tok
                })
            };
            let tok = writer.join().unwrap();
            let req = tok.request();
            assert_eq!(req.status(), Status::Initial);
            assert_eq!(unsafe { *req.op() }, round);
            unsafe { req.complete(round) };
        }
    }

    #[test]
    fn no_lost_requests_under_stress() {
        let behavior = Arc::new(CounterBehavior {
            value: AtomicU64::new(0),
        });
        let list = Arc::new(PublicationList::<u64, u64>::new());
        let threads = 4;
        let per_thread = 500u64;
        let barrier = Arc::new(Barrier::new(threads));
        let mut joins = Vec::new();
        for _ in 0..threads {
            let (list, behavior, barrier) = (list.clone(), behavior.clone(), barrier.clone());
            joins.push(std::thread::spawn(move || {
                let tok = list.register();
                barrier.wait();
                for _ in 0..per_thread {
                    list.execute(&tok, 1, &*behavior);
                }
            }));
        }
        for j in joins {
            j.join().unwrap();
        }
        assert_eq!(
            behavior.value.load(Ordering::Relaxed),
            threads as u64 * per_thread
        );
    }
}
