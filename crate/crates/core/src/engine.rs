//! Discrete-event core: a virtual clock, an ordered future-event set and
//! labelled reproducible random streams.
//!
//! Events with equal fire times are dispatched in insertion order. The
//! ordering key is `(fire_time, sequence)`, so dispatch never depends on
//! memory layout or hashing.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Virtual time in seconds.
pub type SimTime = f64;

/// Cancellation token returned by [`Scheduler::schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

/// A dispatched event.
#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub fire_time: SimTime,
    pub handle: EventHandle,
    pub payload: P,
}

struct Pending<P> {
    fire_time: SimTime,
    seq: u64,
    payload: P,
}

impl<P> PartialEq for Pending<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Pending<P> {}

impl<P> PartialOrd for Pending<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Pending<P> {
    // Reversed so that the max-heap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .fire_time
            .total_cmp(&self.fire_time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Counters used to check that no event is ever lost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SchedulerStats {
    pub scheduled: u64,
    pub dispatched: u64,
    pub cancelled: u64,
}

/// Future-event set with a monotone clock.
pub struct Scheduler<P> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Pending<P>>,
    cancelled: HashSet<u64>,
    stats: SchedulerStats,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Self {
            now: 0.0,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            stats: SchedulerStats::default(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn stats(&self) -> SchedulerStats {
        self.stats
    }

    /// Number of events still waiting (cancelled ones excluded).
    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    /// Inserts an event.
    ///
    /// # Panics
    ///
    /// Scheduling in the past is a programming error and panics.
    pub fn schedule(&mut self, fire_time: SimTime, payload: P) -> EventHandle {
        assert!(
            fire_time >= self.now && fire_time.is_finite(),
            "event scheduled in the past: {fire_time} < {}",
            self.now
        );
        let seq = self.next_seq;
        self.next_seq += 1;
        self.stats.scheduled += 1;
        self.heap.push(Pending {
            fire_time,
            seq,
            payload,
        });
        EventHandle(seq)
    }

    pub fn schedule_in(&mut self, delay: SimTime, payload: P) -> EventHandle {
        self.schedule(self.now + delay, payload)
    }

    /// Cancels a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq || self.cancelled.contains(&handle.0) {
            return false;
        }
        if !self.heap.iter().any(|p| p.seq == handle.0) {
            return false;
        }
        self.cancelled.insert(handle.0);
        self.stats.cancelled += 1;
        true
    }

    /// Pops the next live event with `fire_time <= t_end`, advancing the
    /// clock to its fire time.
    pub fn pop_until(&mut self, t_end: SimTime) -> Option<Event<P>> {
        loop {
            let head = self.heap.peek()?;
            if head.fire_time > t_end {
                return None;
            }
            let p = self.heap.pop().expect("peeked");
            if self.cancelled.remove(&p.seq) {
                continue;
            }
            self.now = p.fire_time;
            self.stats.dispatched += 1;
            return Some(Event {
                fire_time: p.fire_time,
                handle: EventHandle(p.seq),
                payload: p.payload,
            });
        }
    }

    /// Dispatches every event up to and including `t_end` to `handler`,
    /// then sets the clock to `t_end`. Returns the number dispatched.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, Event<P>),
    {
        assert!(t_end >= self.now, "run_until into the past");
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            count += 1;
            handler(self, ev);
        }
        self.now = t_end;
        count
    }

    /// Drops all pending events without dispatching them; they are counted
    /// as cancelled.
    pub fn clear(&mut self) {
        let live = self.pending() as u64;
        self.stats.cancelled += live;
        self.heap.clear();
        self.cancelled.clear();
    }
}

/// Reproducible random stream keyed by `(global seed, label)`.
pub type RandomStream = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives the stream for `label` under `seed`. Streams for different
/// labels are seeded independently, so draws on one never shift another.
pub fn rng_stream(seed: u64, label: &str) -> RandomStream {
    let mut h = splitmix64(seed);
    for b in label.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(h.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_delay_fires_before_later_events() {
        let mut s = Scheduler::new();
        s.schedule(1.0, "late");
        s.schedule(0.0, "now");
        let mut order = Vec::new();
        s.run_until(2.0, |_, e| order.push(e.payload));
        assert_eq!(order, vec!["now", "late"]);
    }

    #[test]
    fn equal_times_dispatch_in_insertion_order() {
        let mut s = Scheduler::new();
        for i in 0..5 {
            s.schedule(3.0, i);
        }
        let mut order = Vec::new();
        s.run_until(3.0, |_, e| order.push(e.payload));
        assert_eq!(order, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn cancelled_event_is_never_dispatched() {
        let mut s = Scheduler::new();
        s.schedule(1.0, 'a');
        let b = s.schedule(2.0, 'b');
        s.schedule(3.0, 'c');
        assert!(s.cancel(b));
        assert!(!s.cancel(b));
        let mut seen = Vec::new();
        let n = s.run_until(10.0, |_, e| seen.push(e.payload));
        assert_eq!(n, 2);
        assert_eq!(seen, vec!['a', 'c']);
        let st = s.stats();
        assert_eq!(
            st.scheduled,
            st.dispatched + st.cancelled + s.pending() as u64
        );
    }

    #[test]
    fn empty_run_advances_clock() {
        let mut s: Scheduler<()> = Scheduler::new();
        assert_eq!(s.run_until(100.0, |_, _| {}), 0);
        assert_eq!(s.now(), 100.0);
    }

    #[test]
    fn periodic_event_counts() {
        let mut s = Scheduler::new();
        s.schedule(1.0, ());
        let n = s.run_until(10.0, |s, _| {
            s.schedule_in(1.0, ());
        });
        assert_eq!(n, 10);
        assert_eq!(s.run_until(10.0, |_, _| {}), 0);
    }

    #[test]
    #[should_panic(expected = "past")]
    fn scheduling_in_past_panics() {
        let mut s = Scheduler::new();
        s.run_until(5.0, |_, _: Event<()>| {});
        s.schedule(4.0, ());
    }

    #[test]
    fn streams_are_reproducible_and_seed_dependent() {
        let a: Vec<u64> = (0..8)
            .map({
                let mut r = rng_stream(1, "topology");
                move |_| r.gen()
            })
            .collect();
        let b: Vec<u64> = (0..8)
            .map({
                let mut r = rng_stream(1, "topology");
                move |_| r.gen()
            })
            .collect();
        let c: Vec<u64> = (0..8)
            .map({
                let mut r = rng_stream(2, "topology");
                move |_| r.gen()
            })
            .collect();
        let d: Vec<u64> = (0..8)
            .map({
                let mut r = rng_stream(1, "traffic");
                move |_| r.gen()
            })
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn uniform_mean_smoke() {
        let mut r = rng_stream(7, "contention");
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| r.gen::<f64>()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }
}
