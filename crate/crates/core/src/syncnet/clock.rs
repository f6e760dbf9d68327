use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

/// Handle returned by [`SimClock::schedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle {
    pub time: u64,
    pub seq: u64,
}

struct Scheduled<E> {
    handle: EventHandle,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        self.handle == other.handle
    }
}

impl<E> Eq for Scheduled<E> {}

impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.handle.cmp(&other.handle)
    }
}

/// Discrete-event clock in milliseconds. Events fire in `(time, sequence)`
/// order; `now` never decreases. An event scheduled in the past (because
/// work in an earlier event advanced the clock) fires immediately, late.
pub struct SimClock<E> {
    now: u64,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Scheduled<E>>>,
}

impl<E> Default for SimClock<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> SimClock<E> {
    pub fn new() -> Self {
        SimClock {
            now: 0,
            next_seq: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, delay: u64, event: E) -> EventHandle {
        self.schedule_at(self.now.saturating_add(delay), event)
    }

    pub fn schedule_at(&mut self, time: u64, event: E) -> EventHandle {
        let handle = EventHandle {
            time,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        self.queue.push(Reverse(Scheduled { handle, event }));
        handle
    }

    /// Moves the clock forward; never backward.
    pub fn advance(&mut self, delta: u64) {
        self.now = self.now.saturating_add(delta);
    }

    pub fn advance_to(&mut self, t: u64) {
        self.now = self.now.max(t);
    }

    pub fn next_time(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(s)| s.handle.time)
    }

    /// Pops the next event due at or before `until`, moving `now` to its
    /// time.
    pub fn pop_due(&mut self, until: u64) -> Option<(EventHandle, E)> {
        if self.next_time()? > until {
            return None;
        }
        let Reverse(s) = self.queue.pop()?;
        self.advance_to(s.handle.time);
        Some((s.handle, s.event))
    }

    /// Fires every event due at or before `until`, then leaves `now` at
    /// `until` (or later, if handlers advanced it).
    pub fn run_until(&mut self, until: u64, mut handler: impl FnMut(&mut Self, EventHandle, E)) -> usize {
        let mut processed = 0;
        while let Some((h, e)) = self.pop_due(until) {
            handler(self, h, e);
            processed += 1;
        }
        self.advance_to(until);
        processed
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_fire_in_insertion_order() {
        let mut c = SimClock::new();
        c.schedule(100, "A");
        c.schedule(100, "B");
        c.schedule(50, "C");
        let mut seen = Vec::new();
        let n = c.run_until(200, |_, h, e| seen.push((h.time, e)));
        assert_eq!(n, 3);
        assert_eq!(seen, vec![(50, "C"), (100, "A"), (100, "B")]);
        assert_eq!(c.now(), 200);
    }

    #[test]
    fn run_until_zero_on_empty_clock() {
        let mut c: SimClock<()> = SimClock::new();
        assert_eq!(c.run_until(0, |_, _, _| {}), 0);
    }

    #[test]
    fn time_never_decreases() {
        let mut c = SimClock::new();
        c.schedule(10, 1);
        c.schedule(20, 2);
        let mut times = Vec::new();
        c.run_until(100, |clock, _, e| {
            times.push(clock.now());
            if e == 1 {
                // work that overruns the next event
                clock.advance(50);
            }
        });
        assert_eq!(times, vec![10, 60]);
        assert!(c.now() >= 100);
    }

    #[test]
    fn events_past_horizon_stay_queued() {
        let mut c = SimClock::new();
        c.schedule(500, ());
        assert_eq!(c.run_until(499, |_, _, _| {}), 0);
        assert_eq!(c.pending(), 1);
        assert_eq!(c.run_until(500, |_, _, _| {}), 1);
    }
}
