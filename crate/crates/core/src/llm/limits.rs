//! Shared throttles for backend traffic: an in-flight cap and a token bucket.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Counting semaphore that also records the peak number of holders.
#[derive(Debug)]
pub struct InFlightGate {
    limit: usize,
    current: Mutex<usize>,
    freed: Condvar,
    peak: AtomicUsize,
}

impl InFlightGate {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn acquire(&self) -> InFlightPermit<'_> {
        let mut current = self.current.lock().expect("in-flight gate poisoned");
        while *current >= self.limit {
            current = self.freed.wait(current).expect("in-flight gate poisoned");
        }
        *current += 1;
        self.peak.fetch_max(*current, Ordering::SeqCst);
        InFlightPermit { gate: self }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    /// Highest number of simultaneous holders observed so far.
    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

pub struct InFlightPermit<'a> {
    gate: &'a InFlightGate,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        let mut current = self.gate.current.lock().expect("in-flight gate poisoned");
        *current -= 1;
        self.gate.freed.notify_one();
    }
}

/// Token bucket refilled continuously at `requests_per_minute / 60` per
/// second, with a burst capacity of one minute's worth of requests.
#[derive(Debug)]
pub struct RateLimiter {
    per_second: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl RateLimiter {
    pub fn per_minute(requests_per_minute: u32) -> Self {
        let capacity = f64::from(requests_per_minute.max(1));
        Self {
            per_second: capacity / 60.0,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Blocks until a token is available, then consumes it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                let (tokens, last) = *state;
                let tokens = (tokens + now.duration_since(last).as_secs_f64() * self.per_second)
                    .min(self.capacity);
                if tokens >= 1.0 {
                    *state = (tokens - 1.0, now);
                    return;
                }
                *state = (tokens, now);
                Duration::from_secs_f64((1.0 - tokens) / self.per_second)
            };
            std::thread::sleep(wait);
        }
    }
}
