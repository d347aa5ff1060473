//! Concurrency cap plus a requests-per-minute token bucket.

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

struct State {
    in_flight: usize,
    tokens: f64,
    refilled: Instant,
}

pub struct RateLimiter {
    max_in_flight: usize,
    per_minute: Option<f64>,
    state: Mutex<State>,
    cv: Condvar,
}

/// Held while a request is in flight.
pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut s = self.limiter.state.lock().expect("limiter poisoned");
        s.in_flight -= 1;
        self.limiter.cv.notify_one();
    }
}

impl RateLimiter {
    /// `requests_per_minute == 0` disables the bucket.
    pub fn new(max_in_flight: usize, requests_per_minute: u32) -> Self {
        let per_minute = (requests_per_minute > 0).then_some(requests_per_minute as f64);
        Self {
            max_in_flight: max_in_flight.max(1),
            per_minute,
            state: Mutex::new(State {
                in_flight: 0,
                tokens: per_minute.unwrap_or(0.0),
                refilled: Instant::now(),
            }),
            cv: Condvar::new(),
        }
    }

    pub fn unlimited() -> Self {
        Self::new(usize::MAX, 0)
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut s = self.state.lock().expect("limiter poisoned");
        loop {
            if let Some(rpm) = self.per_minute {
                let now = Instant::now();
                let elapsed = now.duration_since(s.refilled).as_secs_f64();
                s.tokens = (s.tokens + elapsed * rpm / 60.0).min(rpm);
                s.refilled = now;
            }
            let has_token = self.per_minute.is_none() || s.tokens >= 1.0;
            if s.in_flight < self.max_in_flight && has_token {
                s.in_flight += 1;
                if self.per_minute.is_some() {
                    s.tokens -= 1.0;
                }
                return Permit { limiter: self };
            }
            let wait = match self.per_minute {
                Some(rpm) if !has_token => {
                    Duration::from_secs_f64(((1.0 - s.tokens) * 60.0 / rpm).max(0.001))
                }
                _ => Duration::from_millis(50),
            };
            s = self.cv.wait_timeout(s, wait).expect("limiter poisoned").0;
        }
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().expect("limiter poisoned").in_flight
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn caps_concurrency() {
        let limiter = Arc::new(RateLimiter::new(2, 0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (limiter, peak) = (limiter.clone(), peak.clone());
                s.spawn(move || {
                    let _p = limiter.acquire();
                    peak.fetch_max(limiter.in_flight(), Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(10));
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(limiter.in_flight(), 0);
    }

    #[test]
    fn bucket_throttles_after_burst() {
        // 600 rpm = one token per 100 ms after the initial burst of 600.
        let limiter = RateLimiter::new(10, 600);
        {
            let mut s = limiter.state.lock().unwrap();
            s.tokens = 1.0;
        }
        let start = Instant::now();
        drop(limiter.acquire());
        drop(limiter.acquire());
        assert!(start.elapsed() >= Duration::from_millis(80));
    }
}
