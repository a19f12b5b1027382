use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Token bucket gating request admission for one provider.
///
/// Shared by every worker that talks to the same endpoint; `acquire` blocks
/// until a token is available.
#[derive(Debug)]
pub struct RateLimiter {
    per_second: f64,
    capacity: f64,
    state: Mutex<Bucket>,
}

#[derive(Debug)]
struct Bucket {
    tokens: f64,
    last: Instant,
}

impl RateLimiter {
    /// `per_minute` requests on average with bursts up to `burst`.
    pub fn per_minute(per_minute: u32, burst: u32) -> Self {
        let capacity = burst.max(1) as f64;
        RateLimiter {
            per_second: per_minute as f64 / 60.0,
            capacity,
            state: Mutex::new(Bucket {
                tokens: capacity,
                last: Instant::now(),
            }),
        }
    }

    pub fn unlimited() -> Self {
        RateLimiter {
            per_second: f64::INFINITY,
            capacity: f64::INFINITY,
            state: Mutex::new(Bucket {
                tokens: f64::INFINITY,
                last: Instant::now(),
            }),
        }
    }

    pub fn acquire(&self) {
        while let Some(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }

    /// Takes a token if one is available, otherwise returns how long to wait.
    pub fn try_acquire(&self) -> Option<Duration> {
        if self.per_second.is_infinite() {
            return None;
        }
        let mut b = self.state.lock().expect("rate limiter poisoned");
        let now = Instant::now();
        let elapsed = now.duration_since(b.last).as_secs_f64();
        b.tokens = (b.tokens + elapsed * self.per_second).min(self.capacity);
        b.last = now;
        if b.tokens >= 1.0 {
            b.tokens -= 1.0;
            None
        } else if self.per_second <= 0.0 {
            Some(Duration::from_secs(1))
        } else {
            Some(Duration::from_secs_f64((1.0 - b.tokens) / self.per_second))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burst_then_throttle() {
        let l = RateLimiter::per_minute(60, 3);
        assert!(l.try_acquire().is_none());
        assert!(l.try_acquire().is_none());
        assert!(l.try_acquire().is_none());
        let wait = l.try_acquire().expect("bucket drained");
        assert!(wait <= Duration::from_secs(1) && wait > Duration::from_millis(900));
    }

    #[test]
    fn unlimited_never_waits() {
        let l = RateLimiter::unlimited();
        for _ in 0..1000 {
            assert!(l.try_acquire().is_none());
        }
    }

    #[test]
    fn refills_over_time() {
        let l = RateLimiter::per_minute(60_000, 1);
        assert!(l.try_acquire().is_none());
        std::thread::sleep(Duration::from_millis(5));
        assert!(l.try_acquire().is_none());
    }
}
