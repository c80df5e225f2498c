//! Clocks, request-rate ceiling and retry backoff.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use rand::Rng;

pub trait Clock: Send + Sync {
    /// Monotonic time since the clock was created.
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
    fn wall(&self) -> DateTime<Utc>;
}

pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            start: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.start.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }

    fn wall(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Simulated clock: `sleep` advances time instantly.
pub struct ManualClock {
    epoch: DateTime<Utc>,
    elapsed: Mutex<Duration>,
    slept: Mutex<Vec<Duration>>,
}

impl ManualClock {
    pub fn new(epoch: DateTime<Utc>) -> Self {
        ManualClock {
            epoch,
            elapsed: Mutex::new(Duration::ZERO),
            slept: Mutex::new(Vec::new()),
        }
    }

    pub fn advance(&self, by: Duration) {
        *self.elapsed.lock().expect("clock lock") += by;
    }

    /// Every sleep requested so far, in order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.slept.lock().expect("clock lock").clone()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Duration {
        *self.elapsed.lock().expect("clock lock")
    }

    fn sleep(&self, duration: Duration) {
        self.slept.lock().expect("clock lock").push(duration);
        self.advance(duration);
    }

    fn wall(&self) -> DateTime<Utc> {
        self.epoch + chrono::Duration::from_std(self.now()).unwrap_or_default()
    }
}

/// At most `max_requests` admissions in any sliding `window`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateLimit {
    pub max_requests: u32,
    pub window: Duration,
}

impl RateLimit {
    pub fn per_second(max_requests: u32) -> Self {
        RateLimit {
            max_requests,
            window: Duration::from_secs(1),
        }
    }
}

pub struct RateLimiter {
    limit: RateLimit,
    issued: Mutex<VecDeque<Duration>>,
    log: Mutex<Option<Vec<Duration>>>,
}

impl RateLimiter {
    pub fn new(limit: RateLimit) -> Self {
        RateLimiter {
            limit,
            issued: Mutex::new(VecDeque::new()),
            log: Mutex::new(None),
        }
    }

    /// Keeps every admission time for inspection by tests.
    pub fn with_log(self) -> Self {
        *self.log.lock().expect("limiter lock") = Some(Vec::new());
        self
    }

    pub fn admissions(&self) -> Vec<Duration> {
        self.log.lock().expect("limiter lock").clone().unwrap_or_default()
    }

    /// Blocks until a request may be issued and records it.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut issued = self.issued.lock().expect("limiter lock");
                let now = clock.now();
                while issued
                    .front()
                    .is_some_and(|t| now.saturating_sub(*t) >= self.limit.window)
                {
                    issued.pop_front();
                }
                if issued.len() < self.limit.max_requests as usize {
                    issued.push_back(now);
                    if let Some(log) = self.log.lock().expect("limiter lock").as_mut() {
                        log.push(now);
                    }
                    return;
                }
                (issued[0] + self.limit.window).saturating_sub(now)
            };
            clock.sleep(wait.max(Duration::from_millis(1)));
        }
    }
}

/// Exponential backoff before retry number `retry` (1-based), scaled by a
/// random factor in `[0.5, 1.0)` and capped at `max`.
pub fn backoff_delay(retry: u32, base: Duration, max: Duration, rng: &mut impl Rng) -> Duration {
    let exp = base.saturating_mul(1u32 << retry.saturating_sub(1).min(20));
    let jitter: f64 = rng.random_range(0.5..1.0);
    exp.min(max).mul_f64(jitter)
}
