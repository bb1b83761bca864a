//! Injectable time sources.
//!
//! Every scheduler and session reads time through [`Clock`]. The service
//! runs on [`SystemClock`]; simulations run on [`VirtualClock`], whose time
//! only moves when a task sleeps on it, so every event lands on its exact
//! scheduled millisecond regardless of how fast wall time passes.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use async_trait::async_trait;

#[async_trait]
pub trait Clock: Send + Sync {
    /// Current time in clock milliseconds.
    fn now_ms(&self) -> u64;

    /// Suspends until `now_ms() >= deadline_ms`.
    async fn sleep_until(&self, deadline_ms: u64);

    /// Wall-clock length of a span of clock time.
    fn wall_duration(&self, clock_ms: u64) -> Duration;
}

/// Wall clock, optionally running `scale` times faster than real time.
///
/// With `scale = 1` the reading is Unix milliseconds. A scaled reading is
/// Unix time multiplied by the scale, which stays monotone across process
/// restarts as long as the scale is unchanged.
#[derive(Debug, Clone)]
pub struct SystemClock {
    scale_milli: u128,
}

impl SystemClock {
    pub fn new(scale: f64) -> Self {
        assert!(scale.is_finite() && scale >= 0.001, "clock scale must be >= 0.001");
        SystemClock {
            scale_milli: (scale * 1000.0).round() as u128,
        }
    }

    pub fn real_time() -> Self {
        SystemClock::new(1.0)
    }

    fn scale(&self) -> f64 {
        self.scale_milli as f64 / 1000.0
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock::real_time()
    }
}

#[async_trait]
impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        let us = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .unwrap_or_default()
            .as_micros();
        (us * self.scale_milli / 1_000_000) as u64
    }

    async fn sleep_until(&self, deadline_ms: u64) {
        loop {
            let now = self.now_ms();
            if now >= deadline_ms {
                return;
            }
            tokio::time::sleep(self.wall_duration(deadline_ms - now)).await;
        }
    }

    fn wall_duration(&self, clock_ms: u64) -> Duration {
        Duration::from_secs_f64(clock_ms as f64 / 1000.0 / self.scale())
    }
}

/// Logical clock for simulations.
///
/// `pacing` is the speed-up relative to wall time: `Some(100.0)` makes a
/// 20-minute session take 12 s of wall time, `None` advances instantly.
#[derive(Debug)]
pub struct VirtualClock {
    now: AtomicU64,
    pacing: Option<f64>,
}

impl VirtualClock {
    pub fn new(start_ms: u64, pacing: Option<f64>) -> Self {
        if let Some(p) = pacing {
            assert!(p > 0.0, "pacing must be positive");
        }
        VirtualClock {
            now: AtomicU64::new(start_ms),
            pacing: pacing.filter(|p| p.is_finite()),
        }
    }

    pub fn instant(start_ms: u64) -> Self {
        VirtualClock::new(start_ms, None)
    }

    /// Moves time forward without sleeping. Never moves it backwards.
    pub fn advance_to(&self, t_ms: u64) {
        self.now.fetch_max(t_ms, Ordering::SeqCst);
    }
}

#[async_trait]
impl Clock for VirtualClock {
    fn now_ms(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    async fn sleep_until(&self, deadline_ms: u64) {
        let now = self.now_ms();
        if deadline_ms <= now {
            return;
        }
        if self.pacing.is_some() {
            tokio::time::sleep(self.wall_duration(deadline_ms - now)).await;
        }
        self.advance_to(deadline_ms);
    }

    fn wall_duration(&self, clock_ms: u64) -> Duration {
        match self.pacing {
            Some(p) => Duration::from_secs_f64(clock_ms as f64 / 1000.0 / p),
            None => Duration::from_millis(clock_ms),
        }
    }
}
