//! Monotonic and virtual time sources.
//!
//! All stamps are nanoseconds. Real clocks count from a process-wide epoch
//! taken on first use; virtual clocks only move when advanced.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

static PROCESS_EPOCH: OnceLock<Instant> = OnceLock::new();

fn process_epoch() -> Instant {
    *PROCESS_EPOCH.get_or_init(Instant::now)
}

/// Convert seconds to whole nanoseconds (rounded).
pub fn secs_to_nanos(secs: f64) -> u64 {
    (secs * NANOS_PER_SEC as f64).round() as u64
}

pub fn nanos_to_secs(ns: u64) -> f64 {
    ns as f64 / NANOS_PER_SEC as f64
}

/// Period of a rate in nanoseconds, rounded to the nearest nanosecond.
pub fn period_nanos(rate_hz: f64) -> u64 {
    (NANOS_PER_SEC as f64 / rate_hz).round() as u64
}

#[derive(Clone, Debug)]
pub enum Clock {
    Monotonic,
    Virtual(Arc<AtomicU64>),
}

impl Clock {
    pub fn monotonic() -> Self {
        process_epoch();
        Clock::Monotonic
    }

    pub fn virtual_at(start_ns: u64) -> Self {
        Clock::Virtual(Arc::new(AtomicU64::new(start_ns)))
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, Clock::Virtual(_))
    }

    pub fn now_ns(&self) -> u64 {
        match self {
            Clock::Monotonic => process_epoch().elapsed().as_nanos() as u64,
            Clock::Virtual(t) => t.load(Ordering::Acquire),
        }
    }

    /// Move a virtual clock forward to `ns`. Never moves backwards; no-op on real clocks.
    pub fn advance_to(&self, ns: u64) {
        if let Clock::Virtual(t) = self {
            t.fetch_max(ns, Ordering::AcqRel);
        }
    }

    /// Block until the clock reads at least `ns`. Virtual clocks jump instead.
    pub fn sleep_until(&self, ns: u64) {
        match self {
            Clock::Monotonic => {
                let now = self.now_ns();
                if ns > now {
                    std::thread::sleep(Duration::from_nanos(ns - now));
                }
            }
            Clock::Virtual(_) => self.advance_to(ns),
        }
    }

    /// Wall-clock time for a stamp. Virtual clocks map onto the Unix epoch so
    /// that manifests written under simulation are reproducible.
    pub fn wall_time(&self, stamp_ns: u64) -> SystemTime {
        match self {
            Clock::Monotonic => {
                let now = self.now_ns();
                let wall = SystemTime::now();
                if stamp_ns <= now {
                    wall - Duration::from_nanos(now - stamp_ns)
                } else {
                    wall + Duration::from_nanos(stamp_ns - now)
                }
            }
            Clock::Virtual(_) => UNIX_EPOCH + Duration::from_nanos(stamp_ns),
        }
    }
}

/// Fixed-rate deadline generator anchored at a start stamp; deadlines never drift.
#[derive(Debug, Clone)]
pub struct Ticker {
    start_ns: u64,
    period_ns: u64,
    index: u64,
}

impl Ticker {
    pub fn new(start_ns: u64, period_ns: u64) -> Self {
        assert!(period_ns > 0, "ticker period must be positive");
        Self {
            start_ns,
            period_ns,
            index: 0,
        }
    }

    pub fn next_deadline(&self) -> u64 {
        self.start_ns + self.index * self.period_ns
    }

    pub fn advance(&mut self) -> u64 {
        let d = self.next_deadline();
        self.index += 1;
        d
    }
}
