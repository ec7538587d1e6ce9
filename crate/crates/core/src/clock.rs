//! Time sources. Politeness delays are measured on the monotonic clock;
//! wall time only stamps records and drives the time-of-day window.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, Duration as ChronoDuration, Local, Timelike, Utc};

pub trait Clock: Send + Sync {
    /// Time elapsed since the clock was created.
    fn monotonic(&self) -> Duration;
    fn wall(&self) -> DateTime<Utc>;
    /// Hour of day in local time, 0..24.
    fn local_hour(&self) -> u32;
    fn sleep(&self, d: Duration);

    /// Sleep until `monotonic()` reaches `deadline`.
    fn sleep_until(&self, deadline: Duration) {
        let now = self.monotonic();
        if deadline > now {
            self.sleep(deadline - now);
        }
    }
}

#[derive(Debug)]
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock { start: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn monotonic(&self) -> Duration {
        self.start.elapsed()
    }

    fn wall(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn local_hour(&self) -> u32 {
        Local::now().hour()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Virtual clock: `sleep` advances time instantly. Used for offline fixture
/// runs, where it also makes every timestamp reproducible.
#[derive(Debug)]
pub struct SimulatedClock {
    start: DateTime<Utc>,
    utc_offset_hours: i32,
    elapsed: Mutex<Duration>,
}

impl SimulatedClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self::with_offset(start, 0)
    }

    pub fn with_offset(start: DateTime<Utc>, utc_offset_hours: i32) -> Self {
        SimulatedClock {
            start,
            utc_offset_hours,
            elapsed: Mutex::new(Duration::ZERO),
        }
    }

    pub fn advance(&self, d: Duration) {
        *self.elapsed.lock().unwrap() += d;
    }
}

impl Clock for SimulatedClock {
    fn monotonic(&self) -> Duration {
        *self.elapsed.lock().unwrap()
    }

    fn wall(&self) -> DateTime<Utc> {
        let e = self.monotonic();
        self.start + ChronoDuration::from_std(e).unwrap_or(ChronoDuration::zero())
    }

    fn local_hour(&self) -> u32 {
        let h = self.wall().hour() as i32 + self.utc_offset_hours;
        h.rem_euclid(24) as u32
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn simulated_sleep_advances() {
        let c = SimulatedClock::with_offset(Utc.with_ymd_and_hms(2021, 3, 1, 22, 30, 0).unwrap(), 1);
        assert_eq!(c.local_hour(), 23);
        c.sleep(Duration::from_secs(3600));
        assert_eq!(c.monotonic(), Duration::from_secs(3600));
        assert_eq!(c.local_hour(), 0);
        c.sleep_until(Duration::from_secs(1800));
        assert_eq!(c.monotonic(), Duration::from_secs(3600));
    }
}
