//! Sliding-window rate limiter.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Admits at most `max_per_window` events per sliding `window`, blocking the
/// caller until a slot frees up.
#[derive(Debug)]
pub struct RateLimiter {
    max_per_window: u32,
    window: Duration,
    stamps: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(max: u32) -> RateLimiter {
        RateLimiter::new(max, Duration::from_secs(60))
    }

    pub fn new(max_per_window: u32, window: Duration) -> RateLimiter {
        RateLimiter {
            max_per_window: max_per_window.max(1),
            window,
            stamps: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks until the event may proceed, then records it.
    pub fn acquire(&self) {
        loop {
            match self.try_admit(Instant::now()) {
                Ok(()) => return,
                Err(wait) => std::thread::sleep(wait),
            }
        }
    }

    /// Admits the event at `now`, or reports how long to wait. Split out so
    /// the sliding-window property can be tested with synthetic clocks.
    fn try_admit(&self, now: Instant) -> Result<(), Duration> {
        let mut stamps = self.stamps.lock().expect("rate limiter lock");
        while let Some(front) = stamps.front() {
            if now.duration_since(*front) >= self.window {
                stamps.pop_front();
            } else {
                break;
            }
        }
        if stamps.len() < self.max_per_window as usize {
            stamps.push_back(now);
            Ok(())
        } else {
            let front = *stamps.front().expect("non-empty at capacity");
            Err(self.window - now.duration_since(front))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn admits_up_to_capacity_then_defers() {
        let limiter = RateLimiter::new(3, Duration::from_secs(60));
        let t0 = Instant::now();
        assert!(limiter.try_admit(t0).is_ok());
        assert!(limiter.try_admit(t0 + Duration::from_secs(1)).is_ok());
        assert!(limiter.try_admit(t0 + Duration::from_secs(2)).is_ok());
        let wait = limiter.try_admit(t0 + Duration::from_secs(3)).unwrap_err();
        assert_eq!(wait, Duration::from_secs(57));
        // After the window slides past the first stamp, a slot frees.
        assert!(limiter.try_admit(t0 + Duration::from_secs(60)).is_ok());
    }

    #[test]
    fn admitted_events_never_exceed_limit_per_sliding_window() {
        let limit = 5u32;
        let window = Duration::from_secs(60);
        let limiter = RateLimiter::new(limit, window);
        let t0 = Instant::now();

        // A deterministic pseudo-random arrival process; every admitted event
        // is recorded, deferred ones retry at the suggested time.
        let mut admitted: Vec<Duration> = Vec::new();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut offset = Duration::ZERO;
        for _ in 0..200 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            offset += Duration::from_millis(state % 7_000);
            let mut at = t0 + offset;
            loop {
                match limiter.try_admit(at) {
                    Ok(()) => {
                        admitted.push(at - t0);
                        break;
                    }
                    Err(wait) => at += wait,
                }
            }
        }

        for (i, &t) in admitted.iter().enumerate() {
            let in_window = admitted[..=i]
                .iter()
                .filter(|&&s| t.saturating_sub(s) < window)
                .count();
            assert!(
                in_window <= limit as usize,
                "window ending at {t:?} holds {in_window} events"
            );
        }
    }
}
