use std::fmt::Debug;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::{FetchPolicy, MarketDataError, Result};

pub trait Clock: Send + Sync + Debug {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Manually driven clock for tests and replays.
#[derive(Debug)]
pub struct FixedClock(Mutex<DateTime<Utc>>);

impl FixedClock {
    pub fn new(at: DateTime<Utc>) -> Self {
        Self(Mutex::new(at))
    }

    pub fn set(&self, at: DateTime<Utc>) {
        *self.0.lock().expect("clock poisoned") = at;
    }

    pub fn advance(&self, by: Duration) {
        let mut guard = self.0.lock().expect("clock poisoned");
        *guard += by;
    }
}

impl Clock for FixedClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock poisoned")
    }
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Ledger {
    requests: Vec<DateTime<Utc>>,
}

/// Sliding-log request budget: at most `per_minute` requests in any 60 s
/// window and `per_day` per UTC calendar day. Requests are refused up front
/// rather than waiting for the server to answer 429.
///
/// The log is optionally persisted as JSON so the budget survives restarts.
#[derive(Debug)]
pub struct RateLimiter {
    per_minute: usize,
    per_day: usize,
    ledger: Mutex<Ledger>,
    path: Option<PathBuf>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub const STATE_FILE: &'static str = "ratelimit.json";

    pub fn new(per_minute: usize, per_day: usize, clock: Arc<dyn Clock>) -> Result<Self> {
        if per_minute == 0 || per_day == 0 {
            return Err(MarketDataError::InvalidPolicy(
                "request limits must be greater than zero".into(),
            ));
        }
        Ok(Self {
            per_minute,
            per_day,
            ledger: Mutex::new(Ledger::default()),
            path: None,
            clock,
        })
    }

    /// Limiter whose log lives in `policy.cache_dir`, loading any existing state.
    pub fn persistent(policy: &FetchPolicy, clock: Arc<dyn Clock>) -> Result<Self> {
        policy.validate()?;
        let mut limiter = Self::new(policy.max_requests_per_minute, policy.max_requests_per_day, clock)?;
        let path = policy.cache_dir.join(Self::STATE_FILE);
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            let ledger: Ledger = serde_json::from_str(&text)
                .map_err(|e| MarketDataError::MalformedPayload(format!("rate-limit state {}: {e}", path.display())))?;
            limiter.ledger = Mutex::new(ledger);
        }
        limiter.path = Some(path);
        Ok(limiter)
    }

    /// Reserves one request or fails with `RateLimitExceeded`.
    pub fn acquire(&self) -> Result<()> {
        let now = self.clock.now();
        let mut ledger = self.ledger.lock().expect("rate limiter poisoned");
        let today = now.date_naive();
        ledger
            .requests
            .retain(|t| t.date_naive() == today || now - *t < Duration::seconds(60));

        let in_minute = ledger
            .requests
            .iter()
            .filter(|t| **t <= now && now - **t < Duration::seconds(60))
            .count();
        if in_minute >= self.per_minute {
            return Err(MarketDataError::RateLimitExceeded {
                scope: "minute",
                used: in_minute,
                limit: self.per_minute,
            });
        }
        let in_day = ledger.requests.iter().filter(|t| t.date_naive() == today).count();
        if in_day >= self.per_day {
            return Err(MarketDataError::RateLimitExceeded {
                scope: "day",
                used: in_day,
                limit: self.per_day,
            });
        }
        ledger.requests.push(now);
        if let Some(path) = &self.path {
            persist(path, &ledger)?;
        }
        Ok(())
    }

    /// Requests recorded so far in the current UTC day.
    pub fn used_today(&self) -> usize {
        let today = self.clock.now().date_naive();
        self.ledger
            .lock()
            .expect("rate limiter poisoned")
            .requests
            .iter()
            .filter(|t| t.date_naive() == today)
            .count()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }
}

fn persist(path: &Path, ledger: &Ledger) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec(ledger).expect("ledger serializes"))?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn start() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2022, 3, 1, 23, 58, 0).unwrap()
    }

    #[test]
    fn sixth_request_in_a_minute_is_refused() {
        let clock = Arc::new(FixedClock::new(start()));
        let rl = RateLimiter::new(5, 500, clock.clone()).unwrap();
        for _ in 0..5 {
            rl.acquire().unwrap();
            clock.advance(Duration::seconds(1));
        }
        let err = rl.acquire().unwrap_err();
        assert!(matches!(
            err,
            MarketDataError::RateLimitExceeded {
                scope: "minute",
                used: 5,
                limit: 5
            }
        ));
        clock.advance(Duration::seconds(56));
        rl.acquire().unwrap();
    }

    #[test]
    fn day_budget_resets_at_utc_midnight() {
        let clock = Arc::new(FixedClock::new(Utc.with_ymd_and_hms(2022, 3, 1, 10, 0, 0).unwrap()));
        let rl = RateLimiter::new(100, 3, clock.clone()).unwrap();
        for _ in 0..3 {
            rl.acquire().unwrap();
        }
        assert!(matches!(
            rl.acquire(),
            Err(MarketDataError::RateLimitExceeded { scope: "day", .. })
        ));
        clock.set(Utc.with_ymd_and_hms(2022, 3, 2, 0, 0, 0).unwrap());
        rl.acquire().unwrap();
        assert_eq!(rl.used_today(), 1);
    }

    #[test]
    fn state_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let policy = FetchPolicy::new(dir.path());
        let clock: Arc<dyn Clock> = Arc::new(FixedClock::new(start()));
        {
            let rl = RateLimiter::persistent(&policy, clock.clone()).unwrap();
            for _ in 0..5 {
                rl.acquire().unwrap();
            }
        }
        let rl = RateLimiter::persistent(&policy, clock).unwrap();
        assert!(rl.acquire().is_err());
    }

    #[test]
    fn zero_limits_rejected() {
        assert!(RateLimiter::new(0, 1, Arc::new(SystemClock)).is_err());
        assert!(RateLimiter::new(1, 0, Arc::new(SystemClock)).is_err());
    }

    #[test]
    fn shared_across_threads() {
        let rl = Arc::new(RateLimiter::new(5, 500, Arc::new(FixedClock::new(start()))).unwrap());
        let handles: Vec<_> = (0..16)
            .map(|_| {
                let rl = rl.clone();
                std::thread::spawn(move || rl.acquire().is_ok())
            })
            .collect();
        let granted = handles.into_iter().map(|h| h.join().unwrap()).filter(|ok| *ok).count();
        assert_eq!(granted, 5);
    }

    proptest! {
        #[test]
        fn never_exceeds_budget(
            gaps in proptest::collection::vec(0i64..40, 1..300),
            per_minute in 1usize..8,
            per_day in 1usize..60,
        ) {
            let clock = Arc::new(FixedClock::new(start()));
            let rl = RateLimiter::new(per_minute, per_day, clock.clone()).unwrap();
            let mut granted = Vec::new();
            for g in gaps {
                clock.advance(Duration::seconds(g));
                if rl.acquire().is_ok() {
                    granted.push(clock.now());
                }
            }
            for (i, t) in granted.iter().enumerate() {
                let window = granted[i..].iter().filter(|u| **u - *t < Duration::seconds(60)).count();
                prop_assert!(window <= per_minute);
                let day = granted.iter().filter(|u| u.date_naive() == t.date_naive()).count();
                prop_assert!(day <= per_day);
            }
        }
    }
}
