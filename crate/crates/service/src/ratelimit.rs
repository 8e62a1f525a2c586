use std::collections::HashMap;
use std::sync::Mutex;

use chrono::{DateTime, Utc};

/// Per-key token bucket: `per_minute` tokens of capacity, refilled
/// continuously at `per_minute` tokens a minute.
pub struct RateLimiter {
    per_minute: f64,
    buckets: Mutex<HashMap<String, (f64, DateTime<Utc>)>>,
}

impl RateLimiter {
    pub fn new(per_minute: u32) -> Self {
        RateLimiter {
            per_minute: per_minute.max(1) as f64,
            buckets: Mutex::new(HashMap::new()),
        }
    }

    /// Take one token for `key`; false when the bucket is empty.
    pub fn try_take(&self, key: &str, now: DateTime<Utc>) -> bool {
        let mut b = self.buckets.lock().unwrap_or_else(|e| e.into_inner());
        let (tokens, last) = b.entry(key.to_string()).or_insert((self.per_minute, now));
        let elapsed = (now - *last).num_milliseconds().max(0) as f64 / 60_000.0;
        *tokens = (*tokens + elapsed * self.per_minute).min(self.per_minute);
        *last = now;
        if *tokens >= 1.0 {
            *tokens -= 1.0;
            true
        } else {
            false
        }
    }
}
