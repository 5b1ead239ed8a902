use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use super::{Clock, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    fetched_at: DateTime<Utc>,
    request: String,
    body: String,
}

/// Raw API responses on disk, one JSON file per (function, symbol, interval, UTC date).
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
    ttl: Duration,
    clock: Arc<dyn Clock>,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>, ttl: Duration, clock: Arc<dyn Clock>) -> Self {
        Self {
            dir: dir.into(),
            ttl,
            clock,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, function: &str, symbol: &str, interval: &str, date: NaiveDate) -> PathBuf {
        let name = format!("{function}_{symbol}_{interval}_{date}")
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect::<String>();
        self.dir.join(format!("{name}.json"))
    }

    /// Returns the cached body if present and younger than the ttl.
    pub fn get(&self, path: &Path) -> Option<String> {
        let text = std::fs::read_to_string(path).ok()?;
        let entry: Entry = serde_json::from_str(&text).ok()?;
        let age = self.clock.now() - entry.fetched_at;
        let ttl = chrono::Duration::from_std(self.ttl).unwrap_or(chrono::Duration::MAX);
        (age >= chrono::Duration::zero() && age < ttl).then_some(entry.body)
    }

    pub fn put(&self, path: &Path, request: &str, body: &str) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let entry = Entry {
            fetched_at: self.clock.now(),
            request: request.to_string(),
            body: body.to_string(),
        };
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(&entry).expect("entry serializes"))?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }
}
