//! Price series acquisition: local CSV files and an Alpha-Vantage-compatible
//! HTTP API with on-disk caching and client-side rate limiting.

mod alpha_vantage;
mod cache;
pub(crate) mod csv_io;
mod rate_limit;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, Timelike, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alpha_vantage::{AlphaVantageClient, API_KEY_ENV, DEFAULT_API_BASE};
pub use cache::ResponseCache;
pub use csv_io::{load_csv, parse_csv, write_csv, write_csv_to, CSV_HEADER};
pub use rate_limit::{Clock, FixedClock, RateLimiter, SystemClock};

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unparseable row {row}: {reason}")]
    UnparseableRow { row: usize, reason: String },
    #[error("series is empty")]
    EmptySeries,
    #[error("duplicate timestamp {0}")]
    DuplicateTimestamp(DateTime<Utc>),
    #[error("bar {index} is invalid: {reason}")]
    InvalidBar { index: usize, reason: String },
    #[error("timestamps must be strictly increasing (bar {0})")]
    NotIncreasing(usize),
    #[error("timestamp {timestamp} is not on the {interval} grid")]
    OffGrid {
        timestamp: DateTime<Utc>,
        interval: Interval,
    },
    #[error("rate limit exceeded: {used}/{limit} requests per {scope}")]
    RateLimitExceeded {
        scope: &'static str,
        used: usize,
        limit: usize,
    },
    #[error("api error (status {status}): {excerpt}")]
    ApiError { status: u16, excerpt: String },
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("unsupported asset `{0}`: API VWAP is only available for stocks, compute it locally")]
    UnsupportedAsset(String),
    #[error("api key not set (export {})", API_KEY_ENV)]
    MissingApiKey,
    #[error("invalid fetch policy: {0}")]
    InvalidPolicy(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = MarketDataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetClass {
    Stock,
    Crypto,
}

impl FromStr for AssetClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "stock" | "equity" => Ok(AssetClass::Stock),
            "crypto" => Ok(AssetClass::Crypto),
            other => Err(format!("unknown asset class `{other}` (expected stock or crypto)")),
        }
    }
}

impl fmt::Display for AssetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssetClass::Stock => "stock",
            AssetClass::Crypto => "crypto",
        })
    }
}

/// Bar duration. Intraday intervals are expressed in whole minutes and are
/// passed to the API verbatim (`5min`), so the server decides what is valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Interval {
    Daily,
    Minutes(u32),
}

impl Interval {
    pub const FIVE_MIN: Interval = Interval::Minutes(5);

    pub fn seconds(self) -> i64 {
        match self {
            Interval::Daily => 86_400,
            Interval::Minutes(m) => i64::from(m) * 60,
        }
    }

    pub fn is_intraday(self) -> bool {
        matches!(self, Interval::Minutes(_))
    }

    fn on_grid(self, ts: &DateTime<Utc>) -> bool {
        match self {
            Interval::Daily => ts.num_seconds_from_midnight() == 0 && ts.nanosecond() == 0,
            Interval::Minutes(0) => false,
            Interval::Minutes(_) => ts.nanosecond() == 0 && ts.timestamp().rem_euclid(self.seconds()) == 0,
        }
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interval::Daily => f.write_str("daily"),
            Interval::Minutes(m) => write!(f, "{m}min"),
        }
    }
}

impl FromStr for Interval {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "daily" | "1d" | "1day" | "day" => return Ok(Interval::Daily),
            _ => {}
        }
        let digits = lower
            .strip_suffix("min")
            .or_else(|| lower.strip_suffix('m'))
            .ok_or_else(|| format!("unrecognised interval `{s}` (use `daily` or e.g. `5min`)"))?;
        let minutes: u32 = digits.parse().map_err(|_| format!("unrecognised interval `{s}`"))?;
        if minutes == 0 {
            return Err("interval must be at least one minute".into());
        }
        Ok(Interval::Minutes(minutes))
    }
}

impl Serialize for Interval {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One OHLCV observation. Prices are in the quote currency, volume in asset units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub timestamp: DateTime<Utc>,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    /// Checks the OHLCV invariants, returning a human-readable reason on failure.
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(format!("{name} must be a positive finite price, got {v}"));
            }
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(format!("volume must be finite and >= 0, got {}", self.volume));
        }
        if self.low > self.open.min(self.close) {
            return Err(format!(
                "low {} above min(open, close) {}",
                self.low,
                self.open.min(self.close)
            ));
        }
        if self.high < self.open.max(self.close) {
            return Err(format!(
                "high {} below max(open, close) {}",
                self.high,
                self.open.max(self.close)
            ));
        }
        Ok(())
    }
}

/// Time-ordered bars for one asset at one interval. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSeries {
    symbol: String,
    asset_class: AssetClass,
    interval: Interval,
    bars: Vec<Bar>,
}

impl PriceSeries {
    /// Validates and wraps `bars`, which must already be in ascending order.
    pub fn new(symbol: impl Into<String>, asset_class: AssetClass, interval: Interval, bars: Vec<Bar>) -> Result<Self> {
        if bars.is_empty() {
            return Err(MarketDataError::EmptySeries);
        }
        for (index, bar) in bars.iter().enumerate() {
            bar.validate()
                .map_err(|reason| MarketDataError::InvalidBar { index, reason })?;
            if !interval.on_grid(&bar.timestamp) {
                return Err(MarketDataError::OffGrid {
                    timestamp: bar.timestamp,
                    interval,
                });
            }
            if index > 0 {
                let prev = bars[index - 1].timestamp;
                if prev == bar.timestamp {
                    return Err(MarketDataError::DuplicateTimestamp(bar.timestamp));
                }
                if prev > bar.timestamp {
                    return Err(MarketDataError::NotIncreasing(index));
                }
            }
        }
        Ok(Self {
            symbol: symbol.into(),
            asset_class,
            interval,
            bars,
        })
    }

    /// Sorts `bars` by timestamp before validating.
    pub fn from_unsorted(
        symbol: impl Into<String>,
        asset_class: AssetClass,
        interval: Interval,
        mut bars: Vec<Bar>,
    ) -> Result<Self> {
        bars.sort_by_key(|b| b.timestamp);
        Self::new(symbol, asset_class, interval, bars)
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn asset_class(&self) -> AssetClass {
        self.asset_class
    }

    pub fn interval(&self) -> Interval {
        self.interval
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn timestamps(&self) -> Vec<DateTime<Utc>> {
        self.bars.iter().map(|b| b.timestamp).collect()
    }

    pub fn first(&self) -> &Bar {
        &self.bars[0]
    }

    pub fn last(&self) -> &Bar {
        &self.bars[self.bars.len() - 1]
    }

    pub fn index_of(&self, timestamp: DateTime<Utc>) -> Option<usize> {
        self.bars.binary_search_by_key(&timestamp, |b| b.timestamp).ok()
    }

    /// First `len` bars.
    pub fn prefix(&self, len: usize) -> Result<Self> {
        self.with_bars(self.bars[..len.min(self.bars.len())].to_vec())
    }

    /// Bars whose UTC date falls in `start..=end`; either bound may be open.
    pub fn select_window(&self, start: Option<NaiveDate>, end: Option<NaiveDate>) -> Result<Self> {
        let bars = self
            .bars
            .iter()
            .filter(|b| {
                let d = b.timestamp.date_naive();
                start.is_none_or(|s| d >= s) && end.is_none_or(|e| d <= e)
            })
            .copied()
            .collect();
        self.with_bars(bars)
    }

    /// The most recent `fraction` of the bars (rounded up, at least one bar).
    pub fn trailing_fraction(&self, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(MarketDataError::InvalidPolicy(format!(
                "fraction must be in (0, 1], got {fraction}"
            )));
        }
        let keep = ((self.bars.len() as f64) * fraction).ceil() as usize;
        let keep = keep.clamp(1, self.bars.len());
        self.with_bars(self.bars[self.bars.len() - keep..].to_vec())
    }

    fn with_bars(&self, bars: Vec<Bar>) -> Result<Self> {
        Self::new(self.symbol.clone(), self.asset_class, self.interval, bars)
    }
}

/// Request budget and cache settings for API fetches.
#[derive(Debug, Clone, PartialEq)]
pub struct FetchPolicy {
    pub max_requests_per_minute: usize,
    pub max_requests_per_day: usize,
    pub cache_dir: std::path::PathBuf,
    pub cache_ttl: std::time::Duration,
}

impl FetchPolicy {
    pub const DEFAULT_PER_MINUTE: usize = 5;
    pub const DEFAULT_PER_DAY: usize = 500;

    pub fn new(cache_dir: impl Into<std::path::PathBuf>) -> Self {
        Self {
            max_requests_per_minute: Self::DEFAULT_PER_MINUTE,
            max_requests_per_day: Self::DEFAULT_PER_DAY,
            cache_dir: cache_dir.into(),
            cache_ttl: std::time::Duration::from_secs(3600),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_requests_per_minute == 0 || self.max_requests_per_day == 0 {
            return Err(MarketDataError::InvalidPolicy(
                "request limits must be greater than zero".into(),
            ));
        }
        Ok(())
    }
}

impl Default for FetchPolicy {
    fn default() -> Self {
        Self::new(".tradepipe-cache")
    }
}
