use std::io::Read;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use chrono::{DateTime, LocalResult, NaiveDate, NaiveDateTime, TimeZone, Utc};
use chrono_tz::Tz;
use serde_json::{Map, Value};

use super::{
    write_csv, AssetClass, Bar, Clock, FetchPolicy, Interval, MarketDataError, PriceSeries, RateLimiter, ResponseCache,
    Result, SystemClock,
};
use crate::indicators::{IndicatorPoint, IndicatorSeries};

pub const DEFAULT_API_BASE: &str = "https://www.alphavantage.co/query";
pub const API_KEY_ENV: &str = "ALPHAVANTAGE_API_KEY";

const EXCERPT_LEN: usize = 200;

/// Blocking client for the Alpha Vantage query API.
///
/// Responses are cached per (function, symbol, interval, UTC date); a cache
/// hit consumes no request budget. Fetched series are also written as CSV
/// into the cache directory. Clones of the shared [`RateLimiter`] may be
/// handed to several clients so they draw from one budget.
#[derive(Debug)]
pub struct AlphaVantageClient {
    base_url: String,
    api_key: String,
    policy: FetchPolicy,
    limiter: Arc<RateLimiter>,
    cache: ResponseCache,
    agent: ureq::Agent,
    requests_issued: AtomicUsize,
}

impl AlphaVantageClient {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, policy: FetchPolicy) -> Result<Self> {
        Self::with_clock(base_url, api_key, policy, Arc::new(SystemClock))
    }

    /// Reads the key from `ALPHAVANTAGE_API_KEY`.
    pub fn from_env(base_url: Option<String>, policy: FetchPolicy) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or(MarketDataError::MissingApiKey)?;
        Self::new(base_url.unwrap_or_else(|| DEFAULT_API_BASE.to_string()), key, policy)
    }

    pub fn with_clock(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        policy: FetchPolicy,
        clock: Arc<dyn Clock>,
    ) -> Result<Self> {
        policy.validate()?;
        let limiter = Arc::new(RateLimiter::persistent(&policy, clock.clone())?);
        let cache = ResponseCache::new(policy.cache_dir.clone(), policy.cache_ttl, clock);
        Ok(Self {
            base_url: base_url.into(),
            api_key: api_key.into(),
            policy,
            limiter,
            cache,
            agent: ureq::AgentBuilder::new()
                .timeout(std::time::Duration::from_secs(30))
                .build(),
            requests_issued: AtomicUsize::new(0),
        })
    }

    /// Replaces this client's budget with a shared one.
    pub fn with_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn limiter(&self) -> &Arc<RateLimiter> {
        &self.limiter
    }

    pub fn policy(&self) -> &FetchPolicy {
        &self.policy
    }

    /// HTTP requests actually sent by this client (cache hits excluded).
    pub fn requests_issued(&self) -> usize {
        self.requests_issued.load(Ordering::SeqCst)
    }

    pub fn fetch_daily(&self, symbol: &str, asset_class: AssetClass) -> Result<PriceSeries> {
        let body = match asset_class {
            AssetClass::Stock => self.request("TIME_SERIES_DAILY", symbol, "daily", &[])?,
            AssetClass::Crypto => self.request("DIGITAL_CURRENCY_DAILY", symbol, "daily", &[("market", "USD")])?,
        };
        let series = parse_price_payload(&body, symbol, asset_class, Interval::Daily)?;
        self.persist_csv(&series)?;
        Ok(series)
    }

    pub fn fetch_intraday(&self, symbol: &str, asset_class: AssetClass, interval: Interval) -> Result<PriceSeries> {
        let iv = interval.to_string();
        let body = match asset_class {
            AssetClass::Stock => self.request("TIME_SERIES_INTRADAY", symbol, &iv, &[("interval", iv.as_str())])?,
            AssetClass::Crypto => self.request(
                "CRYPTO_INTRADAY",
                symbol,
                &iv,
                &[("market", "USD"), ("interval", iv.as_str())],
            )?,
        };
        let series = parse_price_payload(&body, symbol, asset_class, interval)?;
        self.persist_csv(&series)?;
        Ok(series)
    }

    /// Server-computed VWAP. Only stocks are served; crypto VWAP must be
    /// computed locally with [`crate::indicators::vwap`].
    pub fn fetch_vwap_stock(
        &self,
        symbol: &str,
        asset_class: AssetClass,
        interval: Interval,
    ) -> Result<IndicatorSeries> {
        if asset_class != AssetClass::Stock {
            return Err(MarketDataError::UnsupportedAsset(symbol.to_string()));
        }
        let iv = interval.to_string();
        let body = self.request("VWAP", symbol, &iv, &[("interval", iv.as_str())])?;
        parse_vwap_payload(&body)
    }

    fn persist_csv(&self, series: &PriceSeries) -> Result<PathBuf> {
        let path = self
            .policy
            .cache_dir
            .join(format!("{}_{}.csv", series.symbol(), series.interval()));
        write_csv(series, &path)?;
        Ok(path)
    }

    fn request(&self, function: &str, symbol: &str, interval_label: &str, extra: &[(&str, &str)]) -> Result<String> {
        let today = self.limiter.clock().now().date_naive();
        let cache_path = self.cache.path_for(function, symbol, interval_label, today);
        if let Some(body) = self.cache.get(&cache_path) {
            log::debug!("cache hit {}", cache_path.display());
            return Ok(body);
        }

        self.limiter.acquire()?;
        self.requests_issued.fetch_add(1, Ordering::SeqCst);

        let mut req = self
            .agent
            .get(&self.base_url)
            .query("function", function)
            .query("symbol", symbol);
        let mut described = format!("function={function}&symbol={symbol}");
        for (k, v) in extra {
            req = req.query(k, v);
            described.push_str(&format!("&{k}={v}"));
        }
        req = req.query("apikey", &self.api_key);
        log::info!("GET {} {described}", self.base_url);

        let body = match req.call() {
            Ok(resp) => read_body(resp)?,
            Err(ureq::Error::Status(status, resp)) => {
                let body = read_body(resp).unwrap_or_default();
                return Err(MarketDataError::ApiError {
                    status,
                    excerpt: excerpt(&body),
                });
            }
            Err(e) => return Err(MarketDataError::Transport(e.to_string())),
        };

        check_api_message(&body)?;
        self.cache.put(&cache_path, &described, &body)?;
        Ok(body)
    }
}

fn read_body(resp: ureq::Response) -> Result<String> {
    let mut body = String::new();
    resp.into_reader().take(64 * 1024 * 1024).read_to_string(&mut body)?;
    Ok(body)
}

fn excerpt(body: &str) -> String {
    body.chars().take(EXCERPT_LEN).collect()
}

/// Alpha Vantage reports failures with HTTP 200 and an explanatory key.
fn check_api_message(body: &str) -> Result<()> {
    let Ok(Value::Object(map)) = serde_json::from_str::<Value>(body) else {
        return Ok(());
    };
    for key in ["Error Message", "Note", "Information"] {
        if let Some(msg) = map.get(key) {
            let text = msg.as_str().map(str::to_string).unwrap_or_else(|| msg.to_string());
            return Err(MarketDataError::ApiError {
                status: 200,
                excerpt: excerpt(&text),
            });
        }
    }
    Ok(())
}

fn parse_object(body: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(MarketDataError::MalformedPayload("expected a JSON object".into())),
        Err(e) => Err(MarketDataError::MalformedPayload(e.to_string())),
    }
}

fn series_block<'a>(map: &'a Map<String, Value>, prefixes: &[&str]) -> Result<&'a Map<String, Value>> {
    map.iter()
        .find(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
        .and_then(|(_, v)| v.as_object())
        .ok_or_else(|| MarketDataError::MalformedPayload(format!("no `{}` block", prefixes[0])))
}

/// Keys look like `1. open`, `1a. open (USD)` or `6: Time Zone`.
fn strip_ordinal(key: &str) -> &str {
    match key.find(['.', ':']) {
        Some(pos) if key[..pos].chars().all(|c| c.is_ascii_alphanumeric()) => key[pos + 1..].trim(),
        _ => key.trim(),
    }
}

fn meta_time_zone(map: &Map<String, Value>) -> Result<Tz> {
    let Some(meta) = map.get("Meta Data").and_then(Value::as_object) else {
        return Ok(Tz::UTC);
    };
    let Some(raw) = meta
        .iter()
        .find(|(k, _)| strip_ordinal(k).eq_ignore_ascii_case("Time Zone"))
        .and_then(|(_, v)| v.as_str())
    else {
        return Ok(Tz::UTC);
    };
    let name = raw.trim().trim_end_matches(" Time").trim();
    Tz::from_str(name).map_err(|_| MarketDataError::MalformedPayload(format!("unknown time zone `{raw}`")))
}

fn field(fields: &Map<String, Value>, name: &str) -> Result<f64> {
    let mut fallback = None;
    for (k, v) in fields {
        let stripped = strip_ordinal(k).to_ascii_lowercase();
        if stripped == name {
            return number(v, k);
        }
        if fallback.is_none() && stripped.starts_with(name) && stripped.contains("usd") {
            fallback = Some((k, v));
        }
    }
    match fallback {
        Some((k, v)) => number(v, k),
        None => Err(MarketDataError::MalformedPayload(format!("missing `{name}` field"))),
    }
}

fn number(v: &Value, key: &str) -> Result<f64> {
    match v {
        Value::String(s) => s.trim().parse().ok(),
        Value::Number(n) => n.as_f64(),
        _ => None,
    }
    .ok_or_else(|| MarketDataError::MalformedPayload(format!("`{key}` is not numeric")))
}

fn parse_time(raw: &str, interval: Interval, tz: Tz) -> Result<DateTime<Utc>> {
    let bad = || MarketDataError::MalformedPayload(format!("unparseable timestamp `{raw}`"));
    if interval == Interval::Daily {
        let date_part = raw.get(..10).ok_or_else(bad)?;
        let date = NaiveDate::parse_from_str(date_part, "%Y-%m-%d").map_err(|_| bad())?;
        return Ok(date.and_hms_opt(0, 0, 0).expect("midnight").and_utc());
    }
    let naive = NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S")
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M"))
        .map_err(|_| bad())?;
    match tz.from_local_datetime(&naive) {
        LocalResult::Single(dt) => Ok(dt.with_timezone(&Utc)),
        // fall-back hour: the earlier instant is the one the exchange printed first
        LocalResult::Ambiguous(early, _) => Ok(early.with_timezone(&Utc)),
        LocalResult::None => Err(bad()),
    }
}

pub(crate) fn parse_price_payload(
    body: &str,
    symbol: &str,
    asset_class: AssetClass,
    interval: Interval,
) -> Result<PriceSeries> {
    let map = parse_object(body)?;
    check_api_message(body)?;
    let tz = meta_time_zone(&map)?;
    let block = series_block(&map, &["Time Series"])?;
    if block.is_empty() {
        return Err(MarketDataError::EmptySeries);
    }
    let mut bars = Vec::with_capacity(block.len());
    for (ts, fields) in block {
        let fields = fields
            .as_object()
            .ok_or_else(|| MarketDataError::MalformedPayload(format!("entry `{ts}` is not an object")))?;
        bars.push(Bar {
            timestamp: parse_time(ts, interval, tz)?,
            open: field(fields, "open")?,
            high: field(fields, "high")?,
            low: field(fields, "low")?,
            close: field(fields, "close")?,
            volume: field(fields, "volume")?,
        });
    }
    PriceSeries::from_unsorted(symbol, asset_class, interval, bars)
}

pub(crate) fn parse_vwap_payload(body: &str) -> Result<IndicatorSeries> {
    let map = parse_object(body)?;
    check_api_message(body)?;
    let tz = meta_time_zone(&map)?;
    let block = series_block(&map, &["Technical Analysis"])?;
    if block.is_empty() {
        return Err(MarketDataError::EmptySeries);
    }
    let mut points = Vec::with_capacity(block.len());
    for (ts, fields) in block {
        let fields = fields
            .as_object()
            .ok_or_else(|| MarketDataError::MalformedPayload(format!("entry `{ts}` is not an object")))?;
        points.push(IndicatorPoint {
            timestamp: parse_time(ts, Interval::FIVE_MIN, tz)?,
            value: Some(field(fields, "vwap")?),
        });
    }
    points.sort_by_key(|p| p.timestamp);
    if points.windows(2).any(|w| w[0].timestamp == w[1].timestamp) {
        return Err(MarketDataError::MalformedPayload("duplicate VWAP timestamps".into()));
    }
    Ok(IndicatorSeries::new("VWAP", points))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DAILY: &str = r#"{
        "Meta Data": {"1. Information": "Daily Prices", "2. Symbol": "AAPL", "5. Time Zone": "US/Eastern"},
        "Time Series (Daily)": {
            "2024-01-03": {"1. open": "184.22", "2. high": "185.88", "3. low": "183.43", "4. close": "184.25", "5. volume": "58414460"},
            "2024-01-02": {"1. open": "187.15", "2. high": "188.44", "3. low": "183.885", "4. close": "185.64", "5. volume": "82488674"}
        }
    }"#;

    #[test]
    fn parses_daily_and_sorts() {
        let s = parse_price_payload(DAILY, "AAPL", AssetClass::Stock, Interval::Daily).unwrap();
        assert_eq!(s.closes(), vec![185.64, 184.25]);
        assert_eq!(s.first().timestamp.to_rfc3339(), "2024-01-02T00:00:00+00:00");
    }

    #[test]
    fn intraday_eastern_converted_to_utc() {
        let body = r#"{
            "Meta Data": {"6. Time Zone": "US/Eastern"},
            "Time Series (5min)": {
                "2024-01-05 09:35:00": {"1. open": "1", "2. high": "1", "3. low": "1", "4. close": "1", "5. volume": "1"}
            }
        }"#;
        let s = parse_price_payload(body, "IBM", AssetClass::Stock, Interval::FIVE_MIN).unwrap();
        assert_eq!(s.first().timestamp.to_rfc3339(), "2024-01-05T14:35:00+00:00");
    }

    #[test]
    fn legacy_crypto_daily_keys() {
        let body = r#"{
            "Meta Data": {"7. Time Zone": "UTC"},
            "Time Series (Digital Currency Daily)": {
                "2021-05-01": {"1a. open (USD)": "2772.3", "1b. open (USD)": "2772.3", "2a. high (USD)": "2950.0",
                               "2b. high (USD)": "2950.0", "3a. low (USD)": "2740.0", "3b. low (USD)": "2740.0",
                               "4a. close (USD)": "2945.5", "4b. close (USD)": "2945.5", "5. volume": "510234.1",
                               "6. market cap (USD)": "510234.1"}
            }
        }"#;
        let s = parse_price_payload(body, "ETH", AssetClass::Crypto, Interval::Daily).unwrap();
        assert_eq!(s.bars()[0].close, 2945.5);
        assert_eq!(s.bars()[0].volume, 510234.1);
    }

    #[test]
    fn error_payloads() {
        let err = parse_price_payload(
            r#"{"Error Message": "Invalid API call."}"#,
            "X",
            AssetClass::Stock,
            Interval::Daily,
        )
        .unwrap_err();
        assert!(
            matches!(err, MarketDataError::ApiError { status: 200, ref excerpt } if excerpt == "Invalid API call.")
        );
        let err = parse_price_payload(r#"{"Meta Data": {}}"#, "X", AssetClass::Stock, Interval::Daily).unwrap_err();
        assert!(matches!(err, MarketDataError::MalformedPayload(_)));
        let err = parse_price_payload("not json", "X", AssetClass::Stock, Interval::Daily).unwrap_err();
        assert!(matches!(err, MarketDataError::MalformedPayload(_)));
        let err = parse_price_payload(
            r#"{"Time Series (5min)": {}}"#,
            "X",
            AssetClass::Stock,
            Interval::FIVE_MIN,
        )
        .unwrap_err();
        assert!(matches!(err, MarketDataError::EmptySeries));
    }

    #[test]
    fn vwap_payload() {
        let body = r#"{
            "Meta Data": {"1: Symbol": "TSLA", "6: Time Zone": "US/Eastern Time"},
            "Technical Analysis: VWAP": {
                "2024-01-05 09:40": {"VWAP": "240.50"},
                "2024-01-05 09:35": {"VWAP": "240.00"}
            }
        }"#;
        let s = parse_vwap_payload(body).unwrap();
        assert_eq!(s.values(), vec![Some(240.0), Some(240.5)]);
        assert_eq!(s.points()[0].timestamp.to_rfc3339(), "2024-01-05T14:35:00+00:00");
    }

    #[test]
    fn ordinal_stripping() {
        assert_eq!(strip_ordinal("1. open"), "open");
        assert_eq!(strip_ordinal("1a. open (USD)"), "open (USD)");
        assert_eq!(strip_ordinal("6: Time Zone"), "Time Zone");
        assert_eq!(strip_ordinal("VWAP"), "VWAP");
    }
}
