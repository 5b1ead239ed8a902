//! Simple moving average and volume-weighted average price, aligned bar for
//! bar with the source series. Both use the close as the bar price.

use std::path::Path;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::csv_io::format_timestamp;
use crate::market_data::{Bar, PriceSeries};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndicatorError {
    #[error("window length must be at least 1")]
    WindowZero,
    #[error("window length {window} exceeds series length {len}")]
    WindowTooLarge { window: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorPoint {
    pub timestamp: DateTime<Utc>,
    /// `None` inside the warm-up region.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSeries {
    name: String,
    points: Vec<IndicatorPoint>,
}

impl IndicatorSeries {
    pub fn new(name: impl Into<String>, points: Vec<IndicatorPoint>) -> Self {
        Self {
            name: name.into(),
            points,
        }
    }

    /// Pairs `values` with the bar timestamps of `series`.
    pub fn aligned(name: impl Into<String>, series: &PriceSeries, values: Vec<Option<f64>>) -> Self {
        debug_assert_eq!(values.len(), series.len());
        let points = series
            .bars()
            .iter()
            .zip(values)
            .map(|(b, value)| IndicatorPoint {
                timestamp: b.timestamp,
                value,
            })
            .collect();
        Self::new(name, points)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[IndicatorPoint] {
        &self.points
    }

    pub fn values(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_aligned_with(&self, series: &PriceSeries) -> bool {
        self.points.len() == series.len()
            && self
                .points
                .iter()
                .zip(series.bars())
                .all(|(p, b)| p.timestamp == b.timestamp)
    }

    pub fn same_timestamps(&self, other: &IndicatorSeries) -> bool {
        self.points.len() == other.points.len()
            && self
                .points
                .iter()
                .zip(&other.points)
                .all(|(a, b)| a.timestamp == b.timestamp)
    }

    /// Writes `timestamp,<name>` rows; warm-up points have an empty value.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["timestamp", self.name.as_str()])?;
        for p in &self.points {
            w.write_record([
                format_timestamp(&p.timestamp),
                p.value.map(|v| v.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()
    }
}

/// How VWAP accumulation is partitioned in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionRule {
    /// Restart at every UTC midnight.
    #[default]
    DailyReset,
    /// One session spanning the whole series.
    Cumulative,
}

impl SessionRule {
    fn session_key(self, ts: &DateTime<Utc>) -> Option<NaiveDate> {
        match self {
            SessionRule::DailyReset => Some(ts.date_naive()),
            SessionRule::Cumulative => None,
        }
    }
}

impl std::str::FromStr for SessionRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "daily" | "daily_reset" => Ok(SessionRule::DailyReset),
            "cumulative" => Ok(SessionRule::Cumulative),
            other => Err(format!("unknown session rule `{other}` (expected daily or cumulative)")),
        }
    }
}

/// Running sum with Neumaier compensation, so long rolling windows do not drift.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Trailing mean of `values` over `window` elements; `None` for the first
/// `window - 1` positions.
pub fn sma_values(values: &[f64], window: usize) -> Result<Vec<Option<f64>>, IndicatorError> {
    if window == 0 {
        return Err(IndicatorError::WindowZero);
    }
    if window > values.len() {
        return Err(IndicatorError::WindowTooLarge {
            window,
            len: values.len(),
        });
    }
    let n = window as f64;
    let mut acc = CompensatedSum::default();
    let mut out = Vec::with_capacity(values.len());
    for (t, &x) in values.iter().enumerate() {
        acc.add(x);
        if t >= window {
            acc.add(-values[t - window]);
        }
        out.push((t + 1 >= window).then(|| acc.value() / n));
    }
    Ok(out)
}

/// `SMA_<window>` of the closes.
pub fn sma(series: &PriceSeries, window: usize) -> Result<IndicatorSeries, IndicatorError> {
    let values = sma_values(&series.closes(), window)?;
    Ok(IndicatorSeries::aligned(format!("SMA_{window}"), series, values))
}

pub fn vwap_values(bars: &[Bar], rule: SessionRule) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(bars.len());
    let mut session = None;
    let mut price_volume = 0.0;
    let mut volume = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, bar) in bars.iter().enumerate() {
        let key = rule.session_key(&bar.timestamp);
        if i == 0 || key != session {
            session = key;
            price_volume = 0.0;
            volume = 0.0;
            lo = f64::INFINITY;
            hi = f64::NEG_INFINITY;
        }
        if bar.volume > 0.0 {
            price_volume += bar.close * bar.volume;
            volume += bar.volume;
            lo = lo.min(bar.close);
            hi = hi.max(bar.close);
        }
        // clamp: rounding in the ratio must not leave the traded price range
        out.push((volume > 0.0).then(|| (price_volume / volume).clamp(lo, hi)));
    }
    out
}

/// Session VWAP of the closes, absent while the session has traded no volume.
pub fn vwap(series: &PriceSeries, rule: SessionRule) -> IndicatorSeries {
    IndicatorSeries::aligned("VWAP", series, vwap_values(series.bars(), rule))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{AssetClass, Interval};
    use chrono::TimeZone;

    fn daily(closes: &[f64]) -> PriceSeries {
        intraday_with_volume(closes, &vec![1.0; closes.len()], Interval::Daily)
    }

    fn intraday_with_volume(closes: &[f64], volumes: &[f64], interval: Interval) -> PriceSeries {
        let start = Utc.with_ymd_and_hms(2021, 6, 1, 0, 0, 0).unwrap();
        let bars = closes
            .iter()
            .zip(volumes)
            .enumerate()
            .map(|(i, (&c, &v))| Bar {
                timestamp: start + chrono::Duration::seconds(interval.seconds() * i as i64),
                open: c,
                high: c,
                low: c,
                close: c,
                volume: v,
            })
            .collect();
        PriceSeries::new("T", AssetClass::Crypto, interval, bars).unwrap()
    }

    #[test]
    fn sma_constant_series() {
        let s = sma(&daily(&[7.0; 4]), 2).unwrap();
        assert_eq!(s.values(), vec![None, Some(7.0), Some(7.0), Some(7.0)]);
        assert_eq!(s.name(), "SMA_2");
    }

    #[test]
    fn sma_hand_computed() {
        let s = sma(&daily(&[1.0, 2.0, 3.0, 4.0, 5.0]), 3).unwrap();
        assert_eq!(s.values(), vec![None, None, Some(2.0), Some(3.0), Some(4.0)]);
    }

    #[test]
    fn sma_full_window() {
        let closes = [3.0, 9.0, 6.0];
        let s = sma(&daily(&closes), 3).unwrap();
        assert_eq!(s.values(), vec![None, None, Some(6.0)]);
    }

    #[test]
    fn sma_window_errors() {
        let series = daily(&[1.0, 2.0]);
        assert_eq!(sma(&series, 0).unwrap_err(), IndicatorError::WindowZero);
        assert_eq!(
            sma(&series, 3).unwrap_err(),
            IndicatorError::WindowTooLarge { window: 3, len: 2 }
        );
    }

    #[test]
    fn vwap_single_bar() {
        let s = intraday_with_volume(&[10.0], &[100.0], Interval::FIVE_MIN);
        assert_eq!(vwap(&s, SessionRule::Cumulative).values(), vec![Some(10.0)]);
    }

    #[test]
    fn vwap_two_bars_cumulative() {
        // (10*100 + 12*300) / 400
        let s = intraday_with_volume(&[10.0, 12.0], &[100.0, 300.0], Interval::FIVE_MIN);
        assert_eq!(vwap(&s, SessionRule::Cumulative).values(), vec![Some(10.0), Some(11.5)]);
    }

    #[test]
    fn vwap_daily_reset() {
        // 6h bars: four per UTC day
        let closes = [10.0, 11.0, 12.0, 13.0, 20.0, 21.0, 22.0, 23.0];
        let s = intraday_with_volume(&closes, &[5.0; 8], Interval::Minutes(360));
        let reset = vwap(&s, SessionRule::DailyReset).values();
        assert_eq!(reset[4], Some(20.0));
        assert_eq!(reset[3], Some(11.5));
        let cumulative = vwap(&s, SessionRule::Cumulative).values();
        assert!(cumulative[4].unwrap() < 20.0);
    }

    #[test]
    fn vwap_zero_volume_prefix_is_absent() {
        let s = intraday_with_volume(&[10.0, 11.0, 12.0], &[0.0, 0.0, 2.0], Interval::FIVE_MIN);
        assert_eq!(vwap(&s, SessionRule::DailyReset).values(), vec![None, None, Some(12.0)]);
    }

    #[test]
    fn alignment_checks() {
        let a = daily(&[1.0, 2.0, 3.0]);
        let s = sma(&a, 2).unwrap();
        assert!(s.is_aligned_with(&a));
        let b = daily(&[1.0, 2.0]);
        assert!(!s.is_aligned_with(&b));
    }

    #[test]
    fn session_rule_parsing() {
        assert_eq!("daily".parse::<SessionRule>().unwrap(), SessionRule::DailyReset);
        assert_eq!("cumulative".parse::<SessionRule>().unwrap(), SessionRule::Cumulative);
        assert!("weekly".parse::<SessionRule>().is_err());
    }
}
