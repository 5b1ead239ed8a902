//! ROI and Sharpe ratio over a portfolio snapshot series.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::PortfolioSnapshot;
use crate::market_data::{AssetClass, Interval};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("returns have zero volatility")]
    ZeroVolatility,
    #[error("need at least 3 snapshots, got {0}")]
    TooFewPoints(usize),
    #[error("strategy and baseline snapshots do not share timestamps")]
    MisalignedSeries,
}

/// Annualization inputs for the Sharpe ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsParams {
    /// Annual risk-free rate as a fraction.
    pub risk_free_rate: f64,
    pub periods_per_year: f64,
}

impl MetricsParams {
    pub fn for_series(asset_class: AssetClass, interval: Interval) -> Self {
        Self {
            risk_free_rate: 0.0,
            periods_per_year: periods_per_year(asset_class, interval),
        }
    }
}

/// Bars per year: 252 trading days of 390 minutes for stocks, 365 days of
/// 24 hours for crypto. Gives 252, 365, 252×78 and 365×288 for the daily and
/// 5-minute cases.
pub fn periods_per_year(asset_class: AssetClass, interval: Interval) -> f64 {
    let (days, minutes_per_day) = match asset_class {
        AssetClass::Stock => (252.0, 390.0),
        AssetClass::Crypto => (365.0, 1440.0),
    };
    match interval {
        Interval::Daily => days,
        Interval::Minutes(m) => days * minutes_per_day / f64::from(m),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub initial_capital: f64,
    pub final_total: f64,
    /// Final element of `roi_series`.
    pub gross_roi: f64,
    pub sharpe: Option<f64>,
    /// Why `sharpe` is absent, if it is.
    pub sharpe_error: Option<String>,
    pub roi_series: Vec<f64>,
    pub periods_per_year: f64,
    pub risk_free_rate: f64,
}

pub fn roi_series(snapshots: &[PortfolioSnapshot], initial_capital: f64) -> Vec<f64> {
    snapshots.iter().map(|s| s.total / initial_capital - 1.0).collect()
}

/// Simple per-bar returns of the portfolio total.
pub fn period_returns(snapshots: &[PortfolioSnapshot]) -> Vec<f64> {
    snapshots.windows(2).map(|w| w[1].total / w[0].total - 1.0).collect()
}

/// Annualized Sharpe ratio of per-bar returns, using the sample standard
/// deviation and a per-period risk-free rate of `risk_free_rate / periods_per_year`.
pub fn sharpe(
    snapshots: &[PortfolioSnapshot],
    risk_free_rate: f64,
    periods_per_year: f64,
) -> Result<f64, MetricsError> {
    if snapshots.len() < 3 {
        return Err(MetricsError::TooFewPoints(snapshots.len()));
    }
    let returns = period_returns(snapshots);
    let n = returns.len() as f64;
    let rf = risk_free_rate / periods_per_year;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let std = var.sqrt();
    if !(std > 0.0 && std.is_finite()) {
        return Err(MetricsError::ZeroVolatility);
    }
    Ok((mean - rf) / std * periods_per_year.sqrt())
}

pub fn summarize(snapshots: &[PortfolioSnapshot], initial_capital: f64, params: &MetricsParams) -> MetricsSummary {
    let roi = roi_series(snapshots, initial_capital);
    let (sharpe, sharpe_error) = match sharpe(snapshots, params.risk_free_rate, params.periods_per_year) {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    MetricsSummary {
        initial_capital,
        final_total: snapshots.last().map_or(initial_capital, |s| s.total),
        gross_roi: roi.last().copied().unwrap_or(0.0),
        sharpe,
        sharpe_error,
        roi_series: roi,
        periods_per_year: params.periods_per_year,
        risk_free_rate: params.risk_free_rate,
    }
}

/// Strategy and baseline summaries under identical parameters.
pub fn compare(
    strategy: &[PortfolioSnapshot],
    baseline: &[PortfolioSnapshot],
    initial_capital: f64,
    params: &MetricsParams,
) -> Result<(MetricsSummary, MetricsSummary), MetricsError> {
    if strategy.len() != baseline.len() || strategy.iter().zip(baseline).any(|(a, b)| a.timestamp != b.timestamp) {
        return Err(MetricsError::MisalignedSeries);
    }
    Ok((
        summarize(strategy, initial_capital, params),
        summarize(baseline, initial_capital, params),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn snaps(totals: &[f64]) -> Vec<PortfolioSnapshot> {
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        totals
            .iter()
            .enumerate()
            .map(|(i, &t)| PortfolioSnapshot {
                timestamp: t0 + chrono::Duration::days(i as i64),
                cash: t,
                units: 0.0,
                holding_value: 0.0,
                total: t,
            })
            .collect()
    }

    /// Two-pass textbook Sharpe, written independently of `sharpe`.
    fn sharpe_oracle(totals: &[f64], rf_annual: f64, ppy: f64) -> f64 {
        let mut r = Vec::new();
        for i in 1..totals.len() {
            r.push((totals[i] - totals[i - 1]) / totals[i - 1]);
        }
        let k = r.len() as f64;
        let excess: Vec<f64> = r.iter().map(|x| x - rf_annual / ppy).collect();
        let mean_excess = excess.iter().sum::<f64>() / k;
        let mean = r.iter().sum::<f64>() / k;
        let mut ss = 0.0;
        for x in &r {
            ss += (x - mean) * (x - mean);
        }
        mean_excess / (ss / (k - 1.0)).sqrt() * ppy.sqrt()
    }

    #[test]
    fn roi_cases() {
        assert_eq!(roi_series(&snaps(&[10_000.0; 3]), 10_000.0), vec![0.0; 3]);
        assert_eq!(roi_series(&snaps(&[10_000.0, 20_000.0]), 10_000.0), vec![0.0, 1.0]);
        let roi = roi_series(&snaps(&[100_000.0, 94_960.7]), 100_000.0);
        assert!((roi[1] - (-0.050393)).abs() < 1e-12);
    }

    #[test]
    fn sharpe_errors() {
        assert_eq!(
            sharpe(&snaps(&[5.0; 10]), 0.0, 252.0),
            Err(MetricsError::ZeroVolatility)
        );
        assert_eq!(
            sharpe(&snaps(&[5.0, 6.0]), 0.0, 252.0),
            Err(MetricsError::TooFewPoints(2))
        );
    }

    #[test]
    fn alternating_returns_have_near_zero_sharpe() {
        let mut totals = vec![100.0];
        for r in [0.01, -0.01, 0.01, -0.01] {
            let last = *totals.last().unwrap();
            totals.push(last * (1.0 + r));
        }
        let got = sharpe(&snaps(&totals), 0.0, 252.0).unwrap();
        let oracle = sharpe_oracle(&totals, 0.0, 252.0);
        assert!(got.abs() < 1e-12, "{got}");
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn positive_returns_positive_sharpe() {
        let got = sharpe(&snaps(&[100.0, 101.0, 103.0, 103.5, 107.0]), 0.0, 365.0).unwrap();
        assert!(got > 0.0);
        let oracle = sharpe_oracle(&[100.0, 101.0, 103.0, 103.5, 107.0], 0.0, 365.0);
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs());
    }

    #[test]
    fn periods_per_year_defaults() {
        assert_eq!(periods_per_year(AssetClass::Stock, Interval::Daily), 252.0);
        assert_eq!(periods_per_year(AssetClass::Crypto, Interval::Daily), 365.0);
        assert_eq!(periods_per_year(AssetClass::Stock, Interval::FIVE_MIN), 252.0 * 78.0);
        assert_eq!(periods_per_year(AssetClass::Crypto, Interval::FIVE_MIN), 365.0 * 288.0);
    }

    #[test]
    fn compare_cases() {
        let params = MetricsParams {
            risk_free_rate: 0.0,
            periods_per_year: 252.0,
        };
        let base = snaps(&[10_000.0, 10_500.0, 9_800.0, 11_000.0]);
        let (a, b) = compare(&base, &base, 10_000.0, &params).unwrap();
        assert_eq!(a, b);

        let doubled: Vec<_> = base
            .iter()
            .map(|s| PortfolioSnapshot {
                total: 2.0 * s.total,
                ..*s
            })
            .collect();
        let (strat, bl) = compare(&doubled, &base, 10_000.0, &params).unwrap();
        assert_eq!(strat.sharpe, bl.sharpe);
        assert!((strat.gross_roi - (2.0 * bl.gross_roi + 1.0)).abs() < 1e-12);

        assert_eq!(
            compare(&base[..3], &base, 10_000.0, &params).unwrap_err(),
            MetricsError::MisalignedSeries
        );
    }

    #[test]
    fn summary_reports_missing_sharpe() {
        let params = MetricsParams::for_series(AssetClass::Crypto, Interval::Daily);
        let s = summarize(&snaps(&[10_000.0; 5]), 10_000.0, &params);
        assert_eq!(s.sharpe, None);
        assert!(s.sharpe_error.is_some());
        assert_eq!(s.gross_roi, 0.0);
    }

    proptest! {
        #[test]
        fn sharpe_matches_oracle_and_is_scale_invariant(
            totals in proptest::collection::vec(1.0f64..1e6, 3..60),
            scale in 0.1f64..100.0,
            rf in 0.0f64..0.1,
        ) {
            let s = snaps(&totals);
            if let Ok(v) = sharpe(&s, rf, 252.0) {
                let oracle = sharpe_oracle(&totals, rf, 252.0);
                prop_assert!((v - oracle).abs() <= 1e-9 * oracle.abs().max(1.0));
                let scaled: Vec<f64> = totals.iter().map(|t| t * scale).collect();
                let w = sharpe(&snaps(&scaled), rf, 252.0).unwrap();
                prop_assert!((v - w).abs() <= 1e-9 * v.abs().max(1.0));
                let mean_excess = period_returns(&s).iter().map(|r| r - rf / 252.0).sum::<f64>();
                if mean_excess.abs() > 1e-9 {
                    prop_assert_eq!(v.signum(), mean_excess.signum());
                }
            }
        }
    }
}
