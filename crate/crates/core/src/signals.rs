//! Crossing detection between two aligned series, and the two crossover
//! strategies built on it.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::indicators::{self, IndicatorError, IndicatorSeries};
use crate::market_data::PriceSeries;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignalError {
    #[error("series are not aligned to the same timestamps")]
    MisalignedSeries,
    #[error("short window {short} must be smaller than long window {long}")]
    WindowOrder { short: usize, long: usize },
    #[error(transparent)]
    Indicator(#[from] IndicatorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Buy => "buy",
            Side::Sell => "sell",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    MaCrossover,
    VwapCross,
    /// Single entry at the first bar; used for the baseline.
    BuyHold,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::MaCrossover => "ma_crossover",
            StrategyKind::VwapCross => "vwap_cross",
            StrategyKind::BuyHold => "buy_hold",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub timestamp: DateTime<Utc>,
    pub side: Side,
    /// Close of the bar the signal fired on.
    pub trigger_price: f64,
    pub strategy: StrategyKind,
}

/// A strict crossing of `fast` through `slow` at bar `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crossing {
    pub index: usize,
    pub timestamp: DateTime<Utc>,
    pub side: Side,
}

impl Crossing {
    pub fn into_signal(self, series: &PriceSeries, strategy: StrategyKind) -> Signal {
        Signal {
            timestamp: self.timestamp,
            side: self.side,
            trigger_price: series.bars()[self.index].close,
            strategy,
        }
    }
}

/// Indices where `fast` crosses `slow`. Both must be present at `t - 1` and
/// `t`; the move must end strictly on the other side, while touching at
/// `t - 1` counts as coming from below (or above).
pub fn crossing_indices(fast: &[Option<f64>], slow: &[Option<f64>]) -> Vec<(usize, Side)> {
    let mut out = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for (t, (f, s)) in fast.iter().zip(slow).enumerate() {
        let current = match (f, s) {
            (Some(f), Some(s)) => Some((*f, *s)),
            _ => None,
        };
        if let (Some((pf, ps)), Some((f, s))) = (prev, current) {
            if pf <= ps && f > s {
                out.push((t, Side::Buy));
            } else if pf >= ps && f < s {
                out.push((t, Side::Sell));
            }
        }
        prev = current;
    }
    out
}

pub fn crossings(fast: &IndicatorSeries, slow: &IndicatorSeries) -> Result<Vec<Crossing>, SignalError> {
    if !fast.same_timestamps(slow) {
        return Err(SignalError::MisalignedSeries);
    }
    let timestamps: Vec<_> = fast.points().iter().map(|p| p.timestamp).collect();
    Ok(crossing_indices(&fast.values(), &slow.values())
        .into_iter()
        .map(|(index, side)| Crossing {
            index,
            timestamp: timestamps[index],
            side,
        })
        .collect())
}

/// Golden cross (buy) / death cross (sell) of the short SMA over the long SMA.
pub fn ma_crossover_signals(series: &PriceSeries, short: usize, long: usize) -> Result<Vec<Signal>, SignalError> {
    if short >= long {
        return Err(SignalError::WindowOrder { short, long });
    }
    let fast = indicators::sma(series, short)?;
    let slow = indicators::sma(series, long)?;
    Ok(crossings(&fast, &slow)?
        .into_iter()
        .map(|c| c.into_signal(series, StrategyKind::MaCrossover))
        .collect())
}

/// Close crossing above (buy) or below (sell) the VWAP line.
pub fn vwap_cross_signals(series: &PriceSeries, vwap: &IndicatorSeries) -> Result<Vec<Signal>, SignalError> {
    if !vwap.is_aligned_with(series) {
        return Err(SignalError::MisalignedSeries);
    }
    let closes: Vec<Option<f64>> = series.closes().into_iter().map(Some).collect();
    Ok(crossing_indices(&closes, &vwap.values())
        .into_iter()
        .map(|(index, side)| {
            Crossing {
                index,
                timestamp: series.bars()[index].timestamp,
                side,
            }
            .into_signal(series, StrategyKind::VwapCross)
        })
        .collect())
}
