//! All-in/all-out portfolio simulation with proportional fees.
//!
//! A buy converts all cash into units at the signal bar's close, paying the
//! fee on top of the notional; a sell converts all units back to cash with the
//! fee deducted from the proceeds. Signals that would not change the position
//! (a buy while invested, a sell while flat) are skipped and recorded.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{AssetClass, PriceSeries};
use crate::signals::{Side, Signal, StrategyKind};

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error("signal at {0} does not match any bar in the series")]
    SignalNotInSeries(DateTime<Utc>),
    #[error("invalid backtest config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub initial_capital: f64,
    /// Fraction of notional charged per transaction.
    pub fee_rate: f64,
    /// Whether units may be fractional; otherwise buys are floored to whole units.
    pub fractional_units: bool,
}

impl BacktestConfig {
    pub const DEFAULT_CAPITAL: f64 = 10_000.0;
    pub const DEFAULT_FEE_RATE: f64 = 0.001;

    /// Defaults, with whole shares for stocks and fractional units for crypto.
    pub fn for_asset(asset_class: AssetClass) -> Self {
        Self {
            fractional_units: asset_class == AssetClass::Crypto,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.initial_capital.is_finite() && self.initial_capital > 0.0) {
            return Err(EngineError::InvalidConfig(format!(
                "initial capital must be positive, got {}",
                self.initial_capital
            )));
        }
        if !(self.fee_rate >= 0.0 && self.fee_rate < 1.0) {
            return Err(EngineError::InvalidConfig(format!(
                "fee rate must be in [0, 1), got {}",
                self.fee_rate
            )));
        }
        Ok(())
    }
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            initial_capital: Self::DEFAULT_CAPITAL,
            fee_rate: Self::DEFAULT_FEE_RATE,
            fractional_units: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSnapshot {
    pub timestamp: DateTime<Utc>,
    pub cash: f64,
    pub units: f64,
    pub holding_value: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub timestamp: DateTime<Utc>,
    pub side: Side,
    pub price: f64,
    pub units: f64,
    pub fee_paid: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    AlreadyInvested,
    AlreadyFlat,
    InsufficientCashForOneShare,
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkipReason::AlreadyInvested => "already_invested",
            SkipReason::AlreadyFlat => "already_flat",
            SkipReason::InsufficientCashForOneShare => "insufficient_cash_for_one_share",
        })
    }
}

/// What happened to one input signal: exactly one of the two fields is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalOutcome {
    pub trade_index: Option<usize>,
    pub skip_reason: Option<SkipReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backtest {
    /// One per bar.
    pub snapshots: Vec<PortfolioSnapshot>,
    pub trades: Vec<Trade>,
    /// Parallel to the input signals.
    pub outcomes: Vec<SignalOutcome>,
}

impl Backtest {
    pub fn final_total(&self) -> f64 {
        self.snapshots.last().map_or(0.0, |s| s.total)
    }
}

struct Ledger {
    cash: f64,
    units: f64,
    config: BacktestConfig,
}

impl Ledger {
    fn buy(&mut self, timestamp: DateTime<Utc>, price: f64) -> Result<Trade, SkipReason> {
        if self.units > 0.0 {
            return Err(SkipReason::AlreadyInvested);
        }
        let unit_cost = price * (1.0 + self.config.fee_rate);
        let mut units = self.cash / unit_cost;
        if !self.config.fractional_units {
            units = units.floor();
        }
        if units <= 0.0 || (!self.config.fractional_units && units < 1.0) {
            return Err(SkipReason::InsufficientCashForOneShare);
        }
        if self.config.fractional_units {
            self.cash = 0.0;
        } else {
            self.cash = (self.cash - units * unit_cost).max(0.0);
        }
        self.units = units;
        Ok(Trade {
            timestamp,
            side: Side::Buy,
            price,
            units,
            fee_paid: units * price * self.config.fee_rate,
        })
    }

    fn sell(&mut self, timestamp: DateTime<Utc>, price: f64) -> Result<Trade, SkipReason> {
        if self.units <= 0.0 {
            return Err(SkipReason::AlreadyFlat);
        }
        let units = self.units;
        self.cash += units * price * (1.0 - self.config.fee_rate);
        self.units = 0.0;
        Ok(Trade {
            timestamp,
            side: Side::Sell,
            price,
            units,
            fee_paid: units * price * self.config.fee_rate,
        })
    }
}

/// Replays `signals` over `series`, executing at each signal bar's close and
/// marking the position to market at every bar. An open position at the end
/// is valued at the last close, not liquidated.
pub fn run_backtest(
    series: &PriceSeries,
    signals: &[Signal],
    config: &BacktestConfig,
) -> Result<Backtest, EngineError> {
    config.validate()?;
    let bars = series.bars();

    let mut schedule = Vec::with_capacity(signals.len());
    for (i, sig) in signals.iter().enumerate() {
        let bar = series
            .index_of(sig.timestamp)
            .ok_or(EngineError::SignalNotInSeries(sig.timestamp))?;
        schedule.push((bar, i));
    }
    // stable: same-bar signals keep their input order
    schedule.sort_by_key(|&(bar, _)| bar);

    let mut ledger = Ledger {
        cash: config.initial_capital,
        units: 0.0,
        config: *config,
    };
    let mut trades = Vec::new();
    let mut outcomes = vec![
        SignalOutcome {
            trade_index: None,
            skip_reason: None,
        };
        signals.len()
    ];
    let mut snapshots = Vec::with_capacity(bars.len());
    let mut pending = schedule.into_iter().peekable();

    for (t, bar) in bars.iter().enumerate() {
        while let Some(&(_, i)) = pending.peek().filter(|(b, _)| *b == t) {
            pending.next();
            let result = match signals[i].side {
                Side::Buy => ledger.buy(bar.timestamp, bar.close),
                Side::Sell => ledger.sell(bar.timestamp, bar.close),
            };
            outcomes[i] = match result {
                Ok(trade) => {
                    trades.push(trade);
                    SignalOutcome {
                        trade_index: Some(trades.len() - 1),
                        skip_reason: None,
                    }
                }
                Err(reason) => {
                    if reason == SkipReason::InsufficientCashForOneShare {
                        log::warn!(
                            "buy at {} skipped: {:.2} cash does not cover one unit at {}",
                            bar.timestamp,
                            ledger.cash,
                            bar.close
                        );
                    }
                    SignalOutcome {
                        trade_index: None,
                        skip_reason: Some(reason),
                    }
                }
            };
        }
        let holding_value = ledger.units * bar.close;
        snapshots.push(PortfolioSnapshot {
            timestamp: bar.timestamp,
            cash: ledger.cash,
            units: ledger.units,
            holding_value,
            total: ledger.cash + holding_value,
        });
    }

    Ok(Backtest {
        snapshots,
        trades,
        outcomes,
    })
}

/// Baseline: one buy at the first close, held to the end.
pub fn run_buy_and_hold(series: &PriceSeries, config: &BacktestConfig) -> Result<Backtest, EngineError> {
    let first = series.first();
    let entry = Signal {
        timestamp: first.timestamp,
        side: Side::Buy,
        trigger_price: first.close,
        strategy: StrategyKind::BuyHold,
    };
    run_backtest(series, &[entry], config)
}
