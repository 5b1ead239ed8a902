//! Many independent backtests at once.
//!
//! Each backtest ledger is sequential, but distinct (series, strategy, config)
//! jobs share nothing, so a batch fans out across threads. With the
//! `parallel` feature disabled every entry point runs on the calling thread.

use std::sync::Arc;

use crate::engine::BacktestConfig;
use crate::market_data::PriceSeries;
use crate::metrics::{MetricsParams, MetricsSummary};
use crate::report::{analyze, PipelineError, StrategyConfig};

#[derive(Debug, Clone)]
pub struct BatchJob {
    pub series: Arc<PriceSeries>,
    pub strategy: StrategyConfig,
    pub backtest: BacktestConfig,
    pub metrics: MetricsParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    pub signal_count: usize,
    pub trade_count: usize,
    pub strategy: MetricsSummary,
    pub baseline: MetricsSummary,
}

pub fn evaluate(job: &BatchJob) -> Result<BatchOutcome, PipelineError> {
    let a = analyze(&job.series, &job.strategy, &job.backtest, &job.metrics)?;
    Ok(BatchOutcome {
        signal_count: a.signals.len(),
        trade_count: a.strategy.trades.len(),
        strategy: a.strategy_metrics,
        baseline: a.baseline_metrics,
    })
}

/// Evaluates every job on the calling thread, in order.
pub fn run_sequential(jobs: &[BatchJob]) -> Vec<Result<BatchOutcome, PipelineError>> {
    jobs.iter().map(evaluate).collect()
}

/// Evaluates every job, in parallel when the `parallel` feature is on.
/// Output order always matches `jobs`.
pub fn run(jobs: &[BatchJob]) -> Vec<Result<BatchOutcome, PipelineError>> {
    map(jobs, evaluate)
}

/// Order-preserving map over a slice, parallel when enabled.
#[cfg(feature = "parallel")]
pub fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Runs two closures, potentially in parallel.
#[cfg(feature = "parallel")]
pub fn join<A: Send, B: Send>(a: impl FnOnce() -> A + Send, b: impl FnOnce() -> B + Send) -> (A, B) {
    rayon::join(a, b)
}

#[cfg(not(feature = "parallel"))]
pub fn join<A: Send, B: Send>(a: impl FnOnce() -> A + Send, b: impl FnOnce() -> B + Send) -> (A, B) {
    (a(), b())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indicators::SessionRule;
    use crate::market_data::{AssetClass, Bar, Interval};
    use chrono::{TimeZone, Utc};

    fn series(phase: f64) -> Arc<PriceSeries> {
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        let bars = (0..120)
            .map(|i| {
                let c = 50.0 + 5.0 * ((i as f64) / 6.0 + phase).sin() + i as f64 * 0.05;
                Bar {
                    timestamp: t0 + chrono::Duration::hours(i),
                    open: c,
                    high: c,
                    low: c,
                    close: c,
                    volume: 10.0 + (i % 7) as f64,
                }
            })
            .collect();
        Arc::new(PriceSeries::new("SYN", AssetClass::Crypto, Interval::Minutes(60), bars).unwrap())
    }

    #[test]
    fn parallel_matches_sequential() {
        let jobs: Vec<BatchJob> = (0..24)
            .map(|k| BatchJob {
                series: series(k as f64 * 0.3),
                strategy: if k % 2 == 0 {
                    StrategyConfig::MaCrossover {
                        short: 3 + k % 5,
                        long: 12 + k,
                    }
                } else {
                    StrategyConfig::VwapCross {
                        session: SessionRule::DailyReset,
                    }
                },
                backtest: BacktestConfig::default(),
                metrics: MetricsParams::for_series(AssetClass::Crypto, Interval::Minutes(60)),
            })
            .collect();
        let par = run(&jobs);
        let seq = run_sequential(&jobs);
        assert_eq!(par.len(), seq.len());
        for (p, s) in par.iter().zip(&seq) {
            assert_eq!(p.as_ref().unwrap(), s.as_ref().unwrap());
        }
    }

    #[test]
    fn errors_stay_in_their_slot() {
        let mut job = BatchJob {
            series: series(0.0),
            strategy: StrategyConfig::MaCrossover { short: 5, long: 500 },
            backtest: BacktestConfig::default(),
            metrics: MetricsParams::for_series(AssetClass::Crypto, Interval::Daily),
        };
        let bad = job.clone();
        job.strategy = StrategyConfig::BuyHold;
        let out = run(&[job, bad]);
        assert!(out[0].is_ok());
        assert_eq!(out[1].as_ref().unwrap_err().stage(), "indicators");
    }
}
