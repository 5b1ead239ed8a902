//! End-to-end pipeline: load → indicators → signals → backtest (plus the
//! buy-and-hold baseline) → metrics, and the self-contained report that the
//! dashboard charts are drawn from.

mod files;
mod render;

use std::path::PathBuf;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::engine::{self, Backtest, BacktestConfig, EngineError, PortfolioSnapshot, SkipReason, Trade};
use crate::indicators::{self, IndicatorError, IndicatorSeries, SessionRule};
use crate::market_data::{
    self, AlphaVantageClient, AssetClass, Bar, FetchPolicy, Interval, MarketDataError, PriceSeries,
};
use crate::metrics::{self, MetricsError, MetricsParams, MetricsSummary};
use crate::signals::{self, Side, Signal, SignalError, StrategyKind};

pub use files::{read_report, write_outputs, OUTPUT_FILES, REPORT_FILE};
pub use render::{render, CHART_FILES};

/// A pipeline failure tagged with the stage it came from.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[config] {0}")]
    Config(String),
    #[error("[data source] {0}")]
    DataSource(#[from] MarketDataError),
    #[error("[indicators] {0}")]
    Indicators(#[from] IndicatorError),
    #[error("[signals] {0}")]
    Signals(#[from] SignalError),
    #[error("[backtest] {0}")]
    Backtest(#[from] EngineError),
    #[error("[metrics] {0}")]
    Metrics(#[from] MetricsError),
    #[error("[report] {0}")]
    Report(String),
    #[error("[output] cannot write {path}: {reason}")]
    UnwritableOutput { path: PathBuf, reason: String },
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::DataSource(_) => "data source",
            PipelineError::Indicators(_) => "indicators",
            PipelineError::Signals(_) => "signals",
            PipelineError::Backtest(_) => "backtest",
            PipelineError::Metrics(_) => "metrics",
            PipelineError::Report(_) => "report",
            PipelineError::UnwritableOutput { .. } => "output",
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyConfig {
    MaCrossover { short: usize, long: usize },
    VwapCross { session: SessionRule },
    BuyHold,
}

impl StrategyConfig {
    pub const DEFAULT_SHORT: usize = 50;
    pub const DEFAULT_LONG: usize = 200;

    pub fn kind(&self) -> StrategyKind {
        match self {
            StrategyConfig::MaCrossover { .. } => StrategyKind::MaCrossover,
            StrategyConfig::VwapCross { .. } => StrategyKind::VwapCross,
            StrategyConfig::BuyHold => StrategyKind::BuyHold,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let StrategyConfig::MaCrossover { short, long } = *self {
            if short == 0 {
                return Err(IndicatorError::WindowZero.into());
            }
            if short >= long {
                return Err(SignalError::WindowOrder { short, long }.into());
            }
        }
        Ok(())
    }
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig::MaCrossover {
            short: Self::DEFAULT_SHORT,
            long: Self::DEFAULT_LONG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        asset_class: AssetClass,
        interval: Interval,
    },
    Api {
        symbol: String,
        asset_class: AssetClass,
        interval: Interval,
        api_base: String,
        cache_dir: PathBuf,
    },
}

impl DataSource {
    pub fn asset_class(&self) -> AssetClass {
        match self {
            DataSource::Csv { asset_class, .. } | DataSource::Api { asset_class, .. } => *asset_class,
        }
    }

    pub fn interval(&self) -> Interval {
        match self {
            DataSource::Csv { interval, .. } | DataSource::Api { interval, .. } => *interval,
        }
    }
}

/// Optional sub-range of the loaded series: a date window, then a trailing fraction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub fraction: Option<f64>,
}

impl Selection {
    pub fn apply(&self, series: PriceSeries) -> Result<PriceSeries> {
        let mut series = series;
        if self.start.is_some() || self.end.is_some() {
            series = series.select_window(self.start, self.end)?;
        }
        if let Some(f) = self.fraction {
            series = series.trailing_fraction(f)?;
        }
        Ok(series)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub strategy: StrategyConfig,
    pub source: DataSource,
    #[serde(default)]
    pub selection: Selection,
    pub backtest: BacktestConfig,
    pub metrics: MetricsParams,
}

impl RunConfig {
    /// Defaults for everything but the data source: MA 50/200, 10,000 capital,
    /// 0.1% fee, unit rule and annualization from the asset class and interval.
    pub fn with_defaults(source: DataSource) -> Self {
        let asset_class = source.asset_class();
        let interval = source.interval();
        Self {
            strategy: StrategyConfig::default(),
            source,
            selection: Selection::default(),
            backtest: BacktestConfig::for_asset(asset_class),
            metrics: MetricsParams::for_series(asset_class, interval),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        self.backtest.validate()?;
        if !(self.metrics.periods_per_year.is_finite() && self.metrics.periods_per_year > 0.0) {
            return Err(PipelineError::Config("periods per year must be positive".into()));
        }
        if !self.metrics.risk_free_rate.is_finite() {
            return Err(PipelineError::Config("risk-free rate must be finite".into()));
        }
        Ok(())
    }
}

/// Resolves the configured source into a series, hitting the API when asked to.
pub fn load_series(source: &DataSource) -> Result<PriceSeries> {
    match source {
        DataSource::Csv {
            path,
            asset_class,
            interval,
        } => Ok(market_data::load_csv(path, *asset_class, *interval)?),
        DataSource::Api {
            symbol,
            asset_class,
            interval,
            api_base,
            cache_dir,
        } => {
            let client = AlphaVantageClient::from_env(Some(api_base.clone()), FetchPolicy::new(cache_dir))?;
            let series = match interval {
                Interval::Daily => client.fetch_daily(symbol, *asset_class)?,
                iv => client.fetch_intraday(symbol, *asset_class, *iv)?,
            };
            Ok(series)
        }
    }
}

/// Everything computed for one strategy over one series.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub indicators: Vec<IndicatorSeries>,
    pub signals: Vec<Signal>,
    pub strategy: Backtest,
    pub baseline: Backtest,
    pub strategy_metrics: MetricsSummary,
    pub baseline_metrics: MetricsSummary,
}

pub fn analyze(
    series: &PriceSeries,
    strategy: &StrategyConfig,
    backtest: &BacktestConfig,
    params: &MetricsParams,
) -> Result<Analysis> {
    strategy.validate()?;
    let (indicators, signals) = match *strategy {
        StrategyConfig::MaCrossover { short, long } => {
            let fast = indicators::sma(series, short)?;
            let slow = indicators::sma(series, long)?;
            let signals = signals::crossings(&fast, &slow)?
                .into_iter()
                .map(|c| c.into_signal(series, StrategyKind::MaCrossover))
                .collect();
            (vec![fast, slow], signals)
        }
        StrategyConfig::VwapCross { session } => {
            let vwap = indicators::vwap(series, session);
            let signals = signals::vwap_cross_signals(series, &vwap)?;
            (vec![vwap], signals)
        }
        StrategyConfig::BuyHold => (Vec::new(), Vec::new()),
    };

    let (strategy_bt, baseline) = crate::batch::join(
        || match strategy {
            StrategyConfig::BuyHold => engine::run_buy_and_hold(series, backtest),
            _ => engine::run_backtest(series, &signals, backtest),
        },
        || engine::run_buy_and_hold(series, backtest),
    );
    let (strategy_bt, baseline) = (strategy_bt?, baseline?);
    let (strategy_metrics, baseline_metrics) = metrics::compare(
        &strategy_bt.snapshots,
        &baseline.snapshots,
        backtest.initial_capital,
        params,
    )?;
    Ok(Analysis {
        indicators,
        signals,
        strategy: strategy_bt,
        baseline,
        strategy_metrics,
        baseline_metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFingerprint {
    pub symbol: String,
    pub asset_class: AssetClass,
    pub interval: Interval,
    pub bar_count: usize,
    pub first_timestamp: DateTime<Utc>,
    pub last_timestamp: DateTime<Utc>,
    /// SHA-256 of the series in canonical CSV form.
    pub content_hash: String,
}

impl DataFingerprint {
    pub fn of(series: &PriceSeries) -> Self {
        Self {
            symbol: series.symbol().to_string(),
            asset_class: series.asset_class(),
            interval: series.interval(),
            bar_count: series.len(),
            first_timestamp: series.first().timestamp,
            last_timestamp: series.last().timestamp,
            content_hash: content_hash(series),
        }
    }
}

fn content_hash(series: &PriceSeries) -> String {
    let mut buf = Vec::new();
    market_data::write_csv_to(series, &mut buf).expect("writing to memory cannot fail");
    Sha256::digest(&buf).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub generator: String,
    pub data: DataFingerprint,
    /// The analysed bars, so charts can be redrawn without the source file.
    pub bars: Vec<Bar>,
    pub indicators: Vec<IndicatorSeries>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub timestamp: DateTime<Utc>,
    pub side: Side,
    pub trigger_price: f64,
    pub strategy: StrategyKind,
    pub trade_index: Option<usize>,
    pub skip_reason: Option<SkipReason>,
}

impl SignalRecord {
    pub fn signal(&self) -> Signal {
        Signal {
            timestamp: self.timestamp,
            side: self.side,
            trigger_price: self.trigger_price,
            strategy: self.strategy,
        }
    }
}

/// Serialized run: top-level keys are fixed and appear in this order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub meta: ReportMeta,
    pub config: RunConfig,
    pub signals: Vec<SignalRecord>,
    pub snapshots: Vec<PortfolioSnapshot>,
    pub trades: Vec<Trade>,
    pub strategy_metrics: MetricsSummary,
    pub baseline_metrics: MetricsSummary,
}

impl BacktestReport {
    pub fn from_analysis(config: RunConfig, series: &PriceSeries, analysis: Analysis) -> Self {
        let signals = analysis
            .signals
            .iter()
            .zip(
                analysis
                    .strategy
                    .outcomes
                    .iter()
                    .chain(std::iter::repeat(&engine::SignalOutcome {
                        trade_index: None,
                        skip_reason: None,
                    })),
            )
            .map(|(s, o)| SignalRecord {
                timestamp: s.timestamp,
                side: s.side,
                trigger_price: s.trigger_price,
                strategy: s.strategy,
                trade_index: o.trade_index,
                skip_reason: o.skip_reason,
            })
            .collect();
        Self {
            meta: ReportMeta {
                generator: concat!("tradepipe ", env!("CARGO_PKG_VERSION")).to_string(),
                data: DataFingerprint::of(series),
                bars: series.bars().to_vec(),
                indicators: analysis.indicators,
            },
            config,
            signals,
            snapshots: analysis.strategy.snapshots,
            trades: analysis.strategy.trades,
            strategy_metrics: analysis.strategy_metrics,
            baseline_metrics: analysis.baseline_metrics,
        }
    }

    /// Rebuilds the analysed series from the embedded bars.
    pub fn series(&self) -> Result<PriceSeries> {
        let d = &self.meta.data;
        Ok(PriceSeries::new(
            d.symbol.clone(),
            d.asset_class,
            d.interval,
            self.meta.bars.clone(),
        )?)
    }

    /// Checks that every embedded series matches the data fingerprint.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Report(m));
        let series = self.series()?;
        let fp = DataFingerprint::of(&series);
        if fp != self.meta.data {
            return bad("embedded bars do not match the data fingerprint".into());
        }
        let n = series.len();
        if self.snapshots.len() != n
            || self
                .snapshots
                .iter()
                .zip(series.bars())
                .any(|(s, b)| s.timestamp != b.timestamp)
        {
            return bad("snapshots are not aligned with the bars".into());
        }
        for ind in &self.meta.indicators {
            if !ind.is_aligned_with(&series) {
                return bad(format!("indicator {} is not aligned with the bars", ind.name()));
            }
        }
        for m in [&self.strategy_metrics, &self.baseline_metrics] {
            if m.roi_series.len() != n {
                return bad("ROI series length differs from bar count".into());
            }
        }
        for s in &self.signals {
            if series.index_of(s.timestamp).is_none() {
                return bad(format!("signal at {} is not on a bar", s.timestamp));
            }
            match s.trade_index {
                Some(i) if i >= self.trades.len() => return bad(format!("signal references missing trade {i}")),
                _ => {}
            }
        }
        let mut used: Vec<usize> = self.signals.iter().filter_map(|s| s.trade_index).collect();
        used.sort_unstable();
        if used.windows(2).any(|w| w[0] == w[1]) {
            return bad("two signals claim the same trade".into());
        }
        Ok(())
    }
}

/// Runs the pipeline on an already loaded series.
pub fn run_on_series(config: RunConfig, series: PriceSeries) -> Result<BacktestReport> {
    config.validate()?;
    let series = config.selection.apply(series)?;
    let analysis = analyze(&series, &config.strategy, &config.backtest, &config.metrics)?;
    Ok(BacktestReport::from_analysis(config, &series, analysis))
}

pub fn run(config: RunConfig) -> Result<BacktestReport> {
    config.validate()?;
    let series = load_series(&config.source)?;
    run_on_series(config, series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn series(closes: &[f64]) -> PriceSeries {
        let t0 = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap();
        let bars = closes
            .iter()
            .enumerate()
            .map(|(i, &c)| Bar {
                timestamp: t0 + chrono::Duration::days(i as i64),
                open: c,
                high: c,
                low: c,
                close: c,
                volume: 100.0 + i as f64,
            })
            .collect();
        PriceSeries::new("SYN", AssetClass::Crypto, Interval::Daily, bars).unwrap()
    }

    fn config(strategy: StrategyConfig) -> RunConfig {
        let mut c = RunConfig::with_defaults(DataSource::Csv {
            path: "SYN.csv".into(),
            asset_class: AssetClass::Crypto,
            interval: Interval::Daily,
        });
        c.strategy = strategy;
        c
    }

    fn wave() -> Vec<f64> {
        (0..40).map(|i| 100.0 + 10.0 * ((i as f64) / 4.0).sin()).collect()
    }

    #[test]
    fn defaults_follow_the_method() {
        let c = config(StrategyConfig::default());
        assert_eq!(c.strategy, StrategyConfig::MaCrossover { short: 50, long: 200 });
        assert_eq!(c.backtest.initial_capital, 10_000.0);
        assert_eq!(c.backtest.fee_rate, 0.001);
        assert_eq!(c.metrics.periods_per_year, 365.0);
    }

    #[test]
    fn buy_hold_strategy_equals_baseline() {
        let r = run_on_series(config(StrategyConfig::BuyHold), series(&wave())).unwrap();
        assert!(r.signals.is_empty());
        assert_eq!(r.strategy_metrics, r.baseline_metrics);
        r.validate().unwrap();
    }

    #[test]
    fn ma_report_is_consistent() {
        let r = run_on_series(
            config(StrategyConfig::MaCrossover { short: 3, long: 5 }),
            series(&wave()),
        )
        .unwrap();
        assert!(!r.signals.is_empty());
        assert_eq!(r.meta.indicators.len(), 2);
        assert_eq!(r.snapshots.len(), 40);
        r.validate().unwrap();
        let traded = r.signals.iter().filter(|s| s.trade_index.is_some()).count();
        assert_eq!(traded, r.trades.len());
        assert!(r
            .signals
            .iter()
            .all(|s| s.trade_index.is_some() != s.skip_reason.is_some()));
    }

    #[test]
    fn window_order_is_a_signals_error() {
        let err = run_on_series(
            config(StrategyConfig::MaCrossover { short: 200, long: 50 }),
            series(&wave()),
        )
        .unwrap_err();
        assert_eq!(err.stage(), "signals");
        assert!(err.to_string().contains("short window 200"));
    }

    #[test]
    fn missing_csv_names_stage() {
        let mut c = config(StrategyConfig::BuyHold);
        c.source = DataSource::Csv {
            path: "/nonexistent/x.csv".into(),
            asset_class: AssetClass::Crypto,
            interval: Interval::Daily,
        };
        let err = run(c).unwrap_err();
        assert_eq!(err.stage(), "data source");
        assert!(err.to_string().starts_with("[data source]"));
    }

    #[test]
    fn json_round_trip_keeps_key_order() {
        let r = run_on_series(
            config(StrategyConfig::VwapCross {
                session: SessionRule::DailyReset,
            }),
            series(&wave()),
        )
        .unwrap();
        let text = serde_json::to_string(&r).unwrap();
        let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&text)
            .unwrap()
            .keys()
            .cloned()
            .collect();
        let mut expected = vec![
            "meta",
            "config",
            "signals",
            "snapshots",
            "trades",
            "strategy_metrics",
            "baseline_metrics",
        ];
        // serde_json maps are sorted; check the raw text for order instead
        let positions: Vec<usize> = expected
            .iter()
            .map(|k| text.find(&format!("\"{k}\":")).unwrap())
            .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        expected.sort_unstable();
        assert_eq!(keys, expected);
        let back: BacktestReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn tampered_report_fails_validation() {
        let mut r = run_on_series(config(StrategyConfig::BuyHold), series(&wave())).unwrap();
        r.meta.bars[3].close *= 1.01;
        r.meta.bars[3].high = r.meta.bars[3].close;
        assert!(r.validate().is_err());
    }

    #[test]
    fn selection_applies_before_analysis() {
        let mut c = config(StrategyConfig::BuyHold);
        c.selection.fraction = Some(0.5);
        let r = run_on_series(c, series(&wave())).unwrap();
        assert_eq!(r.meta.data.bar_count, 20);
    }
}
