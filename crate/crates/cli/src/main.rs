use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tradepipe::engine::BacktestConfig;
use tradepipe::indicators::SessionRule;
use tradepipe::market_data::{write_csv, AlphaVantageClient, AssetClass, FetchPolicy, Interval, DEFAULT_API_BASE};
use tradepipe::metrics::{periods_per_year, MetricsParams, MetricsSummary};
use tradepipe::report::{
    self, read_report, render, write_outputs, BacktestReport, DataSource, PipelineError, RunConfig, Selection,
    StrategyConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "tradepipe",
    version,
    about = "Backtest SMA-crossover and VWAP-cross strategies on OHLCV data"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Download a price series (and optionally server-side VWAP) to CSV.
    Fetch(FetchArgs),
    /// Run a strategy and its buy-and-hold baseline, write the report and charts.
    Backtest(Box<BacktestArgs>),
    /// Re-render the charts of an existing report.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct ApiArgs {
    /// Query endpoint; the API key is read from ALPHAVANTAGE_API_KEY.
    #[arg(long, default_value = DEFAULT_API_BASE)]
    api_base: String,
    /// Response cache and rate-limit state.
    #[arg(long, default_value = ".tradepipe-cache")]
    cache_dir: PathBuf,
}

#[derive(Debug, Args)]
struct FetchArgs {
    #[arg(long)]
    symbol: String,
    #[arg(long, default_value = "stock")]
    asset: AssetClass,
    /// `daily` or `<n>min`.
    #[arg(long, default_value = "5min")]
    interval: Interval,
    /// Also fetch the server-computed VWAP (stocks, intraday only).
    #[arg(long)]
    vwap: bool,
    #[command(flatten)]
    api: ApiArgs,
    /// Output CSV; defaults to `<SYMBOL>_<interval>.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Ma,
    Vwap,
    Buyhold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UnitsArg {
    Whole,
    Fractional,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["csv", "symbol"]))]
struct BacktestArgs {
    /// OHLCV CSV input.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Fetch this symbol from the API instead of reading a CSV.
    #[arg(long)]
    symbol: Option<String>,
    #[command(flatten)]
    api: ApiArgs,
    #[arg(long, default_value = "crypto")]
    asset: AssetClass,
    /// `daily` or `<n>min`.
    #[arg(long, default_value = "daily")]
    interval: Interval,
    #[arg(long, value_enum, default_value = "ma")]
    strategy: StrategyArg,
    #[arg(long, default_value_t = StrategyConfig::DEFAULT_SHORT)]
    short: usize,
    #[arg(long, default_value_t = StrategyConfig::DEFAULT_LONG)]
    long: usize,
    /// VWAP session: `daily` (reset at UTC midnight) or `cumulative`.
    #[arg(long, default_value = "daily")]
    session: SessionRule,
    /// Proportional fee per transaction.
    #[arg(long, default_value_t = BacktestConfig::DEFAULT_FEE_RATE)]
    fee: f64,
    #[arg(long, default_value_t = BacktestConfig::DEFAULT_CAPITAL)]
    capital: f64,
    /// Defaults to whole for stocks, fractional for crypto.
    #[arg(long, value_enum)]
    units: Option<UnitsArg>,
    /// Annual risk-free rate for the Sharpe ratio.
    #[arg(long, default_value_t = 0.0)]
    rf: f64,
    /// Overrides the annualization derived from asset class and interval.
    #[arg(long)]
    periods_per_year: Option<f64>,
    /// Inclusive UTC date range `START..END`; either side may be empty.
    #[arg(long, value_parser = parse_window)]
    window: Option<(Option<NaiveDate>, Option<NaiveDate>)>,
    /// Keep only the trailing fraction of bars, in (0, 1].
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_window(raw: &str) -> Result<(Option<NaiveDate>, Option<NaiveDate>), String> {
    let (a, b) = raw
        .split_once("..")
        .ok_or_else(|| format!("expected START..END, got `{raw}`"))?;
    let date = |s: &str| -> Result<Option<NaiveDate>, String> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|e| format!("bad date `{s}`: {e}"))
    };
    Ok((date(a)?, date(b)?))
}

impl BacktestArgs {
    fn run_config(&self) -> RunConfig {
        let source = match (&self.csv, &self.symbol) {
            (Some(path), _) => DataSource::Csv {
                path: path.clone(),
                asset_class: self.asset,
                interval: self.interval,
            },
            (None, Some(symbol)) => DataSource::Api {
                symbol: symbol.clone(),
                asset_class: self.asset,
                interval: self.interval,
                api_base: self.api.api_base.clone(),
                cache_dir: self.api.cache_dir.clone(),
            },
            (None, None) => unreachable!("clap enforces one source"),
        };
        let mut config = RunConfig::with_defaults(source);
        config.strategy = match self.strategy {
            StrategyArg::Ma => StrategyConfig::MaCrossover {
                short: self.short,
                long: self.long,
            },
            StrategyArg::Vwap => StrategyConfig::VwapCross { session: self.session },
            StrategyArg::Buyhold => StrategyConfig::BuyHold,
        };
        config.backtest.initial_capital = self.capital;
        config.backtest.fee_rate = self.fee;
        if let Some(units) = self.units {
            config.backtest.fractional_units = units == UnitsArg::Fractional;
        }
        config.metrics = MetricsParams {
            risk_free_rate: self.rf,
            periods_per_year: self
                .periods_per_year
                .unwrap_or_else(|| periods_per_year(self.asset, self.interval)),
        };
        config.selection = Selection {
            start: self.window.and_then(|w| w.0),
            end: self.window.and_then(|w| w.1),
            fraction: self.fraction,
        };
        config
    }
}

fn fetch(args: &FetchArgs) -> Result<(), PipelineError> {
    let client = AlphaVantageClient::from_env(Some(args.api.api_base.clone()), FetchPolicy::new(&args.api.cache_dir))?;
    let series = match args.interval {
        Interval::Daily => client.fetch_daily(&args.symbol, args.asset)?,
        iv => client.fetch_intraday(&args.symbol, args.asset, iv)?,
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}_{}.csv", series.symbol(), series.interval())));
    write_csv(&series, &out)?;
    println!("{} bars -> {}", series.len(), out.display());

    if args.vwap {
        let vwap = client.fetch_vwap_stock(&args.symbol, args.asset, args.interval)?;
        let path = out.with_file_name(format!(
            "{}_vwap.csv",
            out.file_stem().unwrap_or_default().to_string_lossy()
        ));
        vwap.write_csv(&path).map_err(|e| PipelineError::UnwritableOutput {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        println!("{} VWAP points -> {}", vwap.len(), path.display());
    }
    Ok(())
}

fn print_summary(label: &str, m: &MetricsSummary) {
    let sharpe = m.sharpe.map_or_else(|| "n/a".to_string(), |s| format!("{s:.4}"));
    println!(
        "{label:<14} final {:>14.2}  gross ROI {:>9.2}%  Sharpe {sharpe}",
        m.final_total,
        m.gross_roi * 100.0
    );
}

fn write_all(report: &BacktestReport, out: &Path) -> Result<(), PipelineError> {
    let mut written = write_outputs(report, out)?;
    written.extend(render(report, out)?);
    for p in &written {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn backtest(args: &BacktestArgs) -> Result<(), PipelineError> {
    let report = report::run(args.run_config())?;
    write_all(&report, &args.out)?;
    let traded = report.trades.len();
    println!(
        "{} bars, {} signals, {} trades -> {}",
        report.meta.data.bar_count,
        report.signals.len(),
        traded,
        args.out.display()
    );
    print_summary("strategy", &report.strategy_metrics);
    print_summary("buy and hold", &report.baseline_metrics);
    Ok(())
}

fn rerender(args: &ReportArgs) -> Result<(), PipelineError> {
    let report = read_report(&args.input)?;
    let written = render(&report, &args.out)?;
    println!("{} charts -> {}", written.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fetch(a) => fetch(a),
        Command::Backtest(a) => backtest(a),
        Command::Report(a) => rerender(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn window_parsing() {
        let d = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        assert_eq!(
            parse_window("2021-01-01..2021-02-01").unwrap(),
            (Some(d("2021-01-01")), Some(d("2021-02-01")))
        );
        assert_eq!(parse_window("..2021-02-01").unwrap(), (None, Some(d("2021-02-01"))));
        assert_eq!(parse_window("2021-01-01..").unwrap(), (Some(d("2021-01-01")), None));
        assert!(parse_window("2021-01-01").is_err());
        assert!(parse_window("x..y").is_err());
    }

    #[test]
    fn backtest_defaults() {
        let cli = Cli::parse_from(["tradepipe", "backtest", "--csv", "x.csv"]);
        let Command::Backtest(args) = cli.command else { panic!() };
        let c = args.run_config();
        assert_eq!(c.strategy, StrategyConfig::MaCrossover { short: 50, long: 200 });
        assert_eq!(c.backtest.fee_rate, 0.001);
        assert_eq!(c.backtest.initial_capital, 10_000.0);
        assert!(c.backtest.fractional_units);
        assert_eq!(c.metrics.periods_per_year, 365.0);
    }

    #[test]
    fn stock_defaults_to_whole_units() {
        let cli = Cli::parse_from([
            "tradepipe",
            "backtest",
            "--csv",
            "x.csv",
            "--asset",
            "stock",
            "--interval",
            "5min",
        ]);
        let Command::Backtest(args) = cli.command else { panic!() };
        let c = args.run_config();
        assert!(!c.backtest.fractional_units);
        assert_eq!(c.metrics.periods_per_year, 252.0 * 78.0);
    }

    #[test]
    fn fetch_defaults_to_five_minutes() {
        let cli = Cli::parse_from(["tradepipe", "fetch", "--symbol", "TSLA"]);
        let Command::Fetch(args) = cli.command else { panic!() };
        assert_eq!(args.interval, Interval::FIVE_MIN);
        assert_eq!(args.api.api_base, DEFAULT_API_BASE);
    }
}
